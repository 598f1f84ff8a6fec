"""Bivariate copula families.

Every family is implemented for rotation 0 by a handful of vectorised
kernels (log-density, conditional distribution ``C(u|v)`` and its inverse,
CDF where closed-form); rotations are applied on top by reflecting the
arguments.  The families covered are independence, Gaussian, Student t,
Clayton, Gumbel, Frank and Joe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize, special

from .errors import DataError, DomainError, NumericError, ParameterError

EPS = 1e-10


class Family(str, Enum):
    INDEP = "indep"
    GAUSSIAN = "gaussian"
    T = "t"
    CLAYTON = "clayton"
    GUMBEL = "gumbel"
    FRANK = "frank"
    JOE = "joe"

    def __str__(self) -> str:
        return self.value


ALL_FAMILIES = (Family.GAUSSIAN, Family.T, Family.CLAYTON, Family.GUMBEL,
                Family.FRANK, Family.JOE)
ASYMMETRIC = frozenset({Family.CLAYTON, Family.GUMBEL, Family.JOE})
NPARS = {Family.INDEP: 0, Family.GAUSSIAN: 1, Family.T: 2, Family.CLAYTON: 1,
         Family.GUMBEL: 1, Family.FRANK: 1, Family.JOE: 1}

# search boxes used by the MLE; the admissible domain is checked separately
RHO_MAX = 0.999
DF_BOUNDS = (2.05, 30.0)
FIT_BOUNDS = {
    Family.GAUSSIAN: (-RHO_MAX, RHO_MAX),
    Family.CLAYTON: (1e-4, 50.0),
    Family.GUMBEL: (1.0, 50.0),
    Family.FRANK: (1e-4, 80.0),   # mirrored for negative dependence
    Family.JOE: (1.0, 50.0),
}


def parse_family(value) -> Family:
    if isinstance(value, Family):
        return value
    aliases = {"independence": "indep", "student_t": "t", "student": "t",
               "gauss": "gaussian", "normal": "gaussian"}
    key = str(value).strip().lower()
    try:
        return Family(aliases.get(key, key))
    except ValueError:
        raise ValueError(f"unknown copula family {value!r}") from None


def _clamp(x):
    return np.clip(np.asarray(x, dtype=float), EPS, 1.0 - EPS)


# ---------------------------------------------------------------------------
# per-family kernels (rotation 0).  h2(u, v) = dC/dv = C(u | v).
# ---------------------------------------------------------------------------

def _gauss_logpdf(u, v, par):
    rho = par[0]
    x, y = special.ndtri(u), special.ndtri(v)
    r2 = 1.0 - rho * rho
    return -0.5 * np.log(r2) - (rho * rho * (x * x + y * y) - 2 * rho * x * y) / (2 * r2)


def _gauss_h2(u, v, par):
    rho = par[0]
    x, y = special.ndtri(u), special.ndtri(v)
    return special.ndtr((x - rho * y) / math.sqrt(1.0 - rho * rho))


def _gauss_hinv2(p, v, par):
    rho = par[0]
    y = special.ndtri(v)
    return special.ndtr(special.ndtri(p) * math.sqrt(1.0 - rho * rho) + rho * y)


def _h2_integral(h2, u, v, par):
    """C(u, v) as the integral of C(u | s) over s in (0, v).

    Deterministic and accurate to ~1e-12, unlike the sampling-based
    multivariate CDFs; only used for the CDF itself, never in fitting.
    """
    u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    out = np.empty(u.shape)
    for idx in np.ndindex(u.shape):
        ui = u[idx]
        val, _ = integrate.quad(lambda s: float(h2(ui, s, par)), 0.0, v[idx],
                                epsabs=1e-14, epsrel=1e-12, limit=200)
        out[idx] = min(max(val, 0.0), min(ui, v[idx]))
    return out if out.ndim else float(out)


def _gauss_cdf(u, v, par):
    return _h2_integral(_gauss_h2, u, v, par)


def _t_quantile(nu: float, u):
    """Student t quantile via the inverse regularised beta function (faster than stdtrit)."""
    u = np.asarray(u, dtype=float)
    z = special.betaincinv(nu / 2, 0.5, 2 * np.minimum(u, 1 - u))
    x = np.sqrt(nu * (1 / z - 1))
    return np.where(u < 0.5, -x, x)


@lru_cache(maxsize=256)
def _t_const(nu: float) -> float:
    return (math.lgamma((nu + 2) / 2) + math.lgamma(nu / 2)
            - 2 * math.lgamma((nu + 1) / 2))


def _t_logpdf(u, v, par, x=None, y=None):
    rho, nu = par
    if x is None:
        x = _t_quantile(nu, u)
    if y is None:
        y = _t_quantile(nu, v)
    r2 = 1.0 - rho * rho
    q = (x * x + y * y - 2 * rho * x * y) / r2
    return (_t_const(nu) - 0.5 * math.log(r2) - (nu + 2) / 2 * np.log1p(q / nu)
            + (nu + 1) / 2 * (np.log1p(x * x / nu) + np.log1p(y * y / nu)))


def _t_h2(u, v, par):
    rho, nu = par
    x, y = _t_quantile(nu, u), _t_quantile(nu, v)
    scale = np.sqrt((nu + y * y) * (1.0 - rho * rho) / (nu + 1))
    return special.stdtr(nu + 1, (x - rho * y) / scale)


def _t_hinv2(p, v, par):
    rho, nu = par
    y = _t_quantile(nu, v)
    scale = np.sqrt((nu + y * y) * (1.0 - rho * rho) / (nu + 1))
    return special.stdtr(nu, _t_quantile(nu + 1, p) * scale + rho * y)


def _t_cdf(u, v, par):
    return _h2_integral(_t_h2, u, v, par)


def _log_sum_minus_one(a, b):
    """log(exp(a) + exp(b) - 1) for a, b >= 0 without overflow."""
    m = np.maximum(a, b)
    return m + np.log(np.exp(a - m) + np.exp(b - m) - np.exp(-m))


def _clayton_logpdf(u, v, par):
    th = par[0]
    lu, lv = np.log(u), np.log(v)
    s = _log_sum_minus_one(-th * lu, -th * lv)
    return math.log1p(th) - (1 + th) * (lu + lv) - (1 / th + 2) * s


def _clayton_h2(u, v, par):
    th = par[0]
    lu, lv = np.log(u), np.log(v)
    s = _log_sum_minus_one(-th * lu, -th * lv)
    return np.exp((-th - 1) * lv - (1 / th + 1) * s)


def _clayton_hinv2(p, v, par):
    th = par[0]
    lv = np.log(v)
    a = -th / (th + 1) * np.log(p) - th * lv   # log((p v^(th+1))^(-th/(th+1)))
    b = -th * lv                               # log(v^-th), 0 <= b <= a
    # log(e^a - e^b + 1) = a + log1p(-e^(b-a) + e^-a)
    logt = a + np.log1p(np.exp(-a) - np.exp(b - a))
    return np.exp(-logt / th)


def _clayton_cdf(u, v, par):
    th = par[0]
    return np.exp(-_log_sum_minus_one(-th * np.log(u), -th * np.log(v)) / th)


def _gumbel_parts(u, v, th):
    x, y = -np.log(u), -np.log(v)
    lx, ly = np.log(x), np.log(y)
    ls = np.logaddexp(th * lx, th * ly)
    return x, y, lx, ly, ls


def _gumbel_logpdf(u, v, par):
    th = par[0]
    x, y, lx, ly, ls = _gumbel_parts(u, v, th)
    a = np.exp(ls / th)
    return (-a + x + y + (th - 1) * (lx + ly) + (2 / th - 2) * ls
            + np.log1p((th - 1) / a))


def _gumbel_h2(u, v, par):
    th = par[0]
    x, y, lx, ly, ls = _gumbel_parts(u, v, th)
    return np.exp(-np.exp(ls / th) + y + (th - 1) * ly + (1 / th - 1) * ls)


def _gumbel_cdf(u, v, par):
    th = par[0]
    _, _, _, _, ls = _gumbel_parts(u, v, th)
    return np.exp(-np.exp(ls / th))


def _frank_small(th):
    return abs(th) < 1e-10


def _frank_log_denominator(u, v, th):
    """log of (1 - e^-th) - (1 - e^-th*u)(1 - e^-th*v) for th > 0, cancellation free."""
    return np.log(np.exp(-th * u) * -np.expm1(-th * (1 - u))
                  + np.exp(-th * v) * -np.expm1(-th * u))


# Frank with a negative parameter is the positive one with v reflected:
# C_{-th}(u, v) = u - C_th(u, 1 - v).

def _frank_logpdf(u, v, par):
    th = par[0]
    if _frank_small(th):
        return np.zeros(np.broadcast(u, v).shape)
    if th < 0:
        th, v = -th, 1 - v
    return (math.log(th * -math.expm1(-th)) - th * (u + v)
            - 2 * _frank_log_denominator(u, v, th))


def _frank_h2(u, v, par):
    th = par[0]
    if _frank_small(th):
        return np.broadcast_to(u, np.broadcast(u, v).shape).astype(float)
    if th < 0:
        th, v = -th, 1 - v
    return np.exp(-th * v + np.log(-np.expm1(-th * u)) - _frank_log_denominator(u, v, th))


def _frank_hinv2(p, v, par):
    th = par[0]
    if _frank_small(th):
        return np.broadcast_to(p, np.broadcast(p, v).shape).astype(float)
    if th < 0:
        th, v = -th, 1 - v
    # 1 + a = (e^{-th v}(1-p) + p e^{-th}) / (e^{-th v}(1-p) + p), in logs
    lq, lp = np.log1p(-p), np.log(p)
    log1pa = np.logaddexp(-th * v + lq, lp - th) - np.logaddexp(-th * v + lq, lp)
    return _clamp(-log1pa / th)


def _frank_cdf(u, v, par):
    th = par[0]
    if _frank_small(th):
        return u * v
    if th < 0:
        return u - _frank_cdf(u, 1 - v, (-th,))

    def lower(a, b):
        return -np.log1p(np.expm1(-th * a) * np.expm1(-th * b) / math.expm1(-th)) / th

    # radial symmetry keeps the log1p argument away from -1 near (1, 1)
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    upper = u + v > 1
    out = np.where(upper, u + v - 1 + lower(1 - u, 1 - v), lower(u, v))
    return out if out.ndim else float(out)


def _joe_parts(u, v, th):
    lu, lv = np.log1p(-u), np.log1p(-v)
    a, b = np.exp(th * lu), np.exp(th * lv)
    s = a + b - a * b
    return lu, lv, a, b, s


def _joe_logpdf(u, v, par):
    th = par[0]
    lu, lv, a, b, s = _joe_parts(u, v, th)
    return (1 / th - 2) * np.log(s) + (th - 1) * (lu + lv) + np.log(th - 1 + s)


def _joe_h2(u, v, par):
    th = par[0]
    lu, lv, a, b, s = _joe_parts(u, v, th)
    return np.exp((1 / th - 1) * np.log(s) + (th - 1) * lv) * (1 - a)


def _joe_cdf(u, v, par):
    th = par[0]
    *_, s = _joe_parts(u, v, th)
    return 1 - s ** (1 / th)


# ---------------------------------------------------------------------------
# Kendall's tau <-> parameter
# ---------------------------------------------------------------------------

def debye1(x: float) -> float:
    """First Debye function D1(x) = x^-1 * int_0^x t / (e^t - 1) dt."""
    if x == 0:
        return 1.0
    if x < 0:
        return debye1(-x) - x / 2
    if x < 0.1:
        # Bernoulli series, truncation error far below 1e-12 on this range
        x2 = x * x
        return 1 - x / 4 + x2 / 36 - x2 * x2 / 3600 + x2 ** 3 / 211680 - x2 ** 4 / 10886400
    # t e^-t / (1 - e^-t) == t / (e^t - 1) without overflow
    val, _ = integrate.quad(lambda t: -t * math.exp(-t) / math.expm1(-t) if t > 0 else 1.0,
                            0.0, x, epsabs=1e-14, epsrel=1e-13, limit=200)
    return val / x


def _frank_tau(th: float) -> float:
    if _frank_small(th):
        return 0.0
    return 1 - 4 / th * (1 - debye1(th))


def _joe_tau(th: float) -> float:
    if th == 1.0:
        return 0.0
    if abs(th - 2.0) < 1e-4:
        def integrand(t):
            return t * math.log(t) * (1 - t) ** (2 * (1 - th) / th) if 0 < t < 1 else 0.0
        val, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-14, limit=200)
        return 1 + 4 / th ** 2 * val
    return 1 + 2 / (2 - th) * (special.digamma(2.0) - special.digamma(2 / th + 1))


def par_to_tau(family, par: Sequence[float], rotation: int = 0) -> float:
    """Kendall's tau implied by a (possibly rotated) family and parameters."""
    family = parse_family(family)
    if family is Family.INDEP:
        return 0.0
    if family in (Family.GAUSSIAN, Family.T):
        tau = 2 / math.pi * math.asin(par[0])
    elif family is Family.CLAYTON:
        tau = par[0] / (par[0] + 2)
    elif family is Family.GUMBEL:
        tau = 1 - 1 / par[0]
    elif family is Family.FRANK:
        tau = _frank_tau(par[0])
    else:
        tau = _joe_tau(par[0])
    return -tau if rotation in (90, 270) else tau


def _invert_monotone(fun: Callable[[float], float], target: float, lo: float, hi: float) -> float:
    return optimize.brentq(lambda x: fun(x) - target, lo, hi, xtol=1e-14, rtol=1e-15,
                           maxiter=500)


def tau_to_par(family, tau: float, rotation: int = 0) -> float:
    """First copula parameter matching Kendall's tau.

    For the Student t copula only the association parameter is returned.
    Rotations by 90/270 degrees expect a negative ``tau``.
    """
    family = parse_family(family)
    tau = float(tau)
    if not -1 < tau < 1:
        raise DomainError(f"tau must lie in (-1, 1), got {tau}")
    if family is Family.INDEP:
        return 0.0
    if family in (Family.GAUSSIAN, Family.T):
        return math.sin(math.pi * tau / 2)
    if family is Family.FRANK:
        if tau == 0:
            return 0.0
        sign = 1.0 if tau > 0 else -1.0
        return sign * _invert_monotone(_frank_tau, abs(tau), 1e-12, 1e3)
    if rotation in (90, 270):
        tau = -tau
    if tau <= 0:
        raise DomainError(f"{family.value} copula at rotation {rotation} cannot attain tau={tau if rotation in (0, 180) else -tau}")
    if family is Family.CLAYTON:
        return 2 * tau / (1 - tau)
    if family is Family.GUMBEL:
        return 1 / (1 - tau)
    return _invert_monotone(_joe_tau, tau, 1.0, 1e3)


def tau_param_convert(family, direction: str, value: float, rotation: int = 0) -> float:
    if direction == "tau_to_param":
        return tau_to_par(family, value, rotation)
    if direction == "param_to_tau":
        family = parse_family(family)
        par = (value, 4.0) if family is Family.T else (value,)
        return par_to_tau(family, par, rotation)
    raise ValueError(f"unknown direction {direction!r}")


# ---------------------------------------------------------------------------
# the copula object
# ---------------------------------------------------------------------------

_LOGPDF = {Family.GAUSSIAN: _gauss_logpdf, Family.T: _t_logpdf,
           Family.CLAYTON: _clayton_logpdf, Family.GUMBEL: _gumbel_logpdf,
           Family.FRANK: _frank_logpdf, Family.JOE: _joe_logpdf}
_H2 = {Family.GAUSSIAN: _gauss_h2, Family.T: _t_h2, Family.CLAYTON: _clayton_h2,
       Family.GUMBEL: _gumbel_h2, Family.FRANK: _frank_h2, Family.JOE: _joe_h2}
_HINV2 = {Family.GAUSSIAN: _gauss_hinv2, Family.T: _t_hinv2,
          Family.CLAYTON: _clayton_hinv2, Family.FRANK: _frank_hinv2}
_CDF = {Family.GAUSSIAN: _gauss_cdf, Family.T: _t_cdf, Family.CLAYTON: _clayton_cdf,
        Family.GUMBEL: _gumbel_cdf, Family.FRANK: _frank_cdf, Family.JOE: _joe_cdf}


def check_params(family: Family, params: Sequence[float]) -> None:
    if len(params) != NPARS[family]:
        raise ParameterError(f"{family.value} copula takes {NPARS[family]} parameter(s), "
                             f"got {len(params)}")
    if any(not math.isfinite(p) for p in params):
        raise ParameterError(f"non-finite parameter for {family.value}: {params}")
    if family in (Family.GAUSSIAN, Family.T) and not -1 < params[0] < 1:
        raise ParameterError(f"correlation must lie in (-1, 1), got {params[0]}")
    if family is Family.T and not params[1] > 2:
        raise ParameterError(f"degrees of freedom must exceed 2, got {params[1]}")
    if family is Family.CLAYTON and not params[0] > 0:
        raise ParameterError(f"clayton parameter must be positive, got {params[0]}")
    if family in (Family.GUMBEL, Family.JOE) and not params[0] >= 1:
        raise ParameterError(f"{family.value} parameter must be >= 1, got {params[0]}")


@dataclass(frozen=True)
class BivariateCopula:
    """A parametric pair-copula: family, rotation in degrees and parameters."""

    family: Family = Family.INDEP
    rotation: int = 0
    params: tuple = ()
    fitted_tau: float | None = field(default=None, compare=False)

    def __post_init__(self):
        fam = parse_family(self.family)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        rot = int(self.rotation)
        if rot not in (0, 90, 180, 270):
            raise ParameterError(f"rotation must be 0, 90, 180 or 270, got {rot}")
        if fam not in ASYMMETRIC:
            if rot in (90, 270):
                raise ParameterError(f"{fam.value} copula does not take rotation {rot}")
            rot = 0     # gaussian/t/frank are radially symmetric
        object.__setattr__(self, "rotation", rot)
        check_params(fam, self.params)

    @property
    def npars(self) -> int:
        return NPARS[self.family]

    @property
    def tau(self) -> float:
        return par_to_tau(self.family, self.params, self.rotation)

    def transposed(self) -> "BivariateCopula":
        """The copula of (V, U); swaps 90 and 270 degree rotations."""
        rot = {90: 270, 270: 90}.get(self.rotation, self.rotation)
        return replace(self, rotation=rot)

    def __str__(self) -> str:
        pars = ", ".join(f"{p:.4g}" for p in self.params)
        rot = f" rot{self.rotation}" if self.rotation else ""
        return f"{self.family.value}{rot}({pars})"

    # ------------------------------------------------------------------
    def logpdf(self, u, v):
        u, v = _clamp(u), _clamp(v)
        fam, rot, par = self.family, self.rotation, self.params
        if fam is Family.INDEP:
            return np.zeros(np.broadcast(u, v).shape)
        f = _LOGPDF[fam]
        if rot == 0:
            return f(u, v, par)
        if rot == 90:
            return f(1 - u, v, par)
        if rot == 180:
            return f(1 - u, 1 - v, par)
        return f(u, 1 - v, par)

    def pdf(self, u, v):
        return np.exp(self.logpdf(u, v))

    def cdf(self, u, v):
        u, v = _clamp(u), _clamp(v)
        fam, rot, par = self.family, self.rotation, self.params
        if fam is Family.INDEP:
            return u * v
        f = _CDF[fam]
        if rot == 0:
            return f(u, v, par)
        if rot == 90:
            return v - f(1 - u, v, par)
        if rot == 180:
            return u + v - 1 + f(1 - u, 1 - v, par)
        return u - f(u, 1 - v, par)

    def _h2base(self, u, v):
        return np.clip(_H2[self.family](u, v, self.params), 0.0, 1.0)

    def _hinv2base(self, p, v):
        fam = self.family
        if fam in _HINV2:
            out = _HINV2[fam](p, v, self.params)
        else:
            out = _bracketed_inverse(self, p, v)
        return _clamp(out)

    def hfunc(self, u, v, conditioned_on: str = "second"):
        """Conditional distribution of one argument given the other.

        ``conditioned_on="second"`` gives C(u | v) = dC/dv;
        ``conditioned_on="first"`` gives C(v | u) = dC/du.
        """
        u, v = _clamp(u), _clamp(v)
        if self.family is Family.INDEP:
            out = u if conditioned_on == "second" else v
            return np.broadcast_to(out, np.broadcast(u, v).shape).copy()
        h, rot = self._h2base, self.rotation
        if conditioned_on == "second":
            if rot == 0:
                return h(u, v)
            if rot == 90:
                return 1 - h(1 - u, v)
            if rot == 180:
                return 1 - h(1 - u, 1 - v)
            return h(u, 1 - v)
        if conditioned_on != "first":
            raise ValueError("conditioned_on must be 'first' or 'second'")
        if rot == 0:
            return h(v, u)
        if rot == 90:
            return h(v, 1 - u)
        if rot == 180:
            return 1 - h(1 - v, 1 - u)
        return 1 - h(1 - v, u)

    def hinv(self, p, v, conditioned_on: str = "second"):
        """Inverse of :meth:`hfunc` in the conditioned argument.

        With ``conditioned_on="second"`` solves C(u | v) = p for u; with
        ``"first"`` solves C(w | v) = p for w where ``v`` is the first argument.
        """
        p, v = _clamp(p), _clamp(v)
        if self.family is Family.INDEP:
            return np.broadcast_to(p, np.broadcast(p, v).shape).copy()
        g, rot = self._hinv2base, self.rotation
        if conditioned_on == "second":
            if rot == 0:
                return g(p, v)
            if rot == 90:
                return 1 - g(1 - p, v)
            if rot == 180:
                return 1 - g(1 - p, 1 - v)
            return g(p, 1 - v)
        if conditioned_on != "first":
            raise ValueError("conditioned_on must be 'first' or 'second'")
        if rot == 0:
            return g(p, v)
        if rot == 90:
            return g(p, 1 - v)
        if rot == 180:
            return 1 - g(1 - p, 1 - v)
        return 1 - g(1 - p, v)

    def loglik(self, u, v) -> float:
        return float(np.sum(self.logpdf(u, v)))


INDEPENDENCE = BivariateCopula()


def _bracketed_inverse(cop: BivariateCopula, p, v, maxiter: int = 200):
    """Solve C(u | v) = p on [EPS, 1-EPS] for an unrotated family.

    Newton steps on the density are accepted while they stay inside the
    current bracket; otherwise the bracket is bisected.
    """
    p, v = np.broadcast_arrays(np.asarray(p, float), np.asarray(v, float))
    shape = p.shape
    p, v = p.ravel().copy(), v.ravel().copy()
    h, logc = _H2[cop.family], _LOGPDF[cop.family]
    par = cop.params
    lo = np.full(p.shape, EPS)
    hi = np.full(p.shape, 1.0 - EPS)
    x = np.full(p.shape, 0.5)
    active = np.ones(p.shape, dtype=bool)
    for _ in range(maxiter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        xi, vi, pi = x[idx], v[idx], p[idx]
        f = h(xi, vi, par) - pi
        neg = f < 0
        lo[idx] = np.where(neg, xi, lo[idx])
        hi[idx] = np.where(neg, hi[idx], xi)
        dens = np.exp(logc(xi, vi, par))
        with np.errstate(divide="ignore", invalid="ignore"):
            step = xi - f / dens
        l, u = lo[idx], hi[idx]
        ok = np.isfinite(step) & (step > l) & (step < u)
        new = np.where(ok, step, 0.5 * (l + u))
        done = (np.abs(f) < 1e-14) | (u - l < 1e-15) | (np.abs(new - xi) < 1e-15)
        x[idx] = np.where(done, xi, new)
        active[idx[done]] = False
    if active.any():
        raise NumericError(f"h-function inversion for {cop} did not converge")
    return x.reshape(shape)


# ---------------------------------------------------------------------------
# independence test, maximum likelihood, AIC selection
# ---------------------------------------------------------------------------

def independence_test(u, v, tau: float | None = None) -> float:
    """Two-sided p-value of the asymptotic Kendall's tau independence test."""
    from .dependence import kendall_tau

    n = len(u)
    if n < 10:
        raise DataError(f"independence test needs at least 10 observations, got {n}")
    if tau is None:
        tau = kendall_tau(u, v)
    z = tau * math.sqrt(9.0 * n * (n - 1) / (2.0 * (2 * n + 5)))
    return float(2 * special.ndtr(-abs(z)))


@dataclass(frozen=True)
class FitResult:
    copula: BivariateCopula
    loglik: float
    at_boundary: bool = False

    @property
    def npars(self) -> int:
        return self.copula.npars

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.npars


def _near(x, bound, width):
    return abs(x - bound) <= 1e-6 * max(width, 1.0)


def _brent(negll, lo, hi, xatol=1e-8):
    res = optimize.minimize_scalar(negll, bounds=(lo, hi), method="bounded",
                                   options={"xatol": xatol, "maxiter": 500})
    return float(res.x), float(res.fun)


def fit_mle(family, rotation: int, u, v, tau: float | None = None) -> FitResult:
    """Maximum-likelihood fit of one family at a fixed rotation.

    The Gaussian correlation solves the cubic score equation exactly, other
    one-parameter families use a bounded Brent search and the t copula a
    profile likelihood over the degrees of freedom.
    """
    from .dependence import kendall_tau

    family = parse_family(family)
    u, v = _clamp(u), _clamp(v)
    if len(u) < 10:
        raise DataError(f"fitting needs at least 10 observations, got {len(u)}")
    if family is Family.INDEP:
        return FitResult(INDEPENDENCE, 0.0)
    if tau is None:
        tau = kendall_tau(u, v)
    rot = rotation if family in ASYMMETRIC else 0

    if family is Family.T:
        return _fit_t(u, v, tau)
    if family is Family.GAUSSIAN:
        return _fit_gauss(u, v, tau)

    if family is Family.FRANK:
        lo, hi = FIT_BOUNDS[Family.FRANK]
        if tau < 0:
            lo, hi = -hi, -lo
    else:
        lo, hi = FIT_BOUNDS[family]
        # reflect data once instead of rotating inside every likelihood call
        if rot == 90:
            u = 1 - u
        elif rot == 180:
            u, v = 1 - u, 1 - v
        elif rot == 270:
            v = 1 - v
    kernel = _LOGPDF[family]

    def negll(th):
        val = -np.sum(kernel(u, v, (th,)))
        return val if np.isfinite(val) else 1e300

    th, nll = _brent(negll, lo, hi)
    cop = BivariateCopula(family, rot, (th,), fitted_tau=tau)
    boundary = _near(th, lo, hi - lo) or _near(th, hi, hi - lo)
    return FitResult(cop, -nll, boundary)


def _fit_gauss(u, v, tau: float) -> FitResult:
    x, y = special.ndtri(u), special.ndtri(v)
    n, sxy, ss = float(len(x)), float(x @ y), float(x @ x + y @ y)
    lo, hi = FIT_BOUNDS[Family.GAUSSIAN]

    def loglik(r):
        r2 = 1.0 - r * r
        return -0.5 * n * math.log(r2) - (r * r * ss - 2 * r * sxy) / (2 * r2)

    # stationary points: -n r^3 + sxy r^2 + (n - ss) r + sxy = 0
    roots = np.roots([-n, sxy, n - ss, sxy])
    cands = [float(np.clip(r.real, lo, hi)) for r in roots if abs(r.imag) < 1e-9]
    cands += [lo, hi]
    rho = max(cands, key=loglik)
    cop = BivariateCopula(Family.GAUSSIAN, 0, (rho,), fitted_tau=tau)
    return FitResult(cop, loglik(rho), _near(rho, lo, hi - lo) or _near(rho, hi, hi - lo))


def _fit_t(u, v, tau: float) -> FitResult:
    """Profile likelihood: Brent over 1/df, inner Brent over the correlation.

    Quantiles depend only on the degrees of freedom, so each outer step
    costs one pair of quantile evaluations.  The profile is close to
    quadratic in 1/df, which keeps the outer search short.
    """
    lo_r, hi_r = -RHO_MAX, RHO_MAX
    lo_n, hi_n = DF_BOUNDS
    inner = {}

    def profile(w):
        n = 1.0 / w
        x, y = _t_quantile(n, u), _t_quantile(n, v)

        def negll(r):
            val = -np.sum(_t_logpdf(u, v, (r, n), x, y))
            return val if np.isfinite(val) else 1e300

        inner[w] = _brent(negll, lo_r, hi_r)
        return inner[w][1]

    w, nll = _brent(profile, 1.0 / hi_n, 1.0 / lo_n, xatol=1e-4)
    rho, nu = inner[w][0], 1.0 / w
    boundary = (_near(rho, lo_r, 2) or _near(rho, hi_r, 2)
                or _near(nu, lo_n, hi_n - lo_n) or _near(nu, hi_n, hi_n - lo_n))
    return FitResult(BivariateCopula(Family.T, 0, (rho, nu), fitted_tau=tau), -nll, boundary)


def candidate_models(family_set: Sequence, tau: float) -> list[tuple[Family, int]]:
    """Family/rotation pairs whose tau range contains the sign of ``tau``."""
    out = []
    for fam in family_set:
        fam = parse_family(fam)
        if fam is Family.INDEP:
            out.append((fam, 0))
        elif fam in ASYMMETRIC:
            rots = (0, 180) if tau >= 0 else (90, 270)
            out.extend((fam, r) for r in rots)
        else:
            out.append((fam, 0))
    return out


def select_family(u, v, family_set: Sequence = ALL_FAMILIES, indep_test: bool = False,
                  level: float = 0.05, tau: float | None = None) -> FitResult:
    """Fit every admissible family/rotation and keep the minimum-AIC one."""
    from .dependence import kendall_tau

    if len(family_set) == 0:
        raise ValueError("family set must not be empty")
    u, v = _clamp(u), _clamp(v)
    if tau is None:
        tau = kendall_tau(u, v)
    if indep_test and independence_test(u, v, tau) >= level:
        return FitResult(replace(INDEPENDENCE, fitted_tau=tau), 0.0)
    best = None
    for fam, rot in candidate_models(family_set, tau):
        res = fit_mle(fam, rot, u, v, tau=tau)
        if best is None or res.aic < best.aic:
            best = res
    return best

