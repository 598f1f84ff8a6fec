"""Constant-conditional-correlation (CCC) test for a conditional pair.

The conditioning support is split by a greedy depth-2 tree on empirical
quantiles of the conditioning coordinates.  Within each leaf the Pearson
correlation of the pair is computed; equality across leaves is tested with
a Wald statistic built on first differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .errors import DataError, NumericError

QUANTILES = (0.25, 0.5, 0.75)


@dataclass(frozen=True)
class CccConfig:
    """Tuning knobs of the CCC test.

    ``min_leaf=None`` means ``max(30, n / 20)``.  ``variance`` chooses the
    asymptotic variance of a within-group correlation: ``"moment"`` uses the
    fourth-moment delta method, ``"normal"`` uses ``(1 - rho^2)^2``.
    ``train_fraction > 0`` grows the partition on a random share of the
    sample and evaluates the statistic on the rest; choosing the partition
    that maximises the statistic and testing on the same data would inflate
    the size of the test.  ``train_fraction=0`` does exactly that.
    """

    min_leaf: int | None = None
    quantiles: tuple = QUANTILES
    max_depth: int = 2
    variance: str = "moment"
    train_fraction: float = 0.3
    split_seed: int = 0
    level: float = 0.05

    def __post_init__(self):
        if self.variance not in ("moment", "normal"):
            raise ValueError(f"unknown variance estimator {self.variance!r}")
        if not 0.0 <= self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in [0, 1)")
        if self.max_depth not in (0, 1, 2):
            raise ValueError("max_depth must be 0, 1 or 2")

    def leaf_size(self, n: int) -> int:
        if self.min_leaf is not None:
            return int(self.min_leaf)
        return int(max(30, np.ceil(n / 20)))


@dataclass
class Partition:
    """Disjoint groups of the sample; each box is a list of (coord, lower, upper] limits."""

    boxes: list
    groups: list

    @property
    def L(self) -> int:
        return len(self.groups)

    def assign(self, conditioning) -> list:
        """Apply the boxes to (possibly new) conditioning values."""
        z = np.asarray(conditioning, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        out = []
        for box in self.boxes:
            mask = np.ones(z.shape[0], dtype=bool)
            for coord, lo, hi in box:
                mask &= (z[:, coord] > lo) & (z[:, coord] <= hi)
            out.append(np.flatnonzero(mask))
        return out

    def describe(self) -> list:
        return [[{"coord": int(c), "lower": float(lo), "upper": float(hi)} for c, lo, hi in box]
                for box in self.boxes]


@dataclass
class CccResult:
    statistic: float
    df: int
    p_value: float
    correlations: np.ndarray
    partition: Partition
    sigma: np.ndarray = field(default=None, repr=False)

    def rejects(self, level: float = 0.05) -> bool:
        return self.p_value < level

    def to_dict(self) -> dict:
        return {
            "statistic": float(self.statistic),
            "df": int(self.df),
            "p_value": float(self.p_value),
            "correlations": [float(r) for r in self.correlations],
            "group_sizes": [int(len(g)) for g in self.partition.groups],
            "partition": self.partition.describe(),
        }


# raw power sums x^i y^j with i + j <= 4 determine every moment the
# statistic needs, so group statistics can be assembled from (cumulative) sums
_POWERS = [(i, j) for i in range(5) for j in range(5) if i + j <= 4]
_POS = {p: k for k, p in enumerate(_POWERS)}
_CENTRAL = [(2, 0), (0, 2), (1, 1), (2, 2), (3, 1), (1, 3), (4, 0), (0, 4)]


def _central_table():
    from math import comb

    # E[(x - mx)^a (y - my)^b] = sum C(a,i) C(b,j) (-mx)^(a-i) (-my)^(b-j) E[x^i y^j]
    table = []
    for c, (a, b) in enumerate(_CENTRAL):
        for i in range(a + 1):
            for j in range(b + 1):
                coef = comb(a, i) * comb(b, j) * (-1) ** (a - i + b - j)
                table.append((c, _POS[(i, j)], a - i, b - j, coef))
    return table


_CENTRAL_TABLE = _central_table()
_T_C, _T_K, _T_P, _T_Q, _T_COEF = (np.array(col) for col in zip(*_CENTRAL_TABLE))
_T_SCATTER = np.zeros((len(_CENTRAL_TABLE), len(_CENTRAL)))
_T_SCATTER[np.arange(len(_CENTRAL_TABLE)), _T_C] = _T_COEF


def _power_matrix(x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xp = np.stack([np.ones_like(x), x, x * x, x ** 3, x ** 4], axis=-1)
    yp = np.stack([np.ones_like(y), y, y * y, y ** 3, y ** 4], axis=-1)
    return np.stack([xp[..., i] * yp[..., j] for i, j in _POWERS], axis=-1)


def _stats_from_sums(sums, counts, variance):
    """Per-group correlation and delta-method variance from raw power sums.

    ``sums`` has shape (G, 15); returns arrays ``rho``, ``v`` and a validity mask.
    """
    sums = np.atleast_2d(np.asarray(sums, dtype=float))
    counts = np.asarray(counts, dtype=float).reshape(-1)
    raw = sums / counts[:, None]
    mx, my = raw[:, _POS[(1, 0)]], raw[:, _POS[(0, 1)]]
    mxp = mx[:, None] ** np.arange(5)
    myp = my[:, None] ** np.arange(5)
    cen = (raw[:, _T_K] * mxp[:, _T_P] * myp[:, _T_Q]) @ _T_SCATTER
    vx, vy, cxy = cen[:, 0], cen[:, 1], cen[:, 2]
    ok = (counts >= 4) & (vx > 1e-24) & (vy > 1e-24)
    vx_s = np.where(ok, vx, 1.0)
    vy_s = np.where(ok, vy, 1.0)
    sx, sy = np.sqrt(vx_s), np.sqrt(vy_s)
    rho = cxy / (sx * sy)
    if variance == "normal":
        v = (1.0 - rho * rho) ** 2
    else:
        m22 = cen[:, 3] / (vx_s * vy_s)
        m31 = cen[:, 4] / (vx_s * sx * sy)
        m13 = cen[:, 5] / (sx * vy_s * sy)
        m40 = cen[:, 6] / (vx_s * vx_s)
        m04 = cen[:, 7] / (vy_s * vy_s)
        v = m22 * (1 + rho * rho / 2) - rho * (m31 + m13) + rho * rho / 4 * (m40 + m04)
    ok &= np.isfinite(v) & (v > 0)
    return rho, v, ok


def _group_moments(x, y, variance):
    """Correlation and its asymptotic variance for one group (direct formulas)."""
    n = x.size
    if n < 4:
        raise NumericError(f"group of size {n} is too small")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(np.mean(xc * xc))
    sy = np.sqrt(np.mean(yc * yc))
    if not (sx > 1e-12 and sy > 1e-12):
        raise NumericError("degenerate group: zero variance")
    a, b = xc / sx, yc / sy
    rho = float(np.mean(a * b))
    if variance == "normal":
        v = (1.0 - rho * rho) ** 2
    else:
        a2, b2 = a * a, b * b
        v = (np.mean(a2 * b2) * (1 + rho * rho / 2) - rho * (np.mean(a2 * a * b) + np.mean(a * b2 * b))
             + rho * rho / 4 * (np.mean(a2 * a2) + np.mean(b2 * b2)))
    return rho, float(v)


def quadratic_form_statistic(rhos, sigma_diag, n: int) -> float:
    """n (A R)' (A S A')^{-1} (A R) with A the first-difference matrix and S diagonal."""
    rhos = np.asarray(rhos, dtype=float)
    L = rhos.size
    if L < 2:
        return 0.0
    A = np.zeros((L - 1, L))
    idx = np.arange(L - 1)
    A[idx, idx] = 1.0
    A[idx, idx + 1] = -1.0
    ar = A @ rhos
    cov = A @ np.diag(sigma_diag) @ A.T
    try:
        sol = np.linalg.solve(cov, ar)
    except np.linalg.LinAlgError as exc:
        raise NumericError("singular covariance of correlation differences") from exc
    return float(max(n * ar @ sol, 0.0))


def ccc_statistic(pair, groups, variance: str = "moment", powers=None):
    """Return ``(statistic, df, correlations, sigma_diag)`` for the given groups.

    ``powers`` optionally passes the precomputed power matrix of ``pair``.
    """
    pair = np.asarray(pair, dtype=float)
    counts = np.array([len(g) for g in groups], dtype=float)
    n = counts.sum()
    for i, c in enumerate(counts):
        if c < 4:
            raise NumericError(f"group {i + 1}: group of size {int(c)} is too small")
    if powers is None:
        powers = _power_matrix(pair[:, 0], pair[:, 1])
    sums = np.array([powers[np.asarray(g)].sum(axis=0) for g in groups])
    rhos, v, ok = _stats_from_sums(sums, counts, variance)
    for i in np.flatnonzero(~ok):
        raise NumericError(f"group {i + 1}: degenerate group (zero or non-positive variance)")
    sig = v / (counts / n)
    return quadratic_form_statistic(rhos, sig, int(n)), len(groups) - 1, rhos, sig


def weighted_dispersion_statistic(rhos, sigma_diag, n: int):
    """Closed form of the first-difference Wald statistic for diagonal Sigma.

    With independent group estimates the quadratic form does not depend on
    the contrast matrix chosen, and equals n * sum w_i (r_i - r_w)^2 with
    w_i = 1 / sigma_i and r_w the w-weighted mean.  Works along the last axis.
    """
    rhos = np.asarray(rhos, dtype=float)
    w = 1.0 / np.asarray(sigma_diag, dtype=float)
    rbar = np.sum(w * rhos, axis=-1, keepdims=True) / np.sum(w, axis=-1, keepdims=True)
    return n * np.sum(w * (rhos - rbar) ** 2, axis=-1)


def build_partition(conditioning, pair, config: CccConfig | None = None, powers=None) -> Partition:
    """Greedy depth-2 quantile tree maximising the CCC statistic.

    Thresholds are order statistics of the node's values at the configured
    quantile levels; a split sends values <= threshold left.
    """
    cfg = config or CccConfig()
    z = np.asarray(conditioning, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    pair = np.asarray(pair, dtype=float)
    n, q = z.shape
    min_leaf = cfg.leaf_size(n)
    if powers is None:
        powers = _power_matrix(pair[:, 0], pair[:, 1])
    leaves = [(np.arange(n), [], powers.sum(axis=0))]

    def best_split(pos):
        idx, box, total = leaves[pos]
        others = [lf for k, lf in enumerate(leaves) if k != pos]
        base_sums = np.array([lf[2] for lf in others]).reshape(-1, len(_POWERS))
        base_counts = np.array([lf[0].size for lf in others], dtype=float)
        cands, lefts, nls = [], [], []
        for coord in range(q):
            vals = z[idx, coord]
            order = np.argsort(vals, kind="stable")
            srt = vals[order]
            cum = None
            tried = set()
            for qq in cfg.quantiles:
                thr = srt[int(np.floor(qq * (srt.size - 1)))]
                if thr in tried:
                    continue
                tried.add(thr)
                nl = int(np.searchsorted(srt, thr, side="right"))
                if nl < min_leaf or idx.size - nl < min_leaf:
                    continue
                if cum is None:
                    cum = np.cumsum(powers[idx[order]], axis=0)
                cands.append((coord, thr))
                lefts.append(cum[nl - 1])
                nls.append(nl)
        if not cands:
            return None
        c = len(cands)
        lefts = np.array(lefts)
        nls = np.array(nls, dtype=float)
        sums = np.concatenate([np.broadcast_to(base_sums, (c,) + base_sums.shape),
                               lefts[:, None, :], (total - lefts)[:, None, :]], axis=1)
        counts = np.concatenate([np.broadcast_to(base_counts, (c, base_counts.size)),
                                 nls[:, None], (idx.size - nls)[:, None]], axis=1)
        g = counts.shape[1]
        rho, v, ok = _stats_from_sums(sums.reshape(c * g, -1), counts.reshape(-1), cfg.variance)
        rho, v, ok = rho.reshape(c, g), v.reshape(c, g), ok.reshape(c, g)
        v = np.where(ok, v, 1.0)
        stat = weighted_dispersion_statistic(rho, v / (counts / n), n)
        stat = np.where(ok.all(axis=1) & np.isfinite(stat), stat, -np.inf)
        k = int(np.argmax(stat))
        if stat[k] == -np.inf:
            return None
        return (float(stat[k]),) + cands[k]

    def apply(pos, split):
        _, coord, thr = split
        idx, box, _ = leaves[pos]
        left = z[idx, coord] <= thr
        same = [b for b in box if b[0] == coord]
        bound_lo = max((b[1] for b in same), default=-np.inf)
        bound_hi = min((b[2] for b in same), default=np.inf)
        rest = [b for b in box if b[0] != coord]
        li, ri = idx[left], idx[~left]
        leaves[pos:pos + 1] = [(li, rest + [(coord, bound_lo, thr)], powers[li].sum(axis=0)),
                               (ri, rest + [(coord, thr, bound_hi)], powers[ri].sum(axis=0))]

    if cfg.max_depth >= 1:
        split = best_split(0)
        if split is not None:
            apply(0, split)
            if cfg.max_depth >= 2:
                # second level: children in order, each seeing the current partition
                pos = 0
                for _ in range(2):
                    split = best_split(pos)
                    if split is not None:
                        apply(pos, split)
                        pos += 2
                    else:
                        pos += 1
    return Partition(boxes=[lf[1] for lf in leaves], groups=[lf[0] for lf in leaves])


def ccc_test(u1, u2, conditioning, config: CccConfig | None = None, rng=None) -> CccResult:
    """Test H0: the correlation of (u1, u2) does not vary with the conditioning values."""
    cfg = config or CccConfig()
    u1 = np.asarray(u1, dtype=float).ravel()
    u2 = np.asarray(u2, dtype=float).ravel()
    z = np.asarray(conditioning, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    n = u1.size
    if u2.size != n or z.shape[0] != n:
        raise DataError("CCC test inputs must have equal length")
    pair = np.column_stack([u1, u2])
    powers = _power_matrix(u1, u2)
    if cfg.train_fraction > 0:
        rng = np.random.default_rng(cfg.split_seed) if rng is None else rng
        perm = rng.permutation(n)
        n_train = int(round(cfg.train_fraction * n))
        tr, ev = np.sort(perm[:n_train]), np.sort(perm[n_train:])
        part_tr = build_partition(z[tr], pair[tr], cfg, powers[tr])
        groups = [ev[g] for g in part_tr.assign(z[ev])]
        if any(g.size < 4 for g in groups):
            groups = [ev]
            part_tr = Partition([[]], [tr])
        part = Partition(part_tr.boxes, groups)
    else:
        part = build_partition(z, pair, cfg, powers)
    if part.L < 2:
        return CccResult(0.0, 0, 1.0, np.array([np.corrcoef(u1, u2)[0, 1]]), part)
    stat, df, rhos, sig = ccc_statistic(pair, part.groups, cfg.variance, powers)
    return CccResult(stat, df, float(chi2.sf(stat, df)), rhos, part, sig)
