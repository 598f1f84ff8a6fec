"""Random vines, vine sampling and the Monte-Carlo method comparison."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats

from .dependence import CopulaSample
from .families import ALL_FAMILIES, ASYMMETRIC, BivariateCopula, Family, parse_family, tau_param_convert
from .selection import Alg2Cache, SelectionConfig, alg2_select, fit, normalize_method
from .structure import Edge, VineStructure

TAU_CLIP = 0.95
TIE_TOL = 1e-6


@dataclass
class VineSpec:
    """A fully parameterised vine (structure plus one copula per edge)."""

    structure: VineStructure
    copulas: dict

    @property
    def d(self) -> int:
        return self.structure.d


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def sample_structure(d: int, rng) -> VineStructure:
    """Uniform draw over the natural-order structures in dimension ``d``.

    Variables are added one at a time.  Variable ``j`` always joins the top
    tree through ``(j-1, j | 0..j-2)``; below that, each of its lower-tree
    edges attaches to one of the two nodes of the edge chosen one tree up,
    decided by a fair coin.  That gives (d-2)(d-3)/2 independent coins.
    """
    if d < 2:
        raise ValueError("d must be at least 2")
    trees = [[] for _ in range(d - 1)]
    by_constraint = {}

    def add(e):
        trees[e.tree - 1].append(e)
        by_constraint[e.constraint] = e

    add(Edge(1, (0, 1)))
    for j in range(2, d):
        chain = [None] * (j + 1)
        chain[0] = frozenset()
        chain[j] = frozenset(range(j))
        chain[j - 1] = frozenset(range(j - 1))
        for k in range(j - 2, 0, -1):
            a, b = by_constraint[chain[k + 1]].nodes
            chain[k] = a if rng.integers(2) == 0 else b
        for t in range(1, j + 1):
            partner = next(iter(chain[t] - chain[t - 1]))
            add(Edge(t, (j, partner), chain[t - 1]))
    vs = VineStructure(d, trees)
    vs.validate()
    return vs


def sample_tau(rng, size=None, positive: bool = False):
    tau = np.minimum(rng.beta(2.0, 2.0, size=size), TAU_CLIP)
    if not positive:
        sign = np.where(rng.random(size=size) < 0.5, -1.0, 1.0)
        tau = tau * sign
    return tau


def sample_df(rng, size=None):
    return 3.0 + rng.gamma(3.0, 1.0 / 3.0, size=size)


def sample_pair_copula(rng, families=ALL_FAMILIES, positive: bool = False) -> BivariateCopula:
    fams = [parse_family(f) for f in families]
    fam = fams[int(rng.integers(len(fams)))]
    if fam is Family.INDEP:
        return BivariateCopula()
    tau = float(sample_tau(rng, positive=positive))
    rot = 0
    if fam in ASYMMETRIC and tau < 0:
        rot = 90 if rng.random() < 0.5 else 270
    par = tau_param_convert(fam, "tau_to_param", tau, rot)
    if fam is Family.T:
        return BivariateCopula(fam, 0, (par, float(sample_df(rng))))
    return BivariateCopula(fam, rot, (par,))


def sample_vine_spec(d: int, rng, families=ALL_FAMILIES, positive: bool = False) -> VineSpec:
    structure = sample_structure(d, rng)
    copulas = {e: sample_pair_copula(rng, families, positive) for e in structure.edges()}
    return VineSpec(structure, copulas)


def sample_from_vine(vine, n: int, rng) -> CopulaSample:
    """Inverse Rosenblatt sampling along the columns of the structure matrix."""
    structure = vine.structure
    d = structure.d
    mat = structure.to_matrix()
    w = rng.random((n, d))
    pseudo = {}
    out = np.empty((n, d))
    for k in range(d - 1, -1, -1):
        a = int(mat[k, k])
        x = w[:, k]
        # walk from the top tree of this column down to tree 1; on entry to a
        # row x is u_{a | cond + b}, on exit u_{a | cond}
        for i in range(k + 1, d):
            b = int(mat[i, k])
            cond = frozenset(int(v) for v in mat[i + 1:, k])
            e = Edge(d - i, (a, b), cond)
            cop = vine.copulas[e]
            pseudo[(a, cond | {b})] = x
            ub = pseudo[(b, cond)]
            if a == e.conditioned[0]:
                x = cop.hinv(x, ub, "second")
            else:
                x = cop.hinv(x, ub, "first")
        pseudo[(a, frozenset())] = x
        out[:, a] = x
        # conditional values of the partners given a, for later columns
        for i in range(k + 1, d):
            b = int(mat[i, k])
            cond = frozenset(int(v) for v in mat[i + 1:, k])
            e = Edge(d - i, (a, b), cond)
            cop = vine.copulas[e]
            ua, ub = pseudo[(a, cond)], pseudo[(b, cond)]
            if a == e.conditioned[0]:
                pseudo[(b, cond | {a})] = cop.hfunc(ua, ub, "first")
            else:
                pseudo[(b, cond | {a})] = cop.hfunc(ub, ua, "second")
    return CopulaSample(np.clip(out, 1e-12, 1 - 1e-12))


# ---------------------------------------------------------------------------
# Monte-Carlo study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StudyScenario:
    d: int = 5
    n: int = 1000
    R: int = 10
    methods: tuple = ("dissmann", "alg1", "alg2", "alg2_fast")
    alpha: float = 0.6
    families: tuple = ALL_FAMILIES
    sign: str = "mixed"
    indep_test: bool = False
    seed: int = 42
    r_transform: str = "rank"
    workers: int = 1

    def __post_init__(self):
        if self.d < 3 or self.n < 100 or self.R < 1:
            raise ValueError("scenario needs d >= 3, n >= 100 and R >= 1")
        if self.sign not in ("mixed", "positive"):
            raise ValueError("sign must be 'mixed' or 'positive'")
        methods = tuple(normalize_method(m) for m in self.methods)
        if "dissmann" not in methods:
            methods = ("dissmann",) + methods
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "families", tuple(parse_family(f) for f in self.families))

    def config(self, method: str) -> SelectionConfig:
        return SelectionConfig(method=method, alpha=self.alpha, r_transform=self.r_transform,
                               family_set=self.families, indep_test=self.indep_test,
                               diagnostics=False)


def replication_rng(seed: int, rep: int):
    return np.random.default_rng([int(seed), int(rep)])


def simulate_replication(scenario: StudyScenario, rep: int) -> CopulaSample:
    rng = replication_rng(scenario.seed, rep)
    spec = sample_vine_spec(scenario.d, rng, scenario.families, scenario.sign == "positive")
    return sample_from_vine(spec, scenario.n, rng)


def _run_replication(args):
    scenario, rep = args
    try:
        data = simulate_replication(scenario, rep)
        row = {"rep": rep, "aic": {}, "time": {}, "structure": {}}
        for m in scenario.methods:
            t0 = time.perf_counter()
            vine = fit(data, scenario.config(m))
            row["time"][m] = time.perf_counter() - t0
            row["aic"][m] = vine.aic
            row["structure"][m] = vine.structure.to_matrix().tolist()
        return row
    except Exception as exc:  # recorded, excluded from aggregates
        return {"rep": rep, "error": f"{type(exc).__name__}: {exc}"}


@dataclass
class StudyReport:
    scenario: StudyScenario
    rows: list
    failures: list = field(default_factory=list)

    @property
    def completed(self) -> int:
        return len(self.rows)

    def aic(self, method: str) -> np.ndarray:
        return np.array([r["aic"][method] for r in self.rows])

    def diff_per_obs(self, method: str) -> np.ndarray:
        return (self.aic("dissmann") - self.aic(method)) / self.scenario.n

    def better_or_equal(self, method: str) -> float:
        return 100.0 * float(np.mean(self.aic(method) <= self.aic("dissmann") + TIE_TOL))

    def equal(self, method: str) -> float:
        return 100.0 * float(np.mean(np.abs(self.aic(method) - self.aic("dissmann")) <= TIE_TOL))

    def same_structure(self, method: str) -> float:
        same = [_same_structure(r["structure"][method], r["structure"]["dissmann"]) for r in self.rows]
        return 100.0 * float(np.mean(same))

    def mean_time(self, method: str) -> float:
        return float(np.mean([r["time"][method] for r in self.rows]))

    def diff_test(self, method: str) -> dict:
        diff = self.diff_per_obs(method)
        out = {"mean": float(diff.mean()), "sd": float(diff.std(ddof=1)) if diff.size > 1 else 0.0}
        if diff.size > 1 and np.ptp(diff) > 0:
            res = stats.ttest_1samp(diff, 0.0, alternative="greater")
            out.update(t=float(res.statistic), p_value=float(res.pvalue))
        else:
            out.update(t=float("nan"), p_value=float("nan"))
        return out

    def summary(self) -> dict:
        methods = {}
        for m in self.scenario.methods:
            methods[m] = {
                "better_or_equal_pct": self.better_or_equal(m),
                "equal_pct": self.equal(m),
                "same_structure_pct": self.same_structure(m),
                "mean_aic": float(self.aic(m).mean()),
                "mean_seconds": self.mean_time(m),
                "aic_diff_per_obs": self.diff_test(m),
            }
        sc = asdict(self.scenario)
        sc["families"] = [f.value for f in self.scenario.families]
        return {"scenario": sc, "completed": self.completed,
                "failed": len(self.failures), "failures": self.failures, "methods": methods}

    def table_row(self) -> dict:
        """One row in 'better-or-equal (equal)' percentage layout."""
        row = {"d": self.scenario.d, "n": self.scenario.n, "R": self.completed}
        for m in self.scenario.methods:
            if m != "dissmann":
                row[m] = f"{self.better_or_equal(m):.1f} ({self.equal(m):.1f})"
        return row


def _same_structure(a, b) -> bool:
    return VineStructure.from_matrix(a) == VineStructure.from_matrix(b)


def _map_reps(fn, jobs, workers: int):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs, chunksize=1))


def run_study(scenario: StudyScenario) -> StudyReport:
    results = _map_reps(_run_replication, [(scenario, r) for r in range(scenario.R)],
                        scenario.workers)
    rows = [r for r in results if "error" not in r]
    fails = [r for r in results if "error" in r]
    return StudyReport(scenario, rows, fails)


def _sweep_replication(args):
    scenario, rep, alphas = args
    data = simulate_replication(scenario, rep)
    cache = Alg2Cache()
    base = scenario.config("alg2")
    return [alg2_select(data, replace(base, alpha=a), cache=cache).aic for a in alphas]


def alpha_sweep(scenario: StudyScenario, alphas=None) -> dict:
    """Mean alg2 AIC per alpha; replications share one fit cache across alphas."""
    alphas = [round(a, 10) for a in (alphas if alphas is not None else np.linspace(0, 1, 11))]
    res = _map_reps(_sweep_replication, [(scenario, r, alphas) for r in range(scenario.R)],
                    scenario.workers)
    aic = np.array(res)
    return {"alpha": alphas, "mean_aic": aic.mean(axis=0).tolist(), "aic": aic.tolist()}
