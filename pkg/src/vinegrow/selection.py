"""Vine structure selection: Dissmann's MST method, the CCC-weighted edge
score (``alg1``) and the C-vine root-node score (``alg2`` / ``alg2_fast``)."""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import rankdata

from .ccc import CccConfig, ccc_test
from .dependence import CopulaSample, kendall_tau
from .errors import DataError
from .families import ALL_FAMILIES, FitResult, Family, parse_family, select_family
from .structure import (Edge, VineStructure, WeightedEdge, allowed_edges, first_tree_candidates,
                        max_spanning_tree, propagate, pseudo_obs_update)

METHODS = ("dissmann", "alg1", "alg2", "alg2_fast")
R_TRANSFORMS = ("rank", "identity", "log")


def normalize_method(method: str) -> str:
    m = str(method).lower().replace("-", "_")
    if m not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    return m


def normalize_r(r: str) -> str:
    r = str(r).lower()
    if r == "logarithm":
        r = "log"
    if r not in R_TRANSFORMS:
        raise ValueError(f"unknown p-value transform {r!r}")
    return r


@dataclass(frozen=True)
class SelectionConfig:
    method: str = "dissmann"
    alpha: float = 0.6
    r_transform: str = "rank"
    family_set: tuple = ALL_FAMILIES
    indep_test: bool = False
    level: float = 0.05
    seed: int | None = None
    ccc: CccConfig = CccConfig()
    diagnostics: bool = True
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "method", normalize_method(self.method))
        object.__setattr__(self, "r_transform", normalize_r(self.r_transform))
        if not 0.0 <= float(self.alpha) <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        fams = tuple(parse_family(f) for f in self.family_set)
        if not fams:
            raise ValueError("family set must not be empty")
        object.__setattr__(self, "family_set", fams)
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")

    @property
    def two_pass(self) -> bool:
        return self.method == "alg2_fast"


@dataclass
class FittedVine:
    structure: VineStructure
    copulas: dict
    loglik: float
    method: str = "dissmann"
    ccc: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.structure.d

    @property
    def npars(self) -> int:
        return int(sum(c.npars for c in self.copulas.values()))

    @property
    def aic(self) -> float:
        return aic_value(self.loglik, self.npars)

    def ccc_rejections(self, level: float = 0.05) -> int:
        return sum(1 for r in self.ccc.values() if r.p_value < level)

    def summary(self) -> str:
        lines = [f"method {self.method}: loglik {self.loglik:.4f}, npars {self.npars}, "
                 f"AIC {self.aic:.4f}"]
        for t, tree in enumerate(self.structure.trees, start=1):
            parts = []
            for e in tree:
                s = f"{e.label()} {self.copulas[e]}"
                if e in self.ccc:
                    s += f" [CCC p={self.ccc[e].p_value:.3g}]"
                parts.append(s)
            lines.append(f"  T{t}: " + "; ".join(parts))
        return "\n".join(lines)


def aic_value(loglik: float, npars: int) -> float:
    return -2.0 * float(loglik) + 2.0 * int(npars)


def _as_data(sample) -> np.ndarray:
    data = sample.data if isinstance(sample, CopulaSample) else np.asarray(sample, dtype=float)
    if data.ndim != 2 or data.shape[1] < 2:
        raise DataError("data must be an n x d array with d >= 2")
    if not np.all((data > 0) & (data < 1)):
        raise DataError("copula-scale data must lie strictly inside (0, 1)")
    return data


def _pmap(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _fit_pair(x, y, cfg: SelectionConfig, families=None, tau=None) -> FitResult:
    return select_family(x, y, families or cfg.family_set, cfg.indep_test, cfg.level, tau=tau)


def vine_loglik_aic(vine: FittedVine, data) -> tuple[float, float]:
    """Log-likelihood of ``data`` under the vine, with its AIC."""
    data = _as_data(data)
    if data.shape[1] != vine.d:
        raise DataError(f"data has {data.shape[1]} columns, vine has dimension {vine.d}")
    ll = 0.0
    for e, x, y in propagate(vine.structure, data, vine.copulas):
        ll += float(np.sum(vine.copulas[e].logpdf(x, y)))
    return ll, aic_value(ll, vine.npars)


def fit_structure(structure: VineStructure, data, cfg: SelectionConfig | None = None,
                  fixed: dict | None = None, method: str | None = None,
                  taus: dict | None = None) -> FittedVine:
    """Fit pair-copulas on a given structure.

    ``fixed`` maps edges to ``(family, rotation)``; those edges are fitted
    by maximum likelihood within that model, the rest by AIC selection.
    ``taus`` may supply already computed Kendall's taus per edge.
    """
    from .families import fit_mle

    cfg = cfg or SelectionConfig()
    data = _as_data(data)
    structure.validate()
    copulas, ll = {}, 0.0
    fixed = fixed or {}
    for e, x, y in propagate(structure, data, copulas):
        if e in fixed:
            fam, rot = fixed[e]
            res = fit_mle(fam, rot, x, y)
        else:
            res = _fit_pair(x, y, cfg, tau=(taus or {}).get(e))
        copulas[e] = res.copula
        ll += res.loglik
    vine = FittedVine(structure, copulas, ll, method or cfg.method)
    if cfg.diagnostics:
        vine.ccc = ccc_diagnostics(vine, data, cfg)
    return vine


def ccc_diagnostics(vine: FittedVine, data, cfg: SelectionConfig | None = None) -> dict:
    """CCC test for every edge with a non-empty conditioning set."""
    cfg = cfg or SelectionConfig()
    data = _as_data(data)
    jobs = [(e, x, y) for e, x, y in propagate(vine.structure, data, vine.copulas) if e.conditioning]
    res = _pmap(lambda j: ccc_test(j[1], j[2], data[:, sorted(j[0].conditioning)], cfg.ccc),
                jobs, cfg.threads)
    return {j[0]: r for j, r in zip(jobs, res)}


# ---------------------------------------------------------------------------
# MST-based selection (Dissmann and alg1)
# ---------------------------------------------------------------------------

def _grow(data, cfg: SelectionConfig, weigh) -> FittedVine:
    n, d = data.shape
    pseudo = {(i, frozenset()): data[:, i] for i in range(d)}
    trees, copulas, ll, tested = [], {}, 0.0, {}
    prev = None
    for m in range(1, d):
        if m == 1:
            cands = first_tree_candidates(d)
            nodes = [frozenset({i}) for i in range(d)]
        else:
            cands = allowed_edges(prev)
            nodes = [e.constraint for e in prev]
        cols = [(pseudo[(e.conditioned[0], e.conditioning)],
                 pseudo[(e.conditioned[1], e.conditioning)]) for e in cands]
        taus = dict(zip(cands, (kendall_tau(x, y) for x, y in cols)))
        weights = weigh(m, cands, cols, [abs(taus[e]) for e in cands], tested)
        wedges = [WeightedEdge(*e.nodes, float(w), {"edge": e}) for e, w in zip(cands, weights)]
        chosen = [w.payload["edge"] for w in max_spanning_tree(nodes, wedges)]
        fits = _pmap(lambda e: _fit_pair(pseudo[(e.conditioned[0], e.conditioning)],
                                         pseudo[(e.conditioned[1], e.conditioning)], cfg,
                                         tau=taus[e]),
                     chosen, cfg.threads)
        for e, res in zip(chosen, fits):
            copulas[e] = res.copula
            ll += res.loglik
            if m < d - 1:
                j, k = e.conditioned
                hx, hy = pseudo_obs_update(res.copula, pseudo[(j, e.conditioning)],
                                           pseudo[(k, e.conditioning)])
                pseudo[(j, e.conditioning | {k})] = hx
                pseudo[(k, e.conditioning | {j})] = hy
        trees.append(chosen)
        prev = chosen
    vine = FittedVine(VineStructure(d, trees), copulas, ll, cfg.method)
    if cfg.diagnostics:
        vine.ccc = {e: tested[e] for e in vine.structure.edges() if e in tested}
        missing = [e for e in vine.structure.edges() if e.conditioning and e not in tested]
        if missing:
            for e in missing:
                x = pseudo[(e.conditioned[0], e.conditioning)]
                y = pseudo[(e.conditioned[1], e.conditioning)]
                vine.ccc[e] = ccc_test(x, y, data[:, sorted(e.conditioning)], cfg.ccc)
    return vine


def dissmann_select(sample, cfg: SelectionConfig | None = None) -> FittedVine:
    """Sequential maximum spanning trees on absolute Kendall's tau."""
    cfg = cfg or SelectionConfig(method="dissmann")
    data = _as_data(sample)
    return _grow(data, cfg, lambda m, cands, cols, abs_taus, tested: abs_taus)


def edge_scores(pvalues, taus, alpha: float) -> np.ndarray:
    """alpha * rank(p) + (1 - alpha) * rank(|tau|), average ranks on ties."""
    f_p = rankdata(np.asarray(pvalues, dtype=float))
    f_t = rankdata(np.abs(np.asarray(taus, dtype=float)))
    return alpha * f_p + (1 - alpha) * f_t


def alg1_select(sample, cfg: SelectionConfig | None = None) -> FittedVine:
    """MST selection where higher trees favour edges with large CCC p-values."""
    cfg = cfg or SelectionConfig(method="alg1")
    data = _as_data(sample)

    def weigh(m, cands, cols, taus, tested):
        if m == 1:
            return taus
        res = _pmap(lambda ec: ccc_test(ec[1][0], ec[1][1], data[:, sorted(ec[0].conditioning)],
                                        cfg.ccc),
                    list(zip(cands, cols)), cfg.threads)
        for e, r in zip(cands, res):
            tested[e] = r
        return edge_scores([r.p_value for r in res], taus, cfg.alpha)

    return _grow(data, cfg, weigh)


# ---------------------------------------------------------------------------
# C-vine root selection (alg2)
# ---------------------------------------------------------------------------

@dataclass
class RootScore:
    node: int
    p_score: float
    t_score: float
    g_p: float
    g_tau: float
    s: float


def transform_pvalues(pooled, r: str = "rank") -> np.ndarray:
    pooled = np.asarray(pooled, dtype=float)
    r = normalize_r(r)
    if r == "rank":
        return rankdata(pooled)
    if r == "identity":
        return pooled
    return np.log(pooled + 1e-300)


def combine_scores(g_p, g_tau, alpha: float):
    return alpha * np.asarray(g_p, dtype=float) + (1 - alpha) * np.asarray(g_tau, dtype=float)


def root_scores_from_pvalues(pvalues: dict, t_scores: dict, alpha: float,
                             r: str = "rank") -> list[RootScore]:
    """Node scores from per-candidate p-value lists and tau sums.

    ``pvalues[v]`` holds the CCC p-values of all pairs conditioned on ``v``;
    they are transformed jointly over the pooled set before summing.
    """
    nodes = sorted(t_scores)
    t = np.array([t_scores[v] for v in nodes], dtype=float)
    g_tau = rankdata(t)
    counts = [len(pvalues.get(v, ())) for v in nodes]
    if sum(counts) == 0:
        return [RootScore(v, 0.0, float(tv), 0.0, float(gt), float(gt))
                for v, tv, gt in zip(nodes, t, g_tau)]
    pooled = np.concatenate([np.asarray(pvalues[v], dtype=float) for v in nodes])
    trans = transform_pvalues(pooled, r)
    bounds = np.cumsum([0] + counts)
    p_sc = np.array([trans[bounds[i]:bounds[i + 1]].sum() for i in range(len(nodes))])
    g_p = rankdata(p_sc)
    s = combine_scores(g_p, g_tau, alpha)
    return [RootScore(v, float(p), float(tv), float(gp), float(gt), float(sv))
            for v, p, tv, gp, gt, sv in zip(nodes, p_sc, t, g_p, g_tau, s)]


def pick_root(scores: list[RootScore]) -> int:
    best = max(sc.s for sc in scores)
    return min(sc.node for sc in scores if sc.s == best)


class Alg2Cache:
    """Pair fits, taus and CCC p-values keyed by the ordered prior roots.

    Sharing one cache between runs on the same data (e.g. an alpha sweep)
    avoids refitting identical sub-problems.
    """

    def __init__(self):
        self.fits = {}
        self.taus = {}
        self.pvalues = {}


class _Alg2State:
    def __init__(self, data, cfg, families, cache):
        self.data = data
        self.cfg = cfg
        self.families = families
        self.cache = cache if cache is not None else Alg2Cache()
        self.roots: tuple = ()
        self.cur = {i: data[:, i] for i in range(data.shape[1])}
        self.cond_cache = {}

    def tau(self, i, v):
        a, b = min(i, v), max(i, v)
        key = (self.roots, a, b)
        if key not in self.cache.taus:
            self.cache.taus[key] = kendall_tau(self.cur[a], self.cur[b])
        return self.cache.taus[key]

    def fit(self, i, v) -> FitResult:
        a, b = min(i, v), max(i, v)
        key = (self.families, self.cfg.indep_test, self.cfg.level, self.roots, a, b)
        if key not in self.cache.fits:
            self.cache.fits[key] = _fit_pair(self.cur[a], self.cur[b], self.cfg, self.families,
                                             tau=self.tau(a, b))
        return self.cache.fits[key]

    def conditional(self, i, v):
        """Pseudo-observations u_{i | roots, v}."""
        key = (i, v)
        if key not in self.cond_cache:
            a, b = min(i, v), max(i, v)
            ha, hb = pseudo_obs_update(self.fit(i, v).copula, self.cur[a], self.cur[b])
            self.cond_cache[(a, b)] = ha
            self.cond_cache[(b, a)] = hb
        return self.cond_cache[key]

    def advance(self, root, remaining):
        self.cur = {i: self.conditional(i, root) for i in remaining if i != root}
        self.roots = self.roots + (root,)
        self.cond_cache = {}


def alg2_root_scores(state: _Alg2State, remaining, cfg: SelectionConfig) -> list[RootScore]:
    """Score every remaining node as the next C-vine root."""
    remaining = sorted(remaining)
    t_scores = {v: sum(abs(state.tau(i, v)) for i in remaining if i != v) for v in remaining}
    if len(remaining) < 3 or cfg.alpha == 0.0:
        # alpha = 0 ignores p-values, so the tests are skipped
        pv = {}
    else:
        jobs = []
        for v in remaining:
            others = [i for i in remaining if i != v]
            for i, j in itertools.combinations(others, 2):
                jobs.append((v, i, j))
        cond_cols = list(state.roots)

        def run(job):
            v, i, j = job
            key = (state.families, state.cfg.indep_test, state.roots, v, i, j, cfg.ccc)
            if key not in state.cache.pvalues:
                z = state.data[:, sorted(cond_cols + [v])]
                state.cache.pvalues[key] = ccc_test(state.conditional(i, v),
                                                    state.conditional(j, v), z, cfg.ccc).p_value
            return state.cache.pvalues[key]

        # fill the conditional columns sequentially so threads only read them
        for v in remaining:
            for i in remaining:
                if i != v:
                    state.conditional(i, v)
        pvals = _pmap(run, jobs, cfg.threads)
        pv = {v: [] for v in remaining}
        for (v, _, _), p in zip(jobs, pvals):
            pv[v].append(p)
    return root_scores_from_pvalues(pv, t_scores, cfg.alpha, cfg.r_transform)


def alg2_select(sample, cfg: SelectionConfig | None = None, cache: Alg2Cache | None = None) -> FittedVine:
    """C-vine selection choosing one root per tree from node scores."""
    cfg = cfg or SelectionConfig(method="alg2")
    data = _as_data(sample)
    n, d = data.shape
    families = (Family.GAUSSIAN,) if cfg.two_pass else cfg.family_set
    state = _Alg2State(data, cfg, families, cache)
    remaining = list(range(d))
    trees, copulas, ll, history = [], {}, 0.0, []
    for m in range(1, d):
        scores = alg2_root_scores(state, remaining, cfg)
        root = pick_root(scores)
        history.append([vars(s) for s in scores])
        cond = frozenset(state.roots)
        tree = []
        for i in remaining:
            if i == root:
                continue
            res = state.fit(i, root)
            e = Edge(m, (i, root), cond)
            copulas[e] = res.copula
            ll += res.loglik
            tree.append(e)
        trees.append(tree)
        if m < d - 1:
            state.advance(root, remaining)
        remaining.remove(root)
    structure = VineStructure(d, trees)
    # the last level does not advance the state
    roots = list(state.roots) + [root] + remaining
    if cfg.two_pass:
        # first-tree pseudo-observations are the data, so their taus carry over
        known = {e: state.cache.taus[((),) + e.conditioned] for e in trees[0]}
        vine = fit_structure(structure, data, replace(cfg, diagnostics=False), method=cfg.method,
                             taus=known)
    else:
        vine = FittedVine(structure, copulas, ll, cfg.method)
    vine.info["root_order"] = roots
    vine.info["root_scores"] = history
    if cfg.diagnostics:
        vine.ccc = ccc_diagnostics(vine, data, cfg)
    return vine


def fit(sample, cfg: SelectionConfig | None = None, **kwargs) -> FittedVine:
    """Dispatch on ``cfg.method``; keyword arguments override config fields."""
    cfg = cfg or SelectionConfig()
    if kwargs:
        cfg = replace(cfg, **kwargs)
    if cfg.method == "dissmann":
        return dissmann_select(sample, cfg)
    if cfg.method == "alg1":
        return alg1_select(sample, cfg)
    return alg2_select(sample, cfg)
