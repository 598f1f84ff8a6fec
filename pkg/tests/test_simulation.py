from collections import Counter

import numpy as np
import pytest
from scipy import stats

from vinegrow.families import ASYMMETRIC, BivariateCopula, Family
from vinegrow.selection import Alg2Cache, SelectionConfig, alg2_select, fit_structure
from vinegrow.simulation import (
    TAU_CLIP,
    StudyScenario,
    VineSpec,
    alpha_sweep,
    run_study,
    sample_df,
    sample_from_vine,
    sample_structure,
    sample_tau,
    sample_vine_spec,
    simulate_replication,
)
from vinegrow.structure import Edge, dvine_structure


def matrix_key(s):
    return tuple(map(tuple, s.to_matrix()))


def test_dimension_three_has_one_natural_order_matrix():
    rng = np.random.default_rng(0)
    assert len({matrix_key(sample_structure(3, rng)) for _ in range(50)}) == 1


def test_natural_order_structures_are_uniform_in_five_dimensions():
    rng = np.random.default_rng(1)
    counts = Counter(matrix_key(sample_structure(5, rng)) for _ in range(8000))
    assert len(counts) == 8
    freqs = np.array(list(counts.values())) / 8000
    assert np.all((freqs >= 0.10) & (freqs <= 0.15))
    assert stats.chisquare(list(counts.values())).pvalue > 0.001


def test_sampled_structures_pass_validation():
    rng = np.random.default_rng(2)
    for d in range(3, 10):
        assert sample_structure(d, rng).is_valid()


def test_df_population():
    x = sample_df(np.random.default_rng(3), 200_000)
    assert x.mean() == pytest.approx(4.0, abs=0.01)
    lo, hi = np.quantile(x, [0.025, 0.975])
    assert lo == pytest.approx(3.2, abs=0.02)
    assert hi == pytest.approx(5.4, abs=0.03)


def test_tau_draws_are_clipped_and_signed():
    rng = np.random.default_rng(4)
    t = sample_tau(rng, 50_000)
    assert np.abs(t).max() <= TAU_CLIP
    assert 0.45 < np.mean(t > 0) < 0.55
    assert np.all(sample_tau(rng, 1000, positive=True) > 0)


def test_positive_scenario_has_no_quarter_rotations():
    rng = np.random.default_rng(5)
    for _ in range(30):
        spec = sample_vine_spec(5, rng, positive=True)
        for cop in spec.copulas.values():
            assert cop.rotation not in (90, 270)
            if cop.family is not Family.INDEP:
                assert cop.tau > 0


def test_negative_asymmetric_draws_use_quarter_rotations():
    rng = np.random.default_rng(6)
    rots = Counter()
    for _ in range(40):
        for cop in sample_vine_spec(5, rng, families=("clayton", "gumbel", "joe")).copulas.values():
            if cop.tau < 0:
                rots[cop.rotation] += 1
            assert cop.family in ASYMMETRIC
    assert set(rots) == {90, 270}


def test_independence_vine_gives_uniform_columns():
    s = dvine_structure([0, 1, 2, 3])
    spec = VineSpec(s, {e: BivariateCopula() for e in s.edges()})
    # the columns are the raw uniforms here, so a KS failure would be chance
    x = sample_from_vine(spec, 5000, np.random.default_rng(70)).data
    for j in range(4):
        assert stats.kstest(x[:, j], "uniform").pvalue > 0.01
    assert np.abs(np.corrcoef(x.T) - np.eye(4)).max() < 0.05


def test_gaussian_vine_correlation_matrix():
    r01, r12, r02_1 = 0.6, -0.4, 0.3
    s = dvine_structure([0, 1, 2])
    cops = {Edge(1, (0, 1)): BivariateCopula("gaussian", 0, (r01,)),
            Edge(1, (1, 2)): BivariateCopula("gaussian", 0, (r12,)),
            Edge(2, (0, 2), frozenset({1})): BivariateCopula("gaussian", 0, (r02_1,))}
    x = sample_from_vine(VineSpec(s, cops), 10_000, np.random.default_rng(8)).data
    z = stats.norm.ppf(x)
    r02 = r02_1 * np.sqrt((1 - r01 ** 2) * (1 - r12 ** 2)) + r01 * r12
    implied = np.array([[1, r01, r02], [r01, 1, r12], [r02, r12, 1]])
    assert np.abs(np.corrcoef(z.T) - implied).max() < 0.05


@pytest.mark.parametrize("seed", [9, 21])
def test_fixed_structure_refit_recovers_parameters(seed):
    rng = np.random.default_rng(seed)
    spec = sample_vine_spec(6, rng, families=("clayton", "gumbel", "frank", "gaussian"))
    data = sample_from_vine(spec, 5000, rng)
    fixed = {e: (c.family, c.rotation) for e, c in spec.copulas.items()}
    vine = fit_structure(spec.structure, data, SelectionConfig(diagnostics=False), fixed=fixed)
    for e, truth in spec.copulas.items():
        # relative error on the parameter, absolute on tau for near-independent pairs
        got = vine.copulas[e]
        if abs(truth.tau) > 0.1:
            assert got.params[0] == pytest.approx(truth.params[0], rel=0.10), e
        assert got.tau == pytest.approx(truth.tau, abs=0.03), e


def test_replications_are_reproducible_and_distinct():
    sc = StudyScenario(d=4, n=200, R=2, methods=("dissmann",), seed=3)
    a, b = simulate_replication(sc, 0), simulate_replication(sc, 0)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, simulate_replication(sc, 1).data)


def test_dissmann_against_itself():
    rep = run_study(StudyScenario(d=4, n=200, R=3, methods=("dissmann",)))
    assert rep.better_or_equal("dissmann") == 100.0
    assert rep.equal("dissmann") == 100.0
    assert rep.same_structure("dissmann") == 100.0


def test_three_dimensional_alg1_matches_dissmann():
    rep = run_study(StudyScenario(d=3, n=300, R=8, methods=("alg1",), seed=5))
    assert rep.same_structure("alg1") == 100.0
    assert rep.table_row()["alg1"] == "100.0 (100.0)"


def test_study_summary_fields():
    rep = run_study(StudyScenario(d=4, n=200, R=3, methods=("alg2",), seed=1))
    s = rep.summary()
    assert s["completed"] == 3 and s["failed"] == 0
    assert set(s["methods"]) == {"dissmann", "alg2"}
    diff = rep.diff_per_obs("alg2")
    assert s["methods"]["alg2"]["aic_diff_per_obs"]["mean"] == pytest.approx(diff.mean())


def test_alpha_sweep_cache_matches_fresh_runs():
    sc = StudyScenario(d=4, n=300, R=2, methods=("alg2",), seed=2)
    res = alpha_sweep(sc, [0.0, 0.5, 1.0])
    for rep in range(2):
        data = simulate_replication(sc, rep)
        fresh = [alg2_select(data, SelectionConfig(method="alg2", alpha=a, diagnostics=False)).aic
                 for a in (0.0, 0.5, 1.0)]
        assert res["aic"][rep] == pytest.approx(fresh, abs=1e-9)
    assert len(res["mean_aic"]) == 3


def test_shared_cache_across_alpha_saves_fits():
    data = simulate_replication(StudyScenario(d=4, n=300, R=1, seed=4), 0)
    cache = Alg2Cache()
    alg2_select(data, SelectionConfig(method="alg2", alpha=0.3, diagnostics=False), cache=cache)
    n_fits = len(cache.fits)
    alg2_select(data, SelectionConfig(method="alg2", alpha=0.3, diagnostics=False), cache=cache)
    assert len(cache.fits) == n_fits


def test_scenario_validation():
    with pytest.raises(ValueError):
        StudyScenario(d=2)
    with pytest.raises(ValueError):
        StudyScenario(sign="negative")
    assert StudyScenario(methods=("alg2-fast",)).methods == ("dissmann", "alg2_fast")
