import itertools

import numpy as np
import pytest
from scipy.stats import chi2_contingency

from treemiss.expfam import MixtureModel
from treemiss.fitting import EMConfig, FitError

from treemiss.patterns import MissingPattern, write_data_csv
from treemiss.simharness import (
    GeneratorConfig,
    binomial_benchmark,
    binomial_benchmark_lncmv,
    binomial_benchmark_mcar,
    continuous_benchmark,
    generate,
    oracle,
    run_consistency,
    run_coverage,
    run_kde_study,
    run_recovery,
    run_study,
    tree_signature,
    truth_parameter_table,
)

P = MissingPattern.from_string


def test_pattern_frequencies_match_targets():
    cfg = binomial_benchmark()
    sim = generate(cfg, 100_000, seed=0)
    counts = sim.data.pattern_counts()
    n = sim.data.n
    for pattern, prob in cfg.pattern_probs.items():
        assert abs(counts[pattern] / n - prob) < 0.01


def test_mcar_patterns_share_one_distribution():
    cfg = binomial_benchmark_mcar()
    sim = generate(cfg, 100_000, seed=1)
    # homogeneity of x1 between complete rows and pattern-110 rows
    a = sim.data.observed_rows_with(P("111"))[:, 0].astype(int)
    b = sim.data.observed_rows_with(P("110"))[:, 0].astype(int)
    table = np.zeros((2, 18))
    for row, vals in enumerate((a, b)):
        for v in vals:
            table[row, v] += 1
    keep = table.sum(axis=0) > 0
    assert chi2_contingency(table[:, keep]).pvalue > 0.001


def test_complete_case_moments_match_mixture():
    cfg = binomial_benchmark()
    sim = generate(cfg, 100_000, seed=2)
    cc_rows = sim.data.complete_values()
    truth = MixtureModel.from_weights(cfg.family, cfg.weights, cfg.eta)
    target = truth.mean()
    se = cc_rows.std(axis=0, ddof=1) / np.sqrt(cc_rows.shape[0])
    assert (np.abs(cc_rows.mean(axis=0) - target) < 3 * se).all()


def test_oracle_models_normalize_exactly():
    cfg = binomial_benchmark()
    orc = oracle(cfg)
    grid = np.array(
        list(itertools.product(*[range(n + 1) for n in cfg.family.trials])), float
    )
    for r, model in orc.models.items():
        assert model.density(grid).sum() == pytest.approx(1.0, abs=1e-9)


def test_oracle_total_odds_consistency():
    # the analytic total odds must reproduce the density ratio times priors
    cfg = binomial_benchmark()
    orc = oracle(cfg)
    xs = orc.models[P("111")].sample(np.random.default_rng(3), 50)
    for r in cfg.tree.non_source_patterns():
        lhs = orc.total_log_odds(r, xs)
        rhs = (
            np.log(cfg.pattern_probs[r])
            - np.log(cfg.pattern_probs[P("111")])
            + orc.models[r].log_density(xs)
            - orc.models[P("111")].log_density(xs)
        )
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_generated_csv_is_byte_identical(tmp_path):
    cfg = binomial_benchmark()
    a = generate(cfg, 500, seed=4)
    b = generate(cfg, 500, seed=4)
    pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
    write_data_csv(pa, a.data.values)
    write_data_csv(pb, b.data.values)
    assert pa.read_bytes() == pb.read_bytes()
    c = generate(cfg, 500, seed=5)
    write_data_csv(tmp_path / "c.csv", c.data.values)
    assert (tmp_path / "c.csv").read_bytes() != pa.read_bytes()


def test_complement_odds_marginals_and_validation():
    cfg = continuous_benchmark("complement-odds")
    sim = generate(cfg, 30_000, seed=6)
    counts = sim.data.pattern_counts()
    for pattern, prob in cfg.pattern_probs.items():
        assert abs(counts[pattern] / sim.data.n - prob) < 0.015
    # a baseline pattern with no odds model is required
    bad = continuous_benchmark("complement-odds")
    bad.complement_odds = {p: {"x1": 0.1} for p in bad.pattern_probs}
    with pytest.raises(ValueError, match="baseline"):
        generate(bad, 2000, seed=7)


def test_mechanism_validation():
    cfg = binomial_benchmark()
    with pytest.raises(ValueError, match="mechanism"):
        GeneratorConfig(
            "x", cfg.family, cfg.weights, cfg.eta, cfg.tree, cfg.edge_coefs, cfg.pattern_probs, mechanism="nope"
        )
    with pytest.raises(ValueError, match="sum to 1"):
        GeneratorConfig(
            "x", cfg.family, cfg.weights, cfg.eta, cfg.tree, cfg.edge_coefs,
            {p: 0.5 for p in cfg.pattern_probs},
        )


def test_truth_table_round_numbers():
    cfg = binomial_benchmark()
    truth = truth_parameter_table(cfg)
    # canonical order sorts components by their first natural parameter
    assert truth["cc.w1"] == pytest.approx(0.2)
    assert truth["cc.w2"] == pytest.approx(0.5)
    assert truth["cc.w3"] == pytest.approx(0.3)
    assert truth["cc.p1.1"] == pytest.approx(0.2)
    assert truth["cc.p3.2"] == pytest.approx(0.75)
    assert truth["odds.101.x1"] == pytest.approx(0.3)
    assert "odds.101.intercept" not in truth


def test_consistency_rows_shape():
    cfg = binomial_benchmark()
    rows = run_consistency(cfg, [400], u=4, seed=8, em_config=EMConfig(restarts=2))
    groups = {r["group"] for r in rows}
    assert groups == {"theta_cc", "w_cc", "beta"}
    assert all(r["mse_x100"] > 0 for r in rows)


def test_coverage_rows_shape():
    cfg = binomial_benchmark()
    rows = run_coverage(cfg, n=800, u=2, b=24, seed=9, em_config=EMConfig(restarts=2))
    assert {r["group"] for r in rows} == {"theta_cc", "w_cc", "beta"}
    for r in rows:
        assert 0.0 <= r["coverage"] <= 1.0


def test_recovery_rows_shape():
    cfg = binomial_benchmark()
    rows = run_recovery(cfg, [1500], u=4, seed=10, em_config=EMConfig(restarts=2))
    for method in ("parent", "child"):
        sub = [r for r in rows if r["method"] == method]
        assert sum(r["count"] for r in sub) == 4


def test_lncmv_benchmark_tree():
    cfg = binomial_benchmark_lncmv()
    assert tree_signature(cfg.tree) == "001<-101|010<-110|100<-110|101<-111|110<-111"
    sim = generate(cfg, 2000, seed=11)
    assert set(sim.data.pattern_counts()) == set(cfg.pattern_probs)


def test_kde_study_tree_mechanism():
    result = run_kde_study(mechanism="tree", n=900, iters=2, seed=12, grid_points=41)
    rows = result["rows"]
    assert rows, "kde study must emit curve rows"
    estimators = {r["estimator"] for r in rows}
    assert estimators == {"tree", "complete-case", "available-case", "oracle"}
    # each rendered curve integrates to roughly one
    grid = np.array(result["grid"])
    h = grid[1] - grid[0]
    for est in estimators:
        curve = [r["density"] for r in rows if r["pattern"] == "110" and r["dim"] == 1 and r["estimator"] == est]
        assert abs(np.sum(curve) * h - 1.0) < 0.1


def test_kde_study_learned_tree():
    result = run_kde_study(mechanism="complement-odds", n=1200, iters=2, seed=13, grid_points=21)
    assert sum(result["trees"].values()) == 2
    assert all("001<-101" in sig for sig in result["trees"])


def test_kde_study_user_data_hook():
    rng = np.random.default_rng(14)
    raw = rng.normal(size=(1500, 3)) * [1.5, 2.0, 0.5] + [3.0, -1.0, 0.0]
    result = run_kde_study(mechanism="complement-odds", n=0, iters=1, seed=15, grid_points=21, data_values=raw)
    assert result["rows"]


def test_run_study_dispatch():
    with pytest.raises(ValueError, match="unknown study"):
        run_study("nope")
    cfg = binomial_benchmark()
    out = run_study("consistency", config=cfg, n_grid=[300], u=2, seed=16, em_config=EMConfig(restarts=2))
    assert out["rows"]
