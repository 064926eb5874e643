"""Acceptance gate: one test per criterion, run at the stated scales and tolerances.

Each test prints a single summary line; the terminal summary block lists
PASS/FAIL per criterion.  Statistical criteria run under fixed seeds chosen
once (calibration notes live in the reviewer ledger, outside the package).
"""

import itertools
import math
import time

import numpy as np

from oracles import conjugacy_battery
from treemiss.expfam import FamilySpec, MixtureModel
from treemiss.fitting import EMConfig, FittedFullModel, fit_full
from treemiss.graphselect import energy_permutation_pvalue
from treemiss.impute import composed_odds_bound, impute_conjugate, impute_rejection
from treemiss.inference import bootstrap, covariance_block_check
from treemiss.odds import EdgeOddsModel, compose
from treemiss.patterns import IncompleteDataset, MissingPattern, all_patterns, dominates
from treemiss.sensitivity import perturb
from treemiss.simharness import (
    binomial_benchmark,
    binomial_benchmark_lncmv,
    binomial_benchmark_mcar,
    generate,
    oracle,
    run_consistency,
    run_coverage,
    run_recovery,
)
from treemiss.treegraph import TreeGraph, build_ccmv, count_trees, enumerate_trees, validate

P = MissingPattern.from_string

ALL_KINDS = (
    "gaussian-diag",
    "binomial-product",
    "negative-binomial",
    "pareto",
    "beta",
    "dirichlet",
    "gaussian-kde",
)


def _report(name: str, detail: str) -> None:
    print(f"[acceptance] {name}: {detail}")


def _truth_model(cfg) -> FittedFullModel:
    orc = oracle(cfg)
    cc = MixtureModel.from_weights(cfg.family, cfg.weights, cfg.eta)
    edges = {
        child: EdgeOddsModel(child, cfg.tree.parent_of(child), orc.intercepts[child], tuple(sorted(coefs.items())))
        for child, coefs in cfg.edge_coefs.items()
    }
    return FittedFullModel(cfg.tree, cfg.family, cc, edges, dict(cfg.pattern_probs), np.zeros(cfg.family.d))


def test_criterion_1_tree_enumeration():
    start = time.time()
    counts = {d: count_trees(d) for d in (1, 2, 3, 5, 6)}
    elapsed = time.time() - start
    # independent oracle: enumerate every dominator assignment
    for d in (1, 2, 3):
        pats = all_patterns(d)
        full = MissingPattern.full(d)
        children = [p for p in pats if p != full]
        choices = [[s for s in pats if dominates(s, r)] for r in children]
        brute = sum(1 for _ in itertools.product(*choices))
        assert counts[d] == brute
    assert (counts[1], counts[2], counts[3]) == (1, 3, 189)
    assert math.log2(counts[5]) >= 18
    assert math.log2(counts[6]) >= 66
    assert elapsed < 1.0
    _report("criterion 1", f"counts {counts[1]}/{counts[2]}/{counts[3]}, log2(T5)={math.log2(counts[5]):.1f}, {elapsed:.3f}s")


def test_criterion_2_conjugacy_oracle_suite():
    start = time.time()
    rng = np.random.default_rng(2024)
    worst = {}
    for kind in ALL_KINDS:
        for d in (1, 2):
            if kind == "dirichlet" and d == 1:
                continue
            gap = conjugacy_battery(kind, d, 100, rng)
            worst[(kind, d)] = gap
            assert gap < 1e-6, (kind, d, gap)
    elapsed = time.time() - start
    assert elapsed < 60.0
    _report("criterion 2", f"worst gap {max(worst.values()):.2e} over {sum(1 for _ in worst)} family/dim cells, {elapsed:.0f}s")


def test_criterion_3_mcar_recovery():
    start = time.time()
    cfg = binomial_benchmark_mcar()
    sim = generate(cfg, 100_000, seed=0)
    fit = fit_full(sim.data, cfg.tree, cfg.family, 3, EMConfig(), rng=np.random.default_rng(0))
    grid = np.array(list(itertools.product(*[range(n + 1) for n in cfg.family.trials])), float)
    cc = fit.cc_model.density(grid)
    worst = 0.0
    for r in cfg.tree.non_source_patterns():
        tv = 0.5 * float(np.abs(fit.derived(r).density(grid) - cc).sum())
        worst = max(worst, tv)
        assert tv < 0.02, (str(r), tv)
    elapsed = time.time() - start
    assert elapsed < 60.0
    _report("criterion 3", f"max total variation {worst:.4f} < 0.02, {elapsed:.0f}s")


def test_criterion_4_consistency():
    start = time.time()
    cfg = binomial_benchmark()
    rows = run_consistency(cfg, [500, 1000, 2000, 5000], u=50, seed=0, workers=2)
    theta = {r["n"]: r["mse_x100"] for r in rows if r["group"] == "theta_cc"}
    ratio = theta[500] / theta[5000]
    elapsed = time.time() - start
    assert 0.036 / 2 <= theta[500] <= 0.036 * 2, theta
    assert 5.0 <= ratio <= 20.0, (theta, ratio)
    # approximately linear decay: each doubling-ish step shrinks the error
    sizes = [500, 1000, 2000, 5000]
    assert all(theta[a] > theta[b] for a, b in zip(sizes, sizes[1:]))
    assert elapsed < 900.0
    _report(
        "criterion 4",
        f"theta MSE x100 at n=500: {theta[500]:.4f} (target 0.036 x/2), ratio {ratio:.1f} in [5,20], {elapsed:.0f}s",
    )


def test_criterion_5_coverage():
    start = time.time()
    cfg = binomial_benchmark()
    rows = run_coverage(cfg, n=2000, u=50, b=200, seed=0, workers=2)
    cov = {r["group"]: r["coverage"] for r in rows}
    elapsed = time.time() - start
    assert 0.90 <= cov["theta_cc"] <= 0.98, cov
    assert 0.90 <= cov["w_cc"] <= 0.98, cov
    assert elapsed < 1800.0
    _report("criterion 5", f"coverage theta {cov['theta_cc']:.3f}, w {cov['w_cc']:.3f} in [0.90, 0.98], {elapsed:.0f}s")


def test_criterion_6_graph_recovery():
    """Both selectors must recover the generating tree in >= 90% of replicates.

    The child-based selector clears the bar with room.  The parent-based
    selector cannot: the contested child's population score gap equals the
    sampling noise ceiling (zero-estimation-noise selection tops out at ~0.92
    and any estimated candidate models measure 0.60-0.86 across trial counts,
    component counts, and scorer variants), so this half of the criterion is
    expected to fail; the reviewer ledger carries the full analysis.
    """
    start = time.time()
    cfg = binomial_benchmark()
    rows = run_recovery(cfg, [5000], u=50, seed=0, workers=2, em_config=EMConfig(restarts=5))
    hits = {r["method"]: r["count"] / r["u"] for r in rows if r["is_true"]}
    elapsed = time.time() - start
    assert elapsed < 600.0
    _report(
        "criterion 6",
        f"recovery parent {hits.get('parent', 0.0):.2f}, child {hits.get('child', 0.0):.2f} (bar 0.90), {elapsed:.0f}s",
    )
    assert hits.get("child", 0.0) >= 0.9, hits
    assert hits.get("parent", 0.0) >= 0.9, (
        hits,
        "parent-based recovery sits below the stated bar for every estimator "
        "variant tested; the zero-noise ceiling for this generator is ~0.92",
    )


def test_criterion_7_rejection_vs_conjugate():
    start = time.time()
    cfg = binomial_benchmark()
    model = _truth_model(cfg)
    orc = oracle(cfg)
    row = np.array([[9.0, np.nan, np.nan]])
    data = IncompleteDataset.from_values(row)
    r = P("100")
    m = 100_000
    conj = impute_conjugate(data, model, m, seed=0)

    def odds_fn(pattern, x):
        return np.exp(orc.total_log_odds(pattern, x))

    bound = composed_odds_bound(model, r)
    rej = impute_rejection(data, model.cc_model, odds_fn, {r: bound}, m, seed=1)
    a = np.array([c[0, 1:] for c in conj.completed])
    b = np.array([c[0, 1:] for c in rej.completed])
    p = energy_permutation_pvalue(a, b, n_perm=999, rng=np.random.default_rng(2), max_points=1200)
    elapsed = time.time() - start
    assert p > 0.001, p
    assert elapsed < 120.0
    _report("criterion 7", f"energy permutation p = {p:.3f} > 0.001 over {m} draws, {elapsed:.0f}s")


def test_criterion_8_block_structure():
    # fixed-seed statistical property: the masked pairs' correlations sit at
    # the pure-noise floor of B=500 replicates (see the calibration notes)
    start = time.time()
    cfg = binomial_benchmark_lncmv()
    sim = generate(cfg, 5000, seed=1)
    draws = bootstrap(sim.data, cfg.tree, cfg.family, 3, 500, EMConfig(), seed=1, workers=2)
    report = covariance_block_check(draws, cfg.tree, threshold=0.1)
    masked = [p for p in report.pairs if p["masked_independent"]]
    worst = max(p["max_abs_corr"] for p in masked)
    mean_level = float(np.mean([p["max_abs_corr"] for p in masked]))
    assert len(masked) == 8
    assert report.ok and worst < 0.1, (worst, report.violations)
    assert mean_level < 0.08
    ccmv_mask = covariance_block_check(
        bootstrap(generate(binomial_benchmark(), 2000, seed=2).data, build_ccmv(cfg.pattern_probs), cfg.family, 3, 50, EMConfig(), seed=2),
        build_ccmv(cfg.pattern_probs),
    )
    assert not any(p["masked_independent"] for p in ccmv_mask.pairs)
    elapsed = time.time() - start
    assert elapsed < 1200.0
    _report("criterion 8", f"masked max |corr| {worst:.3f} < 0.1, none masked under the shallow tree, {elapsed:.0f}s")


def test_criterion_9_invariance_suite():
    start = time.time()
    rng = np.random.default_rng(9)
    from oracles import random_mixture, random_valid_gamma

    # tilt(m, 0) == m exactly; tilt additivity at 1e-12
    for kind in ALL_KINDS:
        m = random_mixture(kind, 2, 3, rng)
        assert m.tilt(np.zeros(m.family.stat_dim)) == m
        g1 = random_valid_gamma(m, rng, scale=0.4)
        g2 = random_valid_gamma(m, rng, scale=0.4)
        a, b = m.tilt(g1).tilt(g2), m.tilt(g1 + g2)
        np.testing.assert_allclose(a.eta, b.eta, rtol=1e-12, atol=1e-13)
        np.testing.assert_allclose(a.log_w, b.log_w, rtol=1e-10, atol=1e-12)

    # composed-odds product identity at 1e-12
    fam = FamilySpec.binomial(3, 17)
    tree = TreeGraph.from_parent_map(3, {P("101"): P("111"), P("001"): P("101")})
    edges = {
        P("101"): EdgeOddsModel(P("101"), P("111"), -0.4, (("x1", 0.3), ("x3", 0.1))),
        P("001"): EdgeOddsModel(P("001"), P("101"), 0.2, (("x3", 0.25),)),
    }
    comp = compose(tree, edges, P("001"), fam)
    xs = np.random.default_rng(1).integers(0, 18, (20, 3)).astype(float)
    total = np.exp(comp.log_odds(xs))
    product = np.exp(edges[P("101")].log_odds(fam, xs)) * np.exp(edges[P("001")].log_odds(fam, xs))
    np.testing.assert_allclose(total, product, rtol=1e-12)

    # validate/enumerate agreement
    for d in (1, 2, 3):
        trees = list(enumerate_trees(all_patterns(d)))
        assert len(trees) == count_trees(d)
        assert all(validate(g).ok for g in trees)

    # identical ancestry forces identical derived models
    cfg = binomial_benchmark()
    sim = generate(cfg, 4000, seed=3)
    pm = {c: p for c, p in cfg.tree.edges}
    pm[P("010")] = P("111")
    alt = TreeGraph.from_parent_map(3, pm)
    fit_a = fit_full(sim.data, cfg.tree, cfg.family, 3, EMConfig(restarts=3), rng=np.random.default_rng(4))
    fit_b = fit_full(sim.data, alt, cfg.family, 3, EMConfig(restarts=3), rng=np.random.default_rng(4))
    assert fit_a.derived(P("001")) == fit_b.derived(P("001"))

    # perturb(model, 0) == model
    zero = perturb(fit_a, np.zeros(3))
    for r in fit_a.tree.patterns:
        assert zero.derived(r) == fit_a.derived(r)

    # observed entries identical across every imputed copy
    model = _truth_model(cfg)
    out = impute_conjugate(sim.data, model, 3, seed=5)
    obs = ~np.isnan(sim.data.values)
    for completed in out.completed:
        np.testing.assert_array_equal(completed[obs], sim.data.values[obs])
        assert not np.isnan(completed).any()

    elapsed = time.time() - start
    assert elapsed < 60.0
    _report("criterion 9", f"all invariance checks held, {elapsed:.0f}s")
