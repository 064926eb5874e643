import numpy as np
import pytest

from treemiss.expfam import FamilySpec, MixtureModel, pareto_natural
from treemiss.odds import EdgeOddsModel, OddsConfig, OddsFitError, compose, fit_edge
from treemiss.patterns import IncompleteDataset, MissingPattern
from treemiss.simharness import binomial_benchmark, oracle
from treemiss.treegraph import TreeGraph

P = MissingPattern.from_string


def stack_two_patterns(x_child, x_parent, child: MissingPattern):
    """Dataset holding child rows (masked) above fully observed parent rows."""
    d = x_parent.shape[1]
    vals = np.vstack([x_child, x_parent]).astype(float)
    vals[: len(x_child), list(child.missing)] = np.nan
    masks = np.concatenate(
        [np.full(len(x_child), child.mask), np.full(len(x_parent), (1 << d) - 1)]
    )
    return IncompleteDataset(vals, masks)


def test_fit_edge_recovers_generating_coefficients():
    cfg = binomial_benchmark()
    orc = oracle(cfg)
    rng = np.random.default_rng(0)
    n = 100_000
    child, parent = P("101"), P("111")
    data = stack_two_patterns(
        orc.models[child].sample(rng, n), orc.models[parent].sample(rng, n), child
    )
    edge = fit_edge(data, child, parent, cfg.family)
    coefs = edge.coef_dict
    assert abs(coefs["x1"] - 0.3) < 0.05
    assert abs(coefs["x3"] - 0.1) < 0.05
    assert set(coefs) == {"x1", "x3"}
    assert not edge.separation


def test_fit_edge_null_when_label_independent():
    cfg = binomial_benchmark()
    orc = oracle(cfg)
    rng = np.random.default_rng(1)
    n = 100_000
    child, parent = P("110"), P("111")
    base = orc.models[parent]
    data = stack_two_patterns(base.sample(rng, n), base.sample(rng, n), child)
    edge = fit_edge(data, child, parent, cfg.family)
    for value in edge.coef_dict.values():
        assert abs(value) < 0.02


def test_fit_edge_row_requirements():
    cfg = binomial_benchmark()
    orc = oracle(cfg)
    rng = np.random.default_rng(2)
    child, parent = P("110"), P("111")
    parent_rows = orc.models[parent].sample(rng, 50)
    data = IncompleteDataset.from_values(parent_rows)
    with pytest.raises(OddsFitError, match="no rows"):
        fit_edge(data, child, parent, cfg.family)
    thin = stack_two_patterns(orc.models[child].sample(rng, 3), parent_rows, child)
    with pytest.raises(OddsFitError, match="at least 5"):
        fit_edge(thin, child, parent, cfg.family)


def test_fit_edge_order_invariance():
    cfg = binomial_benchmark()
    orc = oracle(cfg)
    rng = np.random.default_rng(3)
    child, parent = P("110"), P("111")
    data = stack_two_patterns(
        orc.models[child].sample(rng, 400), orc.models[parent].sample(rng, 400), child
    )
    perm = np.random.default_rng(9).permutation(data.n)
    shuffled = IncompleteDataset(np.array(data.values[perm]), np.array(data.masks[perm]))
    e1 = fit_edge(data, child, parent, cfg.family)
    e2 = fit_edge(shuffled, child, parent, cfg.family)
    assert e1 == e2


def test_fit_edge_separation_fallback():
    # child rows all at x1=0, parent rows all at x1=N: perfectly separated
    fam = FamilySpec.binomial(2, 6)
    child, parent = P("10"), P("11")
    x_child = np.column_stack([np.zeros(30), np.zeros(30)])
    x_parent = np.column_stack([np.full(30, 6.0), np.full(30, 6.0)])
    data = stack_two_patterns(x_child, x_parent, child)
    edge = fit_edge(data, child, parent, fam)
    assert edge.separation
    assert np.isfinite(edge.coef_dict["x1"])


def test_fit_edge_gaussian_quadratic_toggle():
    fam = FamilySpec.gaussian(2)
    rng = np.random.default_rng(4)
    child, parent = P("10"), P("11")
    x_child = rng.normal(0.5, 1, (300, 2))
    x_parent = rng.normal(0.0, 1, (300, 2))
    data = stack_two_patterns(x_child, x_parent, child)
    full = fit_edge(data, child, parent, fam)
    assert set(full.coef_dict) == {"x1", "x1^2"}
    linear = fit_edge(data, child, parent, fam, OddsConfig(quadratic=False))
    assert set(linear.coef_dict) == {"x1"}


def test_fit_edge_pareto_closed_form():
    rng = np.random.default_rng(5)
    fam = FamilySpec.pareto(2, (2.0, 1.0))
    child, parent = P("10"), P("11")
    m_parent = MixtureModel.from_weights(fam, [1.0], pareto_natural([[3.0, 2.0]]))
    m_child = MixtureModel.from_weights(fam, [1.0], pareto_natural([[2.0, 2.0]]))
    n = 50_000
    data = stack_two_patterns(m_child.sample(rng, n), m_parent.sample(rng, n), child)
    edge = fit_edge(data, child, parent, fam)
    # power coefficient = parent shape minus child shape = 3 - 2 = 1
    assert edge.coef_dict["log(x1)"] == pytest.approx(1.0, abs=0.05)


def test_compose_source_is_empty():
    cfg = binomial_benchmark()
    comp = compose(cfg.tree, {}, P("111"), cfg.family)
    assert comp.intercept == 0.0
    np.testing.assert_array_equal(comp.coefs, np.zeros(3))


def test_compose_missing_edge_error():
    cfg = binomial_benchmark()
    with pytest.raises(OddsFitError, match="101"):
        compose(cfg.tree, {}, P("101"), cfg.family)


def _edges_fixture(fam):
    e_101 = EdgeOddsModel(P("101"), P("111"), -0.4, (("x1", 0.3), ("x3", 0.1)))
    e_001 = EdgeOddsModel(P("001"), P("101"), 0.2, (("x3", 0.25),))
    tree = TreeGraph.from_parent_map(3, {P("101"): P("111"), P("001"): P("101")})
    return tree, {P("101"): e_101, P("001"): e_001}


def test_compose_chain_embeds_and_sums():
    fam = FamilySpec.binomial(3, 17)
    tree, edges = _edges_fixture(fam)
    comp = compose(tree, edges, P("001"), fam)
    np.testing.assert_allclose(comp.coefs, [0.3, 0.0, 0.35])
    assert comp.intercept == pytest.approx(-0.2)


def test_compose_product_identity_at_machine_precision():
    fam = FamilySpec.binomial(3, 17)
    tree, edges = _edges_fixture(fam)
    comp = compose(tree, edges, P("001"), fam)
    rng = np.random.default_rng(6)
    xs = rng.integers(0, 18, (20, 3)).astype(float)
    total = comp.log_odds(xs)
    via_edges = edges[P("101")].log_odds(fam, xs) + edges[P("001")].log_odds(fam, xs)
    np.testing.assert_allclose(np.exp(total), np.exp(via_edges), rtol=1e-12)


def test_compose_prefix_consistency():
    fam = FamilySpec.binomial(3, 17)
    tree, edges = _edges_fixture(fam)
    comp_child = compose(tree, edges, P("001"), fam)
    comp_parent = compose(tree, edges, P("101"), fam)
    np.testing.assert_allclose(
        comp_child.coefs, comp_parent.coefs + edges[P("001")].coef_vector(fam), rtol=0, atol=0
    )
    assert comp_child.intercept == pytest.approx(comp_parent.intercept + edges[P("001")].intercept)


def test_compose_ccmv_single_edge():
    cfg = binomial_benchmark()
    fam = cfg.family
    from treemiss.treegraph import build_ccmv

    tree = build_ccmv(cfg.pattern_probs)
    edge = EdgeOddsModel(P("001"), P("111"), -1.0, (("x3", 0.4),))
    comp = compose(tree, {P("001"): edge}, P("001"), fam)
    np.testing.assert_array_equal(comp.coefs, edge.coef_vector(fam))
    assert comp.intercept == edge.intercept


def test_coefs_restricted_to_child_statistics():
    fam = FamilySpec.binomial(3, 17)
    edge = EdgeOddsModel(P("101"), P("111"), 0.0, (("x1", 0.5), ("x3", -0.2)))
    vec = edge.coef_vector(fam)
    assert vec[1] == 0.0  # x2 untouched
    with pytest.raises(ValueError, match="layout"):
        EdgeOddsModel(P("101"), P("111"), 0.0, (("x9", 1.0),)).coef_vector(fam)


def test_edge_serialization_round_trip():
    edge = EdgeOddsModel(P("101"), P("111"), -0.25, (("x1", 0.3), ("x3", 0.1)), separation=True, n_child=10, n_parent=20)
    assert EdgeOddsModel.from_dict(edge.to_dict()) == edge
