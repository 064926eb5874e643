import json

import numpy as np
import pytest
from scipy import stats

from oracles import (
    eval_points_for,
    numeric_normalization,
    numeric_tilted_density,
    random_mixture,
    random_valid_gamma,
)
from treemiss.expfam import (
    Component,
    FamilySpec,
    InvalidTiltError,
    MixtureModel,
    SupportError,
    beta_natural,
    binomial_natural,
    dirichlet_natural,
    gaussian_natural,
    kde_fit,
    pareto_natural,
    power_tilt,
    standard_params,
)

ALL_KINDS = (
    "gaussian-diag",
    "binomial-product",
    "negative-binomial",
    "pareto",
    "beta",
    "dirichlet",
    "gaussian-kde",
)


def std_normal(d=1):
    return MixtureModel.from_weights(
        FamilySpec.gaussian(d), [1.0], gaussian_natural(np.zeros((1, d)), np.ones((1, d)))
    )


# ---------------------------------------------------------------------------
# construction and validation


def test_family_spec_validation():
    with pytest.raises(ValueError):
        FamilySpec.binomial(2, [0, 3])
    with pytest.raises(ValueError):
        FamilySpec.pareto(1, 0.0)
    with pytest.raises(ValueError):
        FamilySpec.negbin(1, -1.0)
    with pytest.raises(ValueError):
        FamilySpec("nope", 2)
    spec = FamilySpec.binomial(3, 17)
    assert spec.trials == (17, 17, 17)
    assert spec.stat_names() == ["x1", "x2", "x3"]
    assert FamilySpec.gaussian(2).stat_names() == ["x1", "x1^2", "x2", "x2^2"]


def test_weights_must_sum_to_one():
    eta = binomial_natural([[0.5], [0.2]])
    with pytest.raises(ValueError, match="sum to 1"):
        MixtureModel.from_weights(FamilySpec.binomial(1, 2), [0.6, 0.5], eta)
    with pytest.raises(ValueError, match="positive"):
        MixtureModel.from_weights(FamilySpec.binomial(1, 2), [1.0, 0.0], eta)


def test_mixed_families_rejected():
    a = Component(FamilySpec.binomial(1, 2), (0.0,))
    b = Component(FamilySpec.gaussian(1), (0.0, -0.5))
    with pytest.raises(ValueError, match="share one family"):
        MixtureModel.from_components([a, b], [0.5, 0.5])


def test_domain_checked_at_construction():
    with pytest.raises(ValueError, match="negative"):
        MixtureModel.from_weights(FamilySpec.gaussian(1), [1.0], [[0.0, 0.5]])


# ---------------------------------------------------------------------------
# densities


def test_gaussian_log_density_at_mode():
    m = std_normal()
    assert m.log_density([[0.0]])[0] == pytest.approx(np.log(1 / np.sqrt(2 * np.pi)), abs=1e-12)


def test_binomial_log_density_example():
    m = MixtureModel.from_weights(FamilySpec.binomial(1, 2), [1.0], binomial_natural([[0.5]]))
    assert m.log_density([[1.0]])[0] == pytest.approx(np.log(0.5), abs=1e-12)


def test_densities_against_scipy():
    rng = np.random.default_rng(0)
    m = random_mixture("negative-binomial", 1, 2, rng)
    xs = np.arange(0, 30.0)[:, None]
    p = np.exp(m.eta[:, 0])
    r = m.family.failures[0]
    expected = (m.weights[None, :] * stats.nbinom.pmf(xs, r, 1 - p)).sum(axis=1)
    np.testing.assert_allclose(m.density(xs), expected, rtol=1e-10)

    m = random_mixture("beta", 1, 2, rng)
    xs = np.linspace(0.05, 0.95, 19)[:, None]
    a, b = m.eta[:, 0] + 1, m.eta[:, 1] + 1
    expected = (m.weights[None, :] * stats.beta.pdf(xs, a, b)).sum(axis=1)
    np.testing.assert_allclose(m.density(xs), expected, rtol=1e-10)

    m = random_mixture("pareto", 1, 1, rng)
    alpha = -1 - m.eta[0, 0]
    scale = m.family.scale[0]
    xs = np.linspace(scale, scale * 5, 9)[:, None]
    np.testing.assert_allclose(
        m.density(xs)[1:], stats.pareto.pdf(xs[1:, 0], alpha, scale=scale), rtol=1e-10
    )

    m = random_mixture("dirichlet", 2, 1, rng)
    alpha = m.eta[0] + 1
    xs = np.column_stack([np.linspace(0.1, 0.9, 9), 1 - np.linspace(0.1, 0.9, 9)])
    np.testing.assert_allclose(
        m.density(xs), [stats.dirichlet.pdf(x, alpha) for x in xs], rtol=1e-8
    )


def test_support_errors():
    m = MixtureModel.from_weights(FamilySpec.binomial(1, 2), [1.0], binomial_natural([[0.5]]))
    with pytest.raises(SupportError):
        m.log_density([[3.5]])
    p = MixtureModel.from_weights(FamilySpec.pareto(1, 2.0), [1.0], pareto_natural([[3.0]]))
    with pytest.raises(SupportError):
        p.log_density([[1.0]])
    d = MixtureModel.from_weights(FamilySpec.dirichlet(2), [1.0], dirichlet_natural([[2.0, 2.0]]))
    with pytest.raises(SupportError):
        d.log_density([[0.5, 0.4]])


def test_normalization_all_families():
    rng = np.random.default_rng(42)
    for kind in ALL_KINDS:
        for d in (1, 2):
            if kind == "dirichlet" and d == 1:
                continue
            m = random_mixture(kind, d, 2, rng)
            z = numeric_normalization(m, points=4001 if d == 1 else 801)
            assert z == pytest.approx(1.0, abs=2e-6), (kind, d)


# ---------------------------------------------------------------------------
# tilting


def test_tilt_gaussian_example():
    m = std_normal()
    t = m.tilt([1.0, 0.0])
    std = standard_params(t.family, t.eta)
    assert std["mu"][0, 0] == pytest.approx(1.0, abs=1e-12)
    assert std["var"][0, 0] == pytest.approx(1.0, abs=1e-12)
    xs = np.linspace(-6, 7, 27)[:, None]
    oracle = numeric_tilted_density(m, [1.0, 0.0], xs, points=20001)
    np.testing.assert_allclose(t.density(xs), oracle, atol=1e-8)


def test_tilt_binomial_examples():
    m = MixtureModel.from_weights(FamilySpec.binomial(1, 1), [1.0], binomial_natural([[0.5]]))
    t = m.tilt([np.log(3.0)])
    assert standard_params(t.family, t.eta)["p"][0, 0] == pytest.approx(0.75, abs=1e-12)
    # renormalization oracle over {0, 1}
    unnorm = np.array([0.5 * 1.0, 0.5 * 3.0])
    np.testing.assert_allclose(t.density(np.array([[0.0], [1.0]])), unnorm / unnorm.sum(), atol=1e-12)


def test_tilt_zero_is_exact_identity():
    rng = np.random.default_rng(1)
    for kind in ALL_KINDS:
        m = random_mixture(kind, 2, 3, rng)
        t = m.tilt(np.zeros(m.family.stat_dim))
        assert t == m, kind


def test_tilt_additivity():
    rng = np.random.default_rng(2)
    for kind in ALL_KINDS:
        m = random_mixture(kind, 2, 3, rng)
        g1 = random_valid_gamma(m, rng, scale=0.4)
        g2 = random_valid_gamma(m, rng, scale=0.4)
        a = m.tilt(g1).tilt(g2)
        b = m.tilt(g1 + g2)
        np.testing.assert_allclose(a.eta, b.eta, rtol=1e-12, atol=1e-13)
        np.testing.assert_allclose(a.log_w, b.log_w, rtol=1e-10, atol=1e-12)


def test_invalid_tilt_reports_component_and_coordinate():
    m = std_normal()
    with pytest.raises(InvalidTiltError, match="component 1"):
        m.tilt([0.0, 1.0])
    try:
        m.tilt([0.0, 1.0])
    except InvalidTiltError as err:
        assert err.component == 0 and err.coordinate == 0


def test_power_tilt_examples():
    pareto = Component(FamilySpec.pareto(1, 1.0), tuple(pareto_natural([[3.0]])[0]))
    shifted = power_tilt(pareto, [1.0])
    assert shifted.standard()["alpha"][0] == pytest.approx(2.0)
    beta = Component(FamilySpec.beta(1), tuple(beta_natural([[2.0]], [[2.0]])[0]))
    same = power_tilt(beta, [0.0, 0.0])
    assert same.standard()["alpha"][0] == pytest.approx(2.0)
    assert same.standard()["beta"][0] == pytest.approx(2.0)
    low = Component(FamilySpec.pareto(1, 1.0), tuple(pareto_natural([[1.0]])[0]))
    with pytest.raises(InvalidTiltError):
        power_tilt(low, [2.0])


def test_conjugacy_oracle_quick():
    rng = np.random.default_rng(3)
    for kind in ALL_KINDS:
        for d in (1, 2):
            if kind == "dirichlet" and d == 1:
                continue
            m = random_mixture(kind, d, 2, rng)
            for _ in range(5):
                gamma = random_valid_gamma(m, rng, scale=0.5)
                tilted = m.tilt(gamma)
                xs = eval_points_for(m, rng, 15)
                oracle = numeric_tilted_density(m, gamma, xs, points=4001 if d == 1 else 801)
                np.testing.assert_allclose(tilted.density(xs), oracle, atol=1e-6, rtol=2e-6)


# ---------------------------------------------------------------------------
# conditionals and marginals


def test_conditional_single_component():
    rng = np.random.default_rng(4)
    m = random_mixture("gaussian-diag", 3, 1, rng)
    c = m.conditional([0, 2], [0.3, -0.4])
    assert c.k == 1 and c.d == 1
    np.testing.assert_allclose(c.weights, [1.0])
    np.testing.assert_allclose(c.eta[:, :], m.eta[:, 2:4])


def test_conditional_bayes_weights():
    # component densities at x1=1 (N=1): 0.6 vs 0.2, equal priors -> (0.75, 0.25)
    m = MixtureModel.from_weights(
        FamilySpec.binomial(2, 1), [0.5, 0.5], binomial_natural([[0.6, 0.5], [0.2, 0.5]])
    )
    c = m.conditional([0], [1.0])
    np.testing.assert_allclose(c.weights, [0.75, 0.25], atol=1e-12)


def test_conditional_full_observation_degenerate():
    m = random_mixture("binomial-product", 2, 2, np.random.default_rng(5))
    c = m.conditional([0, 1], [1.0, 2.0])
    assert c.d == 0
    assert c.sample(np.random.default_rng(0), 4).shape == (4, 0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_conditional_impossible_observation():
    fam = FamilySpec.gaussian(2)
    eta = gaussian_natural(np.array([[1e200, 0.0]]), np.ones((1, 2)))
    m = MixtureModel.from_weights(fam, [1.0], eta)
    with pytest.raises(ValueError, match="impossible"):
        m.conditional([0], [0.0])


def test_conditional_product_rule():
    rng = np.random.default_rng(6)
    m = random_mixture("binomial-product", 2, 3, rng)
    n1, n2 = m.family.trials
    marg = m.marginal([0])
    for x1 in range(n1 + 1):
        cond = m.conditional([0], [float(x1)])
        for x2 in range(n2 + 1):
            joint = m.density([[x1, x2]])[0]
            assert joint == pytest.approx(
                marg.density([[x1]])[0] * cond.density([[x2]])[0], rel=1e-10
            )


def test_dirichlet_conditional_sampling():
    rng = np.random.default_rng(7)
    m = random_mixture("dirichlet", 3, 2, rng)
    cond = m.conditional([0], [0.25])
    draws = cond.sample(rng, 200)
    np.testing.assert_allclose(draws.sum(axis=1), 0.75, atol=1e-9)
    assert (draws > 0).all()
    # single missing coordinate is deterministic
    cond1 = m.conditional([0, 1], [0.25, 0.4])
    np.testing.assert_allclose(cond1.sample(rng, 5)[:, 0], 0.35, atol=1e-12)


def test_marginal_dirichlet_unsupported():
    m = random_mixture("dirichlet", 3, 1, np.random.default_rng(8))
    with pytest.raises(ValueError):
        m.marginal([0, 1])


# ---------------------------------------------------------------------------
# sampling, means, kde


def test_sampling_recovers_weights():
    fam = FamilySpec.gaussian(1)
    m = MixtureModel.from_weights(
        fam, [0.3, 0.7], gaussian_natural([[0.0], [10.0]], [[1.0], [1.0]])
    )
    draws = m.sample(np.random.default_rng(9), 100_000)
    frac = float((draws[:, 0] > 5.0).mean())
    assert abs(frac - 0.7) < 0.01


def test_mean_matches_monte_carlo():
    rng = np.random.default_rng(10)
    for kind in ("gaussian-diag", "binomial-product", "negative-binomial", "beta", "dirichlet"):
        m = random_mixture(kind, 2, 2, rng)
        draws = m.sample(np.random.default_rng(11), 200_000)
        np.testing.assert_allclose(m.mean(), draws.mean(axis=0), atol=0.05)


def test_kde_fit_structure():
    rng = np.random.default_rng(12)
    data = rng.normal(0, 1, (5, 2))
    m = kde_fit(data)
    assert m.k == 5
    np.testing.assert_allclose(m.weights, 0.2)
    assert m.family.kind == "gaussian-kde"
    assert all(h > 0 for h in m.family.bandwidth)
    std = standard_params(m.family, m.eta)
    np.testing.assert_allclose(np.sort(std["mu"][:, 0]), np.sort(data[:, 0]))


def test_kde_tilt_stays_weighted_kde():
    rng = np.random.default_rng(13)
    m = kde_fit(rng.normal(0, 1, (40, 1)))
    t = m.tilt([0.8, 0.0])
    assert t.family.kind == "gaussian-kde"
    assert t.k == 40
    assert not np.allclose(t.weights, m.weights)
    xs = np.linspace(-5, 6, 23)[:, None]
    oracle = numeric_tilted_density(m, [0.8, 0.0], xs, points=20001)
    np.testing.assert_allclose(t.density(xs), oracle, atol=1e-7)


def test_kde_rejects_bad_input():
    rng = np.random.default_rng(14)
    with pytest.raises(ValueError, match="gaussian kernel"):
        kde_fit(rng.normal(size=(10, 1)), spec=FamilySpec.binomial(1, 3))
    with pytest.raises(ValueError, match="two rows"):
        kde_fit(np.zeros((1, 2)))
    bad = rng.normal(size=(6, 2))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError, match="fully observed"):
        kde_fit(bad)


# ---------------------------------------------------------------------------
# persistence


def test_json_round_trip_exact(tmp_path):
    rng = np.random.default_rng(15)
    for kind in ALL_KINDS:
        m = random_mixture(kind, 2, 3, rng)
        doc = json.loads(json.dumps(m.to_dict()))
        back = MixtureModel.from_dict(doc)
        assert back == m, kind
    m = random_mixture("binomial-product", 2, 2, rng)
    path = tmp_path / "model.json"
    m.save(path)
    first = path.read_bytes()
    MixtureModel.load(path).save(path)
    assert path.read_bytes() == first


def test_canonical_sort():
    fam = FamilySpec.binomial(1, 5)
    m = MixtureModel.from_weights(fam, [0.3, 0.7], binomial_natural([[0.8], [0.2]]))
    c = m.canonical()
    assert c.eta[0, 0] < c.eta[1, 0]
    np.testing.assert_allclose(c.weights, [0.7, 0.3])
