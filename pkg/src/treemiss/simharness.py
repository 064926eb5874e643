"""Synthetic incomplete-data generators with known truth, plus study runners.

The tree mechanism samples a pattern from its target frequencies and then a
row from that pattern's analytically tilted mixture, so the implied selection
odds are exactly log-linear in the configured coefficients and the pattern
marginals match the targets by construction.  The complement-odds mechanism
draws missingness conditionally on fully generated rows and solves the odds
constants so the marginals match.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .expfam import FamilySpec, MixtureModel, binomial_natural, gaussian_natural, log_g, kde_fit
from .fitting import EMConfig, FitError, fit_full
from .graphselect import fit_pattern_models, select_child_based, select_energy, select_parent_based
from .inference import bootstrap, flatten_model_params, summarize
from .odds import EdgeOddsModel, OddsConfig, compose, fit_edge
from .patterns import IncompleteDataset, MissingPattern, lex_sorted
from .treegraph import TreeGraph, build_lncmv
from .util import parallel_map, substream


@dataclass
class GeneratorConfig:
    """Mixture truth, a generating tree with per-edge log-odds, and pattern targets."""

    name: str
    family: FamilySpec
    weights: np.ndarray
    eta: np.ndarray
    tree: TreeGraph
    edge_coefs: dict[MissingPattern, dict[str, float]]
    pattern_probs: dict[MissingPattern, float]
    mechanism: str = "tree"  # "tree" | "complement-odds"
    complement_odds: dict[MissingPattern, dict[str, float]] | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, float)
        self.eta = np.asarray(self.eta, float)
        probs = np.array([self.pattern_probs[p] for p in lex_sorted(self.pattern_probs)])
        if (probs <= 0).any() or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("pattern probabilities must be positive and sum to 1")
        if self.mechanism not in ("tree", "complement-odds"):
            raise ValueError(f"unknown mechanism {self.mechanism!r}")


@dataclass
class OracleTruth:
    """Analytic per-pattern joints and odds implied by a generator configuration."""

    config: GeneratorConfig
    models: dict[MissingPattern, MixtureModel]
    composed: dict[MissingPattern, np.ndarray]
    intercepts: dict[MissingPattern, float]
    pattern_probs: dict[MissingPattern, float]

    def total_log_odds(self, r: MissingPattern, X) -> np.ndarray:
        """Exact log selection odds of r against the fully observed pattern."""
        from .expfam import suff_stats

        lam = self.composed[r]
        probs = self.pattern_probs
        full = self.config.tree.source
        base = np.log(probs[r]) - np.log(probs[full]) - self._log_z(lam)
        return base + suff_stats(self.config.family, np.atleast_2d(np.asarray(X, float))) @ lam

    def _log_z(self, lam: np.ndarray) -> float:
        lw = np.log(self.config.weights)
        return float(
            logsumexp(lw + log_g(self.config.family, self.config.eta) - log_g(self.config.family, self.config.eta + lam))
        )


@dataclass
class SimulatedData:
    data: IncompleteDataset
    full: np.ndarray
    oracle: OracleTruth


def edge_coef_vector(family: FamilySpec, coefs: dict[str, float]) -> np.ndarray:
    names = {name: i for i, name in enumerate(family.stat_names())}
    out = np.zeros(family.stat_dim)
    for name, value in coefs.items():
        out[names[name]] = value
    return out


def oracle(config: GeneratorConfig) -> OracleTruth:
    cc = MixtureModel.from_weights(config.family, config.weights, config.eta)
    fam = config.family
    edges = {
        child: EdgeOddsModel(child, config.tree.parent_of(child), 0.0, tuple(sorted(coefs.items())))
        for child, coefs in config.edge_coefs.items()
    }
    models = {config.tree.source: cc}
    composed = {config.tree.source: np.zeros(fam.stat_dim)}
    intercepts = {}
    for r in config.tree.non_source_patterns():
        lam = compose(config.tree, edges, r, fam).coefs
        composed[r] = lam
        models[r] = cc.tilt(lam)
    # per-edge intercepts implied by the pattern frequencies and weight shifts
    lw = np.log(config.weights)

    def log_z(lam):
        return float(logsumexp(lw + log_g(fam, config.eta) - log_g(fam, config.eta + lam)))

    for child in config.tree.non_source_patterns():
        parent = config.tree.parent_of(child)
        intercepts[child] = (
            np.log(config.pattern_probs[child])
            - np.log(config.pattern_probs[parent])
            + log_z(composed[parent])
            - log_z(composed[child])
        )
    return OracleTruth(config, models, composed, intercepts, dict(config.pattern_probs))


def _mask_rows(values: np.ndarray, pattern_idx: np.ndarray, patterns: list[MissingPattern]) -> IncompleteDataset:
    masked = np.array(values, copy=True)
    for i, p in enumerate(patterns):
        rows = np.nonzero(pattern_idx == i)[0]
        for j in p.missing:
            masked[rows, j] = np.nan
    return IncompleteDataset.from_values(masked)


def generate(config: GeneratorConfig, n: int, seed: int) -> SimulatedData:
    """Draw n rows of (values, pattern) from the configured full-data law."""
    truth = oracle(config)
    patterns = lex_sorted(config.pattern_probs)
    probs = np.array([config.pattern_probs[p] for p in patterns])
    rng = substream(seed, 0)
    if config.mechanism == "tree":
        pattern_idx = rng.choice(len(patterns), size=n, p=probs)
        full = np.empty((n, config.family.d))
        for i, p in enumerate(patterns):
            rows = np.nonzero(pattern_idx == i)[0]
            if rows.size:
                full[rows] = truth.models[p].sample(substream(seed, 1 + i), rows.size)
    else:
        full = truth.models[config.tree.source].sample(substream(seed, 1), n)
        pattern_idx = _complement_odds_patterns(config, full, patterns, probs, substream(seed, 2))
    data = _mask_rows(full, pattern_idx, patterns)
    return SimulatedData(data, full, truth)


def _complement_odds_patterns(config, full, patterns, probs, rng) -> np.ndarray:
    """Draw patterns from odds-vs-complement models with constants solved to hit targets."""
    from .expfam import suff_stats

    if config.complement_odds is None:
        raise ValueError("complement-odds mechanism needs odds coefficient dictionaries")
    fam = config.family
    stats = suff_stats(fam, full)
    nonbase = [p for p in patterns if p in config.complement_odds]
    base = [p for p in patterns if p not in config.complement_odds]
    if len(base) != 1:
        raise ValueError("exactly one pattern must be left as the odds baseline")
    scores = np.stack([stats @ edge_coef_vector(fam, config.complement_odds[p]) for p in nonbase], axis=1)
    consts = np.zeros(len(nonbase))
    target = np.array([config.pattern_probs[p] for p in nonbase])

    def probabilities(c):
        # odds-vs-complement per pattern; rows whose total tops 1 (possible in
        # unbounded tails) are renormalized so the mechanism stays a distribution
        pmat = expit(c + scores)
        return pmat / np.maximum(pmat.sum(axis=1, keepdims=True), 1.0)

    for _ in range(500):
        implied = probabilities(consts).mean(axis=0)
        step = np.log(target) - np.log(implied)
        consts = consts + step
        if np.abs(step).max() < 1e-10:
            break
    else:
        resid = dict(zip(map(str, nonbase), (probabilities(consts).mean(axis=0) - target).tolist()))
        raise FitError(f"odds constants failed to match the pattern targets: residuals {resid}")
    pmat = probabilities(consts)
    remainder = 1.0 - pmat.sum(axis=1)
    order = nonbase + base
    full_p = np.column_stack([pmat, remainder])
    idx_n = np.array([patterns.index(p) for p in order])
    u = rng.random(full.shape[0])
    cum = np.cumsum(full_p, axis=1)
    choice = (u[:, None] > cum).sum(axis=1)
    return idx_n[choice]


# ---------------------------------------------------------------------------
# built-in benchmark configurations


def binomial_benchmark(n_trials: int = 17, coef_scale: float = 1.0) -> GeneratorConfig:
    """Three bounded discrete variables, a 3-component mixture, six patterns."""
    d = 3
    fam = FamilySpec.binomial(d, n_trials)
    w = np.array([0.3, 0.5, 0.2])
    p = np.array([[0.70, 0.75, 0.70], [0.50, 0.50, 0.40], [0.20, 0.30, 0.10]])
    pat = {s: MissingPattern.from_string(s) for s in ("111", "110", "101", "100", "010", "001")}
    tree = TreeGraph.from_parent_map(
        d,
        {
            pat["110"]: pat["111"],
            pat["101"]: pat["111"],
            pat["100"]: pat["101"],
            pat["010"]: pat["110"],
            pat["001"]: pat["101"],
        },
    )
    c = coef_scale
    coefs = {
        pat["110"]: {"x1": 0.1 * c, "x2": 0.1 * c},
        pat["101"]: {"x1": 0.3 * c, "x3": 0.1 * c},
        pat["100"]: {"x1": -0.1 * c},
        pat["010"]: {"x2": 0.1 * c},
        pat["001"]: {"x3": 0.1 * c},
    }
    probs = {
        pat["111"]: 0.3,
        pat["110"]: 0.2,
        pat["101"]: 0.1,
        pat["100"]: 0.15,
        pat["010"]: 0.15,
        pat["001"]: 0.1,
    }
    return GeneratorConfig("binomial-benchmark", fam, w, binomial_natural(p), tree, coefs, probs)


def binomial_benchmark_mcar(n_trials: int = 17) -> GeneratorConfig:
    cfg = binomial_benchmark(n_trials, coef_scale=0.0)
    cfg.name = "binomial-benchmark-mcar"
    return cfg


def binomial_benchmark_lncmv(n_trials: int = 17) -> GeneratorConfig:
    """Same truth but missingness generated along the leftmost-flip tree."""
    cfg = binomial_benchmark(n_trials)
    tree = build_lncmv(cfg.pattern_probs)
    coefs = {}
    for child, cc in cfg.edge_coefs.items():
        coefs[child] = dict(cc)
    cfg.tree = tree
    cfg.edge_coefs = coefs
    cfg.name = "binomial-benchmark-lncmv"
    return cfg


def continuous_benchmark(mechanism: str = "tree") -> GeneratorConfig:
    """Three roughly standardized continuous variables over four patterns."""
    d = 3
    fam = FamilySpec.gaussian(d)
    w = np.array([0.6, 0.4])
    mu = np.array([[-0.7, -0.5, -0.6], [1.0, 0.75, 0.9]])
    var = np.array([[0.45, 0.6, 0.5], [0.5, 0.55, 0.45]])
    pat = {s: MissingPattern.from_string(s) for s in ("111", "110", "101", "001")}
    tree = TreeGraph.from_parent_map(d, {pat["110"]: pat["111"], pat["101"]: pat["111"], pat["001"]: pat["101"]})
    coefs = {
        pat["110"]: {"x1": 0.6, "x2": -0.3},
        pat["101"]: {"x1": -0.6, "x3": 0.3},
        pat["001"]: {"x3": 0.8},
    }
    probs = {pat["111"]: 0.3, pat["110"]: 0.3, pat["101"]: 0.2, pat["001"]: 0.2}
    cfg = GeneratorConfig(
        "continuous-benchmark",
        fam,
        w,
        gaussian_natural(mu, var),
        tree,
        coefs,
        probs,
        mechanism=mechanism,
        complement_odds={k: dict(v) for k, v in coefs.items()} if mechanism == "complement-odds" else None,
    )
    return cfg


# ---------------------------------------------------------------------------
# truth extraction for scoring


def truth_parameter_table(config: GeneratorConfig) -> dict[str, float]:
    """Truth values named like the flattened fitted parameters, canonically sorted."""
    cc = MixtureModel.from_weights(config.family, config.weights, config.eta).canonical()
    truth: dict[str, float] = {}
    from .expfam import standard_params

    for k in range(cc.k):
        truth[f"cc.w{k + 1}"] = float(cc.weights[k])
    std = standard_params(cc.family, cc.eta)
    for pname in sorted(std):
        arr = std[pname]
        for k in range(arr.shape[0]):
            for j in range(arr.shape[1]):
                truth[f"cc.{pname}{k + 1}.{j + 1}"] = float(arr[k, j])
    # intercepts are excluded: they absorb prior-odds terms whose count noise is
    # amplified by collinearity with the slopes and never enters the tilting
    for child in config.tree.non_source_patterns():
        for stat, coef in sorted(config.edge_coefs[child].items()):
            truth[f"odds.{child}.{stat}"] = float(coef)
    return truth


def _group_of(name: str) -> str:
    if name.startswith("cc.w"):
        return "w_cc"
    if name.startswith("cc."):
        return "theta_cc"
    return "beta"


# ---------------------------------------------------------------------------
# studies


def _consistency_task(args):
    config, n, rep, k, em_config, odds_config, seed = args
    sim = generate(config, n, int(substream(seed, n, rep).integers(2**32)))
    fit = fit_full(sim.data, config.tree, config.family, k, em_config, odds_config, substream(seed, n, rep, 1))
    names, _, values = flatten_model_params(fit)
    truth = truth_parameter_table(config)
    err: dict[str, list[float]] = {"theta_cc": [], "w_cc": [], "beta": []}
    for name, value in zip(names, values):
        if name in truth:
            err[_group_of(name)].append((value - truth[name]) ** 2)
    return {g: float(np.mean(v)) for g, v in err.items() if v}


def run_consistency(
    config: GeneratorConfig,
    n_grid,
    u: int = 50,
    k: int = 3,
    em_config: EMConfig = EMConfig(),
    odds_config: OddsConfig = OddsConfig(),
    seed: int = 0,
    workers: int = 1,
) -> list[dict]:
    """Mean squared error (x100) of each parameter group per sample size."""
    rows = []
    for n in n_grid:
        tasks = [(config, int(n), rep, k, em_config, odds_config, seed) for rep in range(u)]
        results = parallel_map(_consistency_task, tasks, workers)
        for group in ("theta_cc", "w_cc", "beta"):
            vals = [r[group] for r in results if group in r]
            rows.append({"group": group, "n": int(n), "u": u, "mse_x100": 100.0 * float(np.mean(vals))})
    return rows


def _coverage_task(args):
    config, n, rep, k, b, level, em_config, odds_config, seed = args
    sim = generate(config, n, int(substream(seed, rep).integers(2**32)))
    draws = bootstrap(
        sim.data, config.tree, config.family, k, b, em_config, odds_config,
        seed=int(substream(seed, rep, 1).integers(2**32)),
    )
    summary = summarize(draws, level)
    truth = truth_parameter_table(config)
    hits: dict[str, list[int]] = {"theta_cc": [], "w_cc": [], "beta": []}
    for name, row in summary["parameters"].items():
        if name in truth:
            hits[_group_of(name)].append(int(row["lo"] <= truth[name] <= row["hi"]))
    return {g: v for g, v in hits.items() if v}


def run_coverage(
    config: GeneratorConfig,
    n: int = 2000,
    u: int = 50,
    b: int = 200,
    k: int = 3,
    level: float = 0.95,
    em_config: EMConfig = EMConfig(),
    odds_config: OddsConfig = OddsConfig(),
    seed: int = 0,
    workers: int = 1,
) -> list[dict]:
    """Fraction of bootstrap confidence intervals covering the generating truth."""
    tasks = [(config, int(n), rep, k, b, level, em_config, odds_config, seed) for rep in range(u)]
    results = parallel_map(_coverage_task, tasks, workers)
    rows = []
    for group in ("theta_cc", "w_cc", "beta"):
        flat = [h for r in results for h in r.get(group, [])]
        if flat:
            rows.append({"group": group, "n": int(n), "u": u, "b": b, "coverage": float(np.mean(flat))})
    return rows


def tree_signature(tree: TreeGraph) -> str:
    return "|".join(f"{c}<-{p}" for c, p in tree.edges)


def _recovery_task(args):
    config, n, rep, k, em_config, seed, min_rows = args
    sim = generate(config, n, int(substream(seed, n, rep).integers(2**32)))
    models = fit_pattern_models(
        sim.data, config.family, k, em_config, seed=int(substream(seed, n, rep, 1).integers(2**32)), min_rows=min_rows
    )
    parent_tree, _ = select_parent_based(sim.data, config.family, k, em_config, 0, min_rows, models=models)
    child_tree, _ = select_child_based(sim.data, config.family, k, em_config, 0, min_rows, models=models)
    return tree_signature(parent_tree), tree_signature(child_tree)


def run_recovery(
    config: GeneratorConfig,
    n_grid,
    u: int = 50,
    k: int = 3,
    em_config: EMConfig = EMConfig(),
    seed: int = 0,
    workers: int = 1,
    min_rows: int = 20,
) -> list[dict]:
    """How often the alignment selectors recover the generating tree."""
    true_sig = tree_signature(config.tree)
    rows = []
    for n in n_grid:
        tasks = [(config, int(n), rep, k, em_config, seed, min_rows) for rep in range(u)]
        results = parallel_map(_recovery_task, tasks, workers)
        for method, idx in (("parent", 0), ("child", 1)):
            counts: dict[str, int] = {}
            for r in results:
                counts[r[idx]] = counts.get(r[idx], 0) + 1
            for sig, cnt in sorted(counts.items(), key=lambda kv: -kv[1]):
                rows.append(
                    {
                        "method": method,
                        "n": int(n),
                        "u": u,
                        "tree": sig,
                        "count": cnt,
                        "is_true": int(sig == true_sig),
                    }
                )
    return rows


# ---------------------------------------------------------------------------
# kernel-density studies on continuous data


def _kde_marginal_curve(model: MixtureModel, dim: int, grid: np.ndarray) -> np.ndarray:
    return model.marginal([dim]).density(grid[:, None])


def run_kde_study(
    mechanism: str = "tree",
    n: int = 1500,
    iters: int = 5,
    seed: int = 0,
    grid_points: int = 61,
    data_values: np.ndarray | None = None,
    min_rows: int = 20,
) -> dict:
    """Tilted-KDE recovery of per-pattern marginals on continuous data.

    ``mechanism='tree'`` masks by the known tree; ``'complement-odds'`` draws
    missingness from covariate-dependent odds and learns the tree by energy
    alignment.  ``data_values`` substitutes a user-supplied complete matrix for
    the synthetic rows (it is standardized, then masked by the same mechanism).
    """
    config = continuous_benchmark("tree" if mechanism == "tree" else "complement-odds")
    fam = config.family
    grid = np.linspace(-4.0, 4.0, grid_points)
    curves: dict[tuple[str, int, str], np.ndarray] = {}
    tree_counts: dict[str, int] = {}
    odds_config = OddsConfig(quadratic=False)

    for it in range(iters):
        it_seed = int(substream(seed, it).integers(2**32))
        if data_values is None:
            sim = generate(config, n, it_seed)
            full, data = sim.full, sim.data
        else:
            full = np.asarray(data_values, float)
            full = (full - full.mean(axis=0)) / full.std(axis=0)
            patterns = lex_sorted(config.pattern_probs)
            probs = np.array([config.pattern_probs[p] for p in patterns])
            rng = substream(it_seed, 3)
            if config.mechanism == "tree":
                raise FitError("user-supplied data requires the complement-odds mechanism")
            idx = _complement_odds_patterns(config, full, patterns, probs, rng)
            data = _mask_rows(full, idx, patterns)

        if mechanism == "tree":
            tree = config.tree
        else:
            tree, _ = select_energy(data, min_rows=min_rows)
        tree_counts[tree_signature(tree)] = tree_counts.get(tree_signature(tree), 0) + 1

        cc_kde = kde_fit(data.complete_values())
        kde_fam = cc_kde.family
        edges = {}
        for child in tree.non_source_patterns():
            edges[child] = fit_edge(data, child, tree.parent_of(child), kde_fam, odds_config)
        derived = {tree.source: cc_kde}
        for child in tree.non_source_patterns():
            lam = compose(tree, edges, child, kde_fam).coefs
            derived[child] = cc_kde.tilt(lam)

        for p in tree.non_source_patterns():
            oracle_kde = kde_fit(full[data.masks == p.mask])
            for dim in range(fam.d):
                observed_rows = data.values[~np.isnan(data.values[:, dim]), dim]
                avail_kde = kde_fit(observed_rows[:, None])
                for label, model in (
                    ("tree", derived[p]),
                    ("complete-case", cc_kde),
                    ("available-case", avail_kde),
                    ("oracle", oracle_kde),
                ):
                    dims = 0 if label == "available-case" else dim
                    curve = _kde_marginal_curve(model, dims, grid)
                    key = (str(p), dim, label)
                    curves[key] = curves.get(key, 0.0) + curve / iters

    rows = []
    for (pattern, dim, label), curve in sorted(curves.items()):
        for x, y in zip(grid, curve):
            rows.append(
                {"pattern": pattern, "dim": dim + 1, "estimator": label, "x": float(x), "density": float(y)}
            )
    return {"rows": rows, "trees": tree_counts, "grid": grid.tolist()}


def run_study(study: str, **kwargs) -> dict:
    """Dispatch a named study; returns a dict with a ``rows`` table."""
    if study == "consistency":
        return {"rows": run_consistency(**kwargs)}
    if study == "coverage":
        return {"rows": run_coverage(**kwargs)}
    if study == "recovery":
        return {"rows": run_recovery(**kwargs)}
    if study == "kde-mnar":
        return run_kde_study(mechanism="tree", **kwargs)
    if study == "kde-mar":
        return run_kde_study(mechanism="complement-odds", **kwargs)
    raise ValueError(f"unknown study {study!r}")
