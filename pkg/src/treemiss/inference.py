"""Resampling-based uncertainty: parameter bootstrap and bootstrap-plus-imputation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .expfam import standard_params
from .fitting import EMConfig, FitError, FittedFullModel, fit_full
from .impute import impute_conjugate
from .odds import OddsConfig
from .patterns import IncompleteDataset, MissingPattern, lex_sorted
from .treegraph import TreeGraph, sibling_moral_graph
from .util import parallel_map, substream


def flatten_model_params(model: FittedFullModel):
    """Canonically ordered parameter vector with names and per-pattern block labels.

    The complete-case block carries the mixture weights and standard
    parameters; each edge block carries its intercept and named coefficients.
    """
    names: list[str] = []
    blocks: list[MissingPattern] = []
    values: list[float] = []
    cc = model.cc_model.canonical()
    src = model.tree.source
    for k in range(cc.k):
        names.append(f"cc.w{k + 1}")
        blocks.append(src)
        values.append(float(cc.weights[k]))
    std = standard_params(cc.family, cc.eta)
    for pname in sorted(std):
        arr = std[pname]
        for k in range(arr.shape[0]):
            for j in range(arr.shape[1]):
                names.append(f"cc.{pname}{k + 1}.{j + 1}")
                blocks.append(src)
                values.append(float(arr[k, j]))
    for child in model.tree.non_source_patterns():
        edge = model.edges[child]
        names.append(f"odds.{child}.intercept")
        blocks.append(child)
        values.append(float(edge.intercept))
        for stat, coef in edge.coefs:
            names.append(f"odds.{child}.{stat}")
            blocks.append(child)
            values.append(float(coef))
    return names, blocks, np.asarray(values)


@dataclass
class BootstrapDraws:
    """Replicate parameter sets from refits on with-replacement resamples."""

    names: list[str]
    blocks: list[MissingPattern]
    point: np.ndarray
    values: np.ndarray  # (B_ok, P)
    failed: int
    requested: int
    seed: int
    functional: np.ndarray | None = None
    functional_point: float | None = None

    @property
    def b(self) -> int:
        return self.values.shape[0]


def _resample(data: IncompleteDataset, rng) -> IncompleteDataset:
    idx = rng.integers(0, data.n, data.n)
    return IncompleteDataset(np.array(data.values[idx]), np.array(data.masks[idx]))


def _bootstrap_task(args):
    (b, seed, data, tree, family, k, em_config, odds_config, retries, init_model, m, functional) = args
    for attempt in range(retries + 1):
        rng = substream(seed, b, attempt)
        sample = _resample(data, rng)
        try:
            fit = fit_full(sample, tree, family, k, em_config, odds_config, rng, init_model=init_model)
        except FitError:
            continue
        _, _, vec = flatten_model_params(fit)
        svalue = None
        if functional is not None:
            imp = impute_conjugate(sample, fit, m, int(rng.integers(2**32)))
            svalue = float(functional(imp.pooled()))
        return vec, svalue
    return None, None


def _run_bootstrap(
    data,
    tree,
    family,
    k,
    b,
    em_config,
    odds_config,
    seed,
    workers,
    retries,
    max_failed_frac,
    warm_start,
    m=None,
    functional=None,
):
    base = fit_full(data, tree, family, k, em_config, odds_config, substream(seed))
    names, blocks, point = flatten_model_params(base)
    init_model = base.cc_model if warm_start else None
    # warm-started replicates refit from the point estimate with a single run
    rep_config = EMConfig(
        tol=em_config.tol,
        max_iter=em_config.max_iter,
        restarts=1,
        min_weight=em_config.min_weight,
        var_floor=em_config.var_floor,
        prob_clip=em_config.prob_clip,
    )
    tasks = [
        (i, seed, data, tree, family, k, rep_config, odds_config, retries, init_model, m, functional)
        for i in range(b)
    ]
    results = parallel_map(_bootstrap_task, tasks, workers)
    vectors = [v for v, _ in results if v is not None]
    svalues = [s for v, s in results if v is not None]
    failed = b - len(vectors)
    if failed > max_failed_frac * b:
        raise FitError(
            f"{failed}/{b} bootstrap replicates failed (rare patterns vanish under resampling); "
            "prune thin patterns via a representor and refit"
        )
    functional_values = None
    functional_point = None
    if functional is not None:
        imp = impute_conjugate(data, base, m, int(substream(seed, 2**31 - 1).integers(2**32)))
        functional_point = float(functional(imp.pooled()))
        functional_values = np.asarray([s for s in svalues], float)
    return BootstrapDraws(
        names,
        blocks,
        point,
        np.vstack(vectors) if vectors else np.zeros((0, len(names))),
        failed,
        b,
        seed,
        functional=functional_values,
        functional_point=functional_point,
    )


def bootstrap(
    data: IncompleteDataset,
    tree: TreeGraph,
    family,
    k: int,
    b: int,
    em_config: EMConfig = EMConfig(),
    odds_config: OddsConfig = OddsConfig(),
    seed: int = 0,
    workers: int = 1,
    retries: int = 3,
    max_failed_frac: float = 0.1,
    warm_start: bool = True,
) -> BootstrapDraws:
    """B refits on i.i.d.-with-replacement resamples of the full dataset.

    Replicates that lose a rare pattern are redrawn up to ``retries`` times and
    recorded as failed afterwards; more than ``max_failed_frac`` failures abort.
    """
    if b < 2:
        raise FitError("bootstrap needs at least 2 replicates")
    return _run_bootstrap(
        data, tree, family, k, b, em_config, odds_config, seed, workers, retries, max_failed_frac, warm_start
    )


def bootstrap_mi(
    data: IncompleteDataset,
    tree: TreeGraph,
    family,
    k: int,
    b: int,
    m: int,
    functional,
    em_config: EMConfig = EMConfig(),
    odds_config: OddsConfig = OddsConfig(),
    seed: int = 0,
    workers: int = 1,
    retries: int = 3,
    max_failed_frac: float = 0.1,
    warm_start: bool = True,
) -> BootstrapDraws:
    """Bootstrap a statistical functional evaluated on pooled multiple imputations.

    Each replicate refits on its resample, imputes it m times, pools the
    completed copies into one empirical distribution, and applies the functional.
    """
    if b < 2:
        raise FitError("bootstrap needs at least 2 replicates")
    if m < 1:
        raise FitError("m must be at least 1")
    return _run_bootstrap(
        data, tree, family, k, b, em_config, odds_config, seed, workers, retries,
        max_failed_frac, warm_start, m=m, functional=functional,
    )


def summarize(draws: BootstrapDraws, level: float = 0.95, percentile: bool = False) -> dict:
    """Standard errors and confidence intervals from the replicate spread.

    Replicates are canonicalized (sorted) first so summaries cannot depend on
    replicate order.
    """
    if not 0 < level < 1:
        raise ValueError("confidence level must be in (0, 1)")
    z = float(norm.ppf(0.5 + level / 2.0))
    vals = np.array(draws.values)
    if vals.shape[0] > 1:
        order = np.lexsort(tuple(vals[:, j] for j in range(vals.shape[1] - 1, -1, -1)))
        vals = vals[order]
    se = vals.std(axis=0, ddof=1) if vals.shape[0] > 1 else np.zeros(vals.shape[1])
    out = {
        "level": level,
        "z": z,
        "b": int(vals.shape[0]),
        "failed": draws.failed,
        "parameters": {},
    }
    for i, name in enumerate(draws.names):
        est = float(draws.point[i])
        row = {"estimate": est, "se": float(se[i]), "lo": est - z * float(se[i]), "hi": est + z * float(se[i])}
        if percentile and vals.shape[0] > 1:
            row["lo_pct"] = float(np.quantile(vals[:, i], 0.5 - level / 2.0))
            row["hi_pct"] = float(np.quantile(vals[:, i], 0.5 + level / 2.0))
        out["parameters"][name] = row
    if draws.functional is not None:
        fvals = np.sort(np.array(draws.functional))
        fse = fvals.std(ddof=1) if len(fvals) > 1 else 0.0
        est = float(draws.functional_point)
        out["functional"] = {
            "estimate": est,
            "se": float(fse),
            "lo": est - z * float(fse),
            "hi": est + z * float(fse),
        }
    return out


# ---------------------------------------------------------------------------
# block structure of the replicate covariance


@dataclass
class CovarianceBlockMask:
    """Which per-pattern parameter blocks may correlate (adjacent in the moral graph)."""

    patterns: tuple[MissingPattern, ...]
    matrix: np.ndarray  # boolean; False = the blocks are independent by the tree structure

    @classmethod
    def from_tree(cls, tree: TreeGraph) -> "CovarianceBlockMask":
        moral = sibling_moral_graph(tree)
        pats = tuple(lex_sorted(tree.patterns))
        n = len(pats)
        mat = np.eye(n, dtype=bool)
        for i in range(n):
            for j in range(i + 1, n):
                adj = moral.adjacent(pats[i], pats[j])
                mat[i, j] = mat[j, i] = adj
        return cls(pats, mat)

    def independent_pairs(self) -> list[tuple[MissingPattern, MissingPattern]]:
        out = []
        for i in range(len(self.patterns)):
            for j in range(i + 1, len(self.patterns)):
                if not self.matrix[i, j]:
                    out.append((self.patterns[i], self.patterns[j]))
        return out


@dataclass
class BlockCheckReport:
    threshold: float
    mask: CovarianceBlockMask
    pairs: list[dict] = field(default_factory=list)
    violations: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _safe_corr(values: np.ndarray) -> np.ndarray:
    centered = values - values.mean(axis=0)
    sd = centered.std(axis=0, ddof=1)
    sd = np.where(sd > 0, sd, 1.0)
    z = centered / sd
    return (z.T @ z) / (values.shape[0] - 1)


def covariance_block_check(
    draws: BootstrapDraws,
    tree: TreeGraph,
    threshold: float = 0.1,
    include_intercepts: bool = False,
) -> BlockCheckReport:
    """Empirical cross-correlations between parameter blocks against the tree mask.

    Blocks of patterns that are neither parent-child nor siblings must show
    near-zero correlation.  Edge intercepts are excluded by default: they
    absorb pattern-frequency terms whose joint multinomial noise is real but
    irrelevant to the tilting coefficients.
    """
    mask = CovarianceBlockMask.from_tree(tree)
    keep = [
        i
        for i, name in enumerate(draws.names)
        if include_intercepts or not name.endswith(".intercept")
    ]
    blocks = [draws.blocks[i] for i in keep]
    corr = _safe_corr(draws.values[:, keep])
    report = BlockCheckReport(threshold, mask)
    index = {p: i for i, p in enumerate(mask.patterns)}
    for a_i in range(len(mask.patterns)):
        for b_i in range(a_i + 1, len(mask.patterns)):
            pa, pb = mask.patterns[a_i], mask.patterns[b_i]
            cols_a = [i for i, blk in enumerate(blocks) if blk == pa]
            cols_b = [i for i, blk in enumerate(blocks) if blk == pb]
            if not cols_a or not cols_b:
                continue
            sub = np.abs(corr[np.ix_(cols_a, cols_b)])
            entry = {
                "a": str(pa),
                "b": str(pb),
                "masked_independent": not mask.matrix[index[pa], index[pb]],
                "max_abs_corr": float(sub.max()),
            }
            report.pairs.append(entry)
            if entry["masked_independent"] and entry["max_abs_corr"] >= threshold:
                report.violations.append(entry)
    return report
