"""Data-driven parent selection: likelihood alignment and energy-distance alignment."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .expfam import FamilySpec, MixtureModel
from .fitting import EMConfig, FitError, fit_cc_em
from .patterns import IncompleteDataset, MissingPattern, lex_sorted, potential_parents
from .treegraph import TreeGraph
from .util import substream


@dataclass
class AlignmentScoreTable:
    """Per (child, candidate parent) scores plus the chosen parent per child."""

    metric: str
    entries: list[tuple[MissingPattern, MissingPattern, float]] = field(default_factory=list)
    chosen: dict[MissingPattern, MissingPattern] = field(default_factory=dict)
    fallbacks: list[MissingPattern] = field(default_factory=list)

    def rows(self) -> list[dict]:
        out = []
        for child, cand, score in self.entries:
            out.append(
                {
                    "child": str(child),
                    "candidate": str(cand),
                    "metric": self.metric,
                    "score": score,
                    "chosen": int(self.chosen.get(child) == cand),
                }
            )
        return out


def _argbest(candidates: list[MissingPattern], scores: dict[MissingPattern, float], larger_better: bool) -> MissingPattern:
    """Best-scoring candidate; exact ties resolve to the lexicographically smallest."""
    best, best_score = None, None
    for cand in lex_sorted(candidates):
        s = scores[cand]
        if best is None or (s > best_score if larger_better else s < best_score):
            best, best_score = cand, s
    return best


def fit_pattern_models(
    data: IncompleteDataset,
    family: FamilySpec,
    k: int,
    em_config: EMConfig = EMConfig(),
    seed: int = 0,
    min_rows: int = 20,
) -> dict[MissingPattern, tuple[tuple[int, ...], MixtureModel] | None]:
    """One per-pattern mixture over each pattern's observed coordinates, cached.

    Patterns that are too thin or fail to fit map to None.
    """
    models: dict[MissingPattern, tuple[tuple[int, ...], MixtureModel] | None] = {}
    for i, (pattern, count) in enumerate(data.pattern_counts().items()):
        if count < min_rows:
            models[pattern] = None
            continue
        rows = data.observed_rows_with(pattern)
        sub = family.subset(pattern.observed)
        try:
            model = fit_cc_em(rows, sub, k, em_config, substream(seed, i))
        except FitError:
            try:
                model = fit_cc_em(rows, sub, 1, em_config, substream(seed, i))
            except FitError as err:
                warnings.warn(f"pattern {pattern} is unfittable ({err}); excluded", RuntimeWarning)
                models[pattern] = None
                continue
        models[pattern] = (pattern.observed, model)
    return models


def _marginal_to(entry, coords: tuple[int, ...]) -> MixtureModel:
    own_coords, model = entry
    positions = [own_coords.index(j) for j in coords]
    return model.marginal(positions)


def _assemble(d: int, chosen: dict) -> TreeGraph:
    return TreeGraph.from_parent_map(d, chosen)


def _candidate_parents(r, observed_patterns, models) -> tuple[list[MissingPattern], list[MissingPattern]]:
    ppa = lex_sorted(potential_parents(r, observed_patterns))
    usable = [s for s in ppa if models.get(s) is not None]
    dropped = [s for s in ppa if models.get(s) is None]
    return usable, dropped


def select_parent_based(
    data: IncompleteDataset,
    family: FamilySpec,
    k: int,
    em_config: EMConfig = EMConfig(),
    seed: int = 0,
    min_rows: int = 20,
    models=None,
) -> tuple[TreeGraph, AlignmentScoreTable]:
    """Each child picks the candidate whose fitted model best explains the child's rows.

    The score for candidate s is the mean log-density of the child's observed
    rows under the candidate's model marginalized to the child's coordinates,
    so the argmax minimizes the sample divergence from the child's distribution.
    """
    if models is None:
        models = fit_pattern_models(data, family, k, em_config, seed, min_rows)
    observed = set(data.pattern_counts())
    full = MissingPattern.full(data.d)
    if full not in observed:
        raise FitError("graph selection requires complete cases")
    counts = data.pattern_counts()
    table = AlignmentScoreTable(metric="mean-loglik-parent")
    chosen: dict[MissingPattern, MissingPattern] = {}
    for r in lex_sorted(observed - {full}):
        if counts[r] < min_rows:
            warnings.warn(f"pattern {r} has {counts[r]} rows; defaulting to the complete-case parent", RuntimeWarning)
            chosen[r] = full
            table.fallbacks.append(r)
            continue
        usable, dropped = _candidate_parents(r, observed, models)
        for s in dropped:
            warnings.warn(f"candidate parent {s} for {r} is unfittable; excluded", RuntimeWarning)
        if not usable:
            raise FitError(f"no usable candidate parent for pattern {r}")
        rows = data.observed_rows_with(r)
        scores = {}
        for s in usable:
            marg = _marginal_to(models[s], r.observed)
            scores[s] = float(np.mean(marg.log_density(rows)))
            table.entries.append((r, s, scores[s]))
        chosen[r] = _argbest(usable, scores, larger_better=True)
    table.chosen = chosen
    return _assemble(data.d, chosen), table


def select_child_based(
    data: IncompleteDataset,
    family: FamilySpec,
    k: int,
    em_config: EMConfig = EMConfig(),
    seed: int = 0,
    min_rows: int = 20,
    models=None,
) -> tuple[TreeGraph, AlignmentScoreTable]:
    """Roles reversed: the child's own model is scored on each candidate's rows."""
    if models is None:
        models = fit_pattern_models(data, family, k, em_config, seed, min_rows)
    observed = set(data.pattern_counts())
    full = MissingPattern.full(data.d)
    if full not in observed:
        raise FitError("graph selection requires complete cases")
    counts = data.pattern_counts()
    table = AlignmentScoreTable(metric="mean-loglik-child")
    chosen: dict[MissingPattern, MissingPattern] = {}
    for r in lex_sorted(observed - {full}):
        if counts[r] < min_rows or models.get(r) is None:
            warnings.warn(f"pattern {r} lacks a usable model; defaulting to the complete-case parent", RuntimeWarning)
            chosen[r] = full
            table.fallbacks.append(r)
            continue
        ppa = lex_sorted(potential_parents(r, observed))
        own_coords, model = models[r]
        scores = {}
        for s in ppa:
            rows = data.rows_with(s)[:, list(r.observed)]
            scores[s] = float(np.mean(model.log_density(rows)))
            table.entries.append((r, s, scores[s]))
        chosen[r] = _argbest(ppa, scores, larger_better=True)
    table.chosen = chosen
    return _assemble(data.d, chosen), table


# ---------------------------------------------------------------------------
# energy distance


def energy_distance(xs: np.ndarray, ys: np.ndarray) -> float:
    """Two-sample energy statistic: 2 E|X-Y| - E|X-X'| - E|Y-Y'| with plug-in means."""
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    if xs.ndim == 1:
        xs = xs[:, None]
    if ys.ndim == 1:
        ys = ys[:, None]
    if xs.size == 0 or ys.size == 0:
        raise ValueError("energy distance needs nonempty samples")
    if xs.shape[1] != ys.shape[1]:
        raise ValueError("sample coordinate counts differ")
    cross = cdist(xs, ys).mean()
    within_x = cdist(xs, xs).mean()
    within_y = cdist(ys, ys).mean()
    return float(2.0 * cross - within_x - within_y)


def energy_permutation_pvalue(
    xs: np.ndarray,
    ys: np.ndarray,
    n_perm: int = 999,
    rng: np.random.Generator | None = None,
    max_points: int = 2000,
) -> float:
    """Permutation p-value for distribution equality via the energy statistic.

    Large samples are subsampled to max_points per group before the O(n^2) work.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    xs = np.atleast_2d(np.asarray(xs, float))
    ys = np.atleast_2d(np.asarray(ys, float))
    if xs.shape[0] > max_points:
        xs = xs[rng.choice(xs.shape[0], max_points, replace=False)]
    if ys.shape[0] > max_points:
        ys = ys[rng.choice(ys.shape[0], max_points, replace=False)]
    pooled = np.vstack([xs, ys])
    dmat = cdist(pooled, pooled)
    na, nb = xs.shape[0], ys.shape[0]

    def stat(mask_a: np.ndarray) -> float:
        za = mask_a.astype(float)
        zb = 1.0 - za
        saa = za @ dmat @ za
        sbb = zb @ dmat @ zb
        sab = za @ dmat @ zb
        return 2.0 * sab / (na * nb) - saa / (na * na) - sbb / (nb * nb)

    base = np.zeros(na + nb, dtype=bool)
    base[:na] = True
    observed = stat(base)
    hits = 0
    for _ in range(n_perm):
        perm = rng.permutation(na + nb)
        mask = np.zeros(na + nb, dtype=bool)
        mask[perm[:na]] = True
        if stat(mask) >= observed:
            hits += 1
    return (1.0 + hits) / (1.0 + n_perm)


def select_energy(
    data: IncompleteDataset,
    min_rows: int = 20,
) -> tuple[TreeGraph, AlignmentScoreTable]:
    """Each child picks the candidate minimizing the energy distance on shared coordinates."""
    observed = set(data.pattern_counts())
    full = MissingPattern.full(data.d)
    if full not in observed:
        raise FitError("graph selection requires complete cases")
    counts = data.pattern_counts()
    table = AlignmentScoreTable(metric="energy-distance")
    chosen: dict[MissingPattern, MissingPattern] = {}
    for r in lex_sorted(observed - {full}):
        if counts[r] < min_rows:
            warnings.warn(f"pattern {r} has {counts[r]} rows; defaulting to the complete-case parent", RuntimeWarning)
            chosen[r] = full
            table.fallbacks.append(r)
            continue
        ppa = lex_sorted(potential_parents(r, observed))
        child_rows = data.observed_rows_with(r)
        scores = {}
        for s in ppa:
            cand_rows = data.rows_with(s)[:, list(r.observed)]
            scores[s] = energy_distance(child_rows, cand_rows)
            table.entries.append((r, s, scores[s]))
        chosen[r] = _argbest(ppa, scores, larger_better=False)
    table.chosen = chosen
    return _assemble(data.d, chosen), table
