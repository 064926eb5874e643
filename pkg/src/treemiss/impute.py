"""Multiple imputation from a fitted full-data model.

Closed-form conjugate imputation draws from the tilted conditional directly;
rejection sampling covers black-box odds at the price of proposal retries.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .expfam import MixtureModel
from .fitting import FittedFullModel
from .patterns import IncompleteDataset, MissingPattern, write_data_csv
from .util import atomic_write_text, substream


class ImputationError(RuntimeError):
    pass


@dataclass
class ImputationSet:
    """M completed copies of a dataset; observed entries are never touched."""

    m: int
    completed: list[np.ndarray]
    provenance: dict

    def save(self, outdir, names=None) -> list[str]:
        os.makedirs(outdir, exist_ok=True)
        paths = []
        for i, values in enumerate(self.completed, start=1):
            path = os.path.join(outdir, f"imputed_{i}.csv")
            write_data_csv(path, values, names)
            paths.append(path)
        atomic_write_text(os.path.join(outdir, "provenance.json"), json.dumps(self.provenance, indent=2, sort_keys=True) + "\n")
        return paths

    def pooled(self) -> np.ndarray:
        return np.vstack(self.completed)


def _conditional_for_row(model: MixtureModel, row: np.ndarray, pattern: MissingPattern) -> MixtureModel:
    obs = list(pattern.observed)
    return model.conditional(obs, row[obs])


def impute_conjugate(
    data: IncompleteDataset,
    model: FittedFullModel,
    m: int,
    seed: int,
) -> ImputationSet:
    """Draw the missing block of every row m times from its pattern's tilted conditional.

    Streams are keyed by (row, imputation index) so results do not depend on
    scheduling or row order.
    """
    if m < 1:
        raise ImputationError("m must be at least 1")
    bad_rows: dict[MissingPattern, list[int]] = {}
    for i in range(data.n):
        p = data.pattern(i)
        if p.is_full:
            continue
        if p not in model.derived_models:
            bad_rows.setdefault(p, []).append(i)
    if bad_rows:
        parts = [f"{p} (rows {idx[:5]}{'...' if len(idx) > 5 else ''})" for p, idx in bad_rows.items()]
        raise ImputationError("patterns without a derived model: " + "; ".join(parts))

    completed = [np.array(data.values, copy=True) for _ in range(m)]
    for i in range(data.n):
        p = data.pattern(i)
        if p.is_full:
            continue
        cond = _conditional_for_row(model.derived(p), data.values[i], p)
        mis = list(p.missing)
        for j in range(m):
            draw = cond.sample(substream(seed, i, j), 1)[0]
            completed[j][i, mis] = draw
    return ImputationSet(
        m,
        completed,
        {
            "model": model.digest,
            "tree": model.tree_digest,
            "seed": int(seed),
            "m": int(m),
            "method": "conjugate",
        },
    )


def impute_rejection(
    data: IncompleteDataset,
    cc_model: MixtureModel,
    odds_fn,
    bounds: dict[MissingPattern, float],
    m: int,
    seed: int,
    max_attempts: int = 100_000,
    batch: int = 64,
) -> ImputationSet:
    """Rejection sampling against the complete-case conditional as the proposal.

    ``odds_fn(pattern, X)`` must return the (unnormalized) selection odds for a
    batch of full rows and stay within ``bounds[pattern]`` on the support.
    """
    if m < 1:
        raise ImputationError("m must be at least 1")
    completed = [np.array(data.values, copy=True) for _ in range(m)]
    for i in range(data.n):
        p = data.pattern(i)
        if p.is_full:
            continue
        if p not in bounds or not np.isfinite(bounds[p]) or bounds[p] <= 0:
            raise ImputationError(f"a positive finite odds bound is required for pattern {p}")
        u_r = float(bounds[p])
        cond = _conditional_for_row(cc_model, data.values[i], p)
        mis = list(p.missing)
        for j in range(m):
            rng = substream(seed, i, j)
            attempts = 0
            ratio_sum = 0.0
            accepted = None
            while attempts < max_attempts:
                size = min(batch, max_attempts - attempts)
                draws = cond.sample(rng, size)
                full = np.repeat(data.values[i][None, :], size, axis=0)
                full[:, mis] = draws
                odds = np.asarray(odds_fn(p, full), float)
                ratio = odds / u_r
                if (ratio > 1.0 + 1e-9).any():
                    worst = float(ratio.max())
                    raise ImputationError(
                        f"odds bound violated for pattern {p}: ratio {worst:.6g} exceeds 1"
                    )
                ratio_sum += float(ratio.sum())
                accept = rng.random(size) < ratio
                hit = np.nonzero(accept)[0]
                attempts += size
                if hit.size:
                    accepted = draws[hit[0]]
                    break
            if accepted is None:
                rate = ratio_sum / max(attempts, 1)
                raise ImputationError(
                    f"row {i}, imputation {j + 1}: no acceptance in {attempts} proposals "
                    f"(mean acceptance ratio {rate:.3g}); raise the bound quality or attempts"
                )
            completed[j][i, mis] = accepted
    return ImputationSet(
        m,
        completed,
        {
            "model": cc_model.digest,
            "seed": int(seed),
            "m": int(m),
            "method": "rejection",
        },
    )


def pattern_joint(model: FittedFullModel, r: MissingPattern) -> MixtureModel:
    """The derived joint for a pattern; same family as the complete-case model.

    The joint factorizes into the observed-data block and the extrapolation
    block: ``joint.marginal(r.observed)`` gives the former and
    ``joint.conditional(r.observed, values)`` the latter.
    """
    return model.derived(r)


def composed_odds_bound(model: FittedFullModel, r: MissingPattern, grid: np.ndarray | None = None, safety: float = 1.1) -> float:
    """Supremum of the composed selection odds for rejection sampling.

    Exact for discrete product families; bounded continuous supports use the
    supplied grid times a safety factor.  Unbounded configurations are refused.
    """
    comp = model.composed(r)
    fam = model.family
    if fam.kind == "binomial-product":
        best = comp.intercept
        for j in range(fam.d):
            c = comp.coefs[fam.linear_stat_index(j)]
            best += max(0.0, c * fam.trials[j])
        return float(np.exp(best))
    if grid is not None:
        vals = comp.log_odds(grid)
        return float(np.exp(vals.max()) * safety)
    raise ImputationError(
        "odds bounds are only automatic for bounded supports; pass a grid or a bound"
    )
