"""Sensitivity analysis: alternative trees and exponential perturbation of the odds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fitting import EMConfig, FitError, FittedFullModel, fit_full
from .impute import impute_conjugate
from .odds import OddsConfig
from .treegraph import TreeGraph
from .util import config_hash, substream


@dataclass(frozen=True)
class SensitivitySpec:
    """Per-variable tilting coefficients and an optional set of alternative trees."""

    rho: tuple[float, ...]
    tree_set: tuple[TreeGraph, ...] | None = None

    def __post_init__(self):
        if not all(np.isfinite(self.rho)):
            raise ValueError("sensitivity coefficients must be finite")


def perturb(model: FittedFullModel, rho) -> FittedFullModel:
    """Tilt each pattern's selection odds by exp(rho . x_missing).

    Only the first-order statistics of the missing coordinates move, so the
    perturbed model keeps the fitted odds on observed coordinates and stays in
    the same parametric family.  Perturbations accumulate additively.
    """
    rho = np.asarray(rho, float).reshape(model.family.d)
    if not np.isfinite(rho).all():
        raise ValueError("sensitivity coefficients must be finite")
    return FittedFullModel(
        model.tree,
        model.family,
        model.cc_model,
        model.edges,
        model.pattern_probs,
        model.rho + rho,
    )


def sweep(
    data,
    rho_grid,
    trees,
    family,
    k: int,
    functional,
    m: int,
    em_config: EMConfig = EMConfig(),
    odds_config: OddsConfig = OddsConfig(),
    seed: int = 0,
) -> list[dict]:
    """Refit per tree, perturb per rho, and record the functional for every cell.

    Failed cells are reported with their error message rather than dropped.
    """
    rho_grid = [np.asarray(r, float).reshape(family.d) for r in rho_grid]
    trees = list(trees)
    if not rho_grid or not trees:
        raise ValueError("sweep needs at least one tree and one rho")
    rows = []
    for t_idx, tree in enumerate(trees):
        tree_id = config_hash(tree.to_dict())[:8]
        try:
            base = fit_full(data, tree, family, k, em_config, odds_config, substream(seed, t_idx))
        except FitError as err:
            for r_idx, rho in enumerate(rho_grid):
                rows.append(_cell(tree_id, rho, None, "error", f"fit failed: {err}"))
            continue
        for r_idx, rho in enumerate(rho_grid):
            try:
                model = perturb(base, rho)
                if model.errors:
                    bad = "; ".join(f"{p}: {msg}" for p, msg in model.errors.items())
                    rows.append(_cell(tree_id, rho, None, "error", f"invalid tilt: {bad}"))
                    continue
                imp = impute_conjugate(data, model, m, int(substream(seed, t_idx, r_idx).integers(2**32)))
                value = float(functional(imp.pooled()))
                rows.append(_cell(tree_id, rho, value, "ok", ""))
            except Exception as err:  # cell-level containment by design
                rows.append(_cell(tree_id, rho, None, "error", str(err)))
    return rows


def _cell(tree_id, rho, value, status, message) -> dict:
    return {
        "tree": tree_id,
        "rho": ",".join(format(float(v), ".17g") for v in rho),
        "value": value,
        "status": status,
        "message": message,
    }
