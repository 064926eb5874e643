"""Per-edge selection odds (child vs parent) and their composition along tree paths."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .expfam import FamilySpec, suff_stats
from .patterns import IncompleteDataset, MissingPattern, dominates
from .treegraph import TreeGraph, path_to_source
from .util import lexsorted_rows

_COEF_CAP = 30.0  # fitted log-odds slopes beyond this indicate separation


class OddsFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class OddsConfig:
    min_rows: int = 5
    ridge: float = 1e-6
    ridge_separation: float = 1e-2
    max_iter: int = 100
    tol: float = 1e-10
    quadratic: bool = True  # gaussian families: include second-order statistics


@dataclass(frozen=True)
class EdgeOddsModel:
    """Logistic (or power-law) odds of a child pattern against its parent.

    Coefficients are keyed by statistic name and may only touch statistics of
    the child's observed coordinates.
    """

    child: MissingPattern
    parent: MissingPattern
    intercept: float
    coefs: tuple[tuple[str, float], ...]
    separation: bool = False
    n_child: int = 0
    n_parent: int = 0

    @property
    def coef_dict(self) -> dict[str, float]:
        return dict(self.coefs)

    def coef_vector(self, family: FamilySpec) -> np.ndarray:
        """Coefficients embedded into the full-dimension statistic layout."""
        names = family.stat_names()
        index = {name: i for i, name in enumerate(names)}
        out = np.zeros(family.stat_dim)
        for name, value in self.coefs:
            try:
                out[index[name]] = value
            except KeyError:
                raise ValueError(f"statistic {name!r} is not in the family layout") from None
        return out

    def log_odds(self, family: FamilySpec, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        return self.intercept + suff_stats(family, X) @ self.coef_vector(family)

    def to_dict(self) -> dict:
        return {
            "child": str(self.child),
            "parent": str(self.parent),
            "intercept": self.intercept,
            "coefficients": {name: value for name, value in self.coefs},
            "separation": self.separation,
            "n_child": self.n_child,
            "n_parent": self.n_parent,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EdgeOddsModel":
        return cls(
            MissingPattern.from_string(doc["child"]),
            MissingPattern.from_string(doc["parent"]),
            float(doc["intercept"]),
            tuple(sorted((str(k), float(v)) for k, v in doc["coefficients"].items())),
            bool(doc.get("separation", False)),
            int(doc.get("n_child", 0)),
            int(doc.get("n_parent", 0)),
        )


@dataclass
class ComposedOdds:
    """Total selection odds of a pattern against the fully observed pattern."""

    family: FamilySpec
    target: MissingPattern
    intercept: float
    coefs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def log_odds(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        return self.intercept + suff_stats(self.family, X) @ self.coefs

    def coef_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.family.stat_names(), self.coefs) if v != 0.0}


def edge_stat_selection(family: FamilySpec, child: MissingPattern, config: OddsConfig) -> list[int]:
    """Indices of full-layout statistics the edge model may use."""
    idx = []
    for j in child.observed:
        sl = family.stat_slice(j)
        cols = list(range(sl.start, sl.stop))
        if family.kind in ("gaussian-diag", "gaussian-kde") and not config.quadratic:
            cols = cols[:1]
        idx.extend(cols)
    return idx


def _irls(A: np.ndarray, y: np.ndarray, ridge: float, max_iter: int, tol: float):
    """Penalized logistic fit by iteratively reweighted least squares.

    The intercept column (first) is never penalized. Returns (beta, converged).
    """
    n, p = A.shape
    beta = np.zeros(p)
    pen = np.full(p, ridge)
    pen[0] = 0.0
    for _ in range(max_iter):
        z = A @ beta
        mu = expit(z)
        w = np.clip(mu * (1.0 - mu), 1e-12, None)
        grad = A.T @ (y - mu) - pen * beta
        hess = (A * w[:, None]).T @ A + np.diag(pen)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return beta, False
        beta = beta + step
        if not np.isfinite(beta).all() or np.abs(beta).max() > 1e4:
            return beta, False
        if np.abs(step).max() < tol:
            return beta, True
    return beta, False


def fit_edge(
    data: IncompleteDataset,
    child: MissingPattern,
    parent: MissingPattern,
    family: FamilySpec,
    config: OddsConfig = OddsConfig(),
) -> EdgeOddsModel:
    """Fit the child-vs-parent selection odds on the child's observed statistics."""
    if not dominates(parent, child):
        raise OddsFitError(f"parent {parent} must strictly dominate child {child}")
    rows_c = data.rows_with(child)[:, list(child.observed)]
    rows_p = data.rows_with(parent)[:, list(child.observed)]
    if rows_c.shape[0] == 0:
        raise OddsFitError(f"no rows carry the child pattern {child}")
    if rows_c.shape[0] < config.min_rows or rows_p.shape[0] < config.min_rows:
        raise OddsFitError(
            f"edge {child} -> {parent} needs at least {config.min_rows} rows per pattern "
            f"(got {rows_c.shape[0]} and {rows_p.shape[0]})"
        )
    sub = family.subset(child.observed) if family.is_product else None
    names_all = family.stat_names()
    cols = edge_stat_selection(family, child, config)
    names = [names_all[i] for i in cols]

    if family.kind == "pareto":
        return _fit_edge_pareto(rows_c, rows_p, child, parent, family)

    # statistics are computed coordinate-locally, so restricting the family
    # spec to the child's coordinates reproduces the selected full-layout columns
    if sub is not None:
        sub_cols = edge_stat_selection(sub, MissingPattern.full(len(child.observed)), config)
        stats_c = suff_stats(sub, rows_c)[:, sub_cols]
        stats_p = suff_stats(sub, rows_p)[:, sub_cols]
    else:
        raise OddsFitError("edge fitting over dirichlet coordinates requires explicit statistics")
    X = np.vstack([stats_c, stats_p])
    y = np.concatenate([np.ones(len(stats_c)), np.zeros(len(stats_p))])
    order = lexsorted_rows(np.c_[y, X])
    y, X = order[:, 0], order[:, 1:]
    A = np.c_[np.ones(len(y)), X]
    beta, converged = _irls(A, y, config.ridge, config.max_iter, config.tol)
    separation = bool((not converged) or (len(beta) > 1 and np.abs(beta[1:]).max() > _COEF_CAP))
    if separation:
        beta, _ = _irls(A, y, config.ridge_separation, config.max_iter, config.tol)
    coefs = tuple(sorted(zip(names, (float(b) for b in beta[1:]))))
    return EdgeOddsModel(
        child,
        parent,
        float(beta[0]),
        coefs,
        separation=separation,
        n_child=rows_c.shape[0],
        n_parent=rows_p.shape[0],
    )


def _fit_edge_pareto(rows_c, rows_p, child, parent, family) -> EdgeOddsModel:
    """Power-law odds: per-pattern closed-form shape fits, coefficient = shape gap."""
    scale = np.asarray(family.scale, float)[list(child.observed)]
    coefs = []
    for jj, j in enumerate(child.observed):
        tc = np.log(rows_c[:, jj] / scale[jj]).sum()
        tp = np.log(rows_p[:, jj] / scale[jj]).sum()
        if tc <= 0 or tp <= 0:
            raise OddsFitError(f"degenerate pareto data at coordinate {j + 1}")
        a_c = rows_c.shape[0] / tc
        a_p = rows_p.shape[0] / tp
        coefs.append((f"log(x{j + 1})", float(a_p - a_c)))
    intercept = float(np.log(rows_c.shape[0] / rows_p.shape[0]))
    return EdgeOddsModel(
        child,
        parent,
        intercept,
        tuple(sorted(coefs)),
        n_child=rows_c.shape[0],
        n_parent=rows_p.shape[0],
    )


def compose(
    tree: TreeGraph,
    edges: dict[MissingPattern, EdgeOddsModel],
    target: MissingPattern,
    family: FamilySpec,
) -> ComposedOdds:
    """Sum edge models along the unique path from the source to the target."""
    path = path_to_source(tree, target)
    lam = np.zeros(family.stat_dim)
    lam0 = 0.0
    for node in path[1:]:
        try:
            edge = edges[node]
        except KeyError:
            raise OddsFitError(f"no fitted edge model for pattern {node} on the path to {target}") from None
        lam = lam + edge.coef_vector(family)
        lam0 += edge.intercept
    return ComposedOdds(family, target, lam0, lam)
