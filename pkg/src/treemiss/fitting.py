"""Complete-case mixture estimation by EM and assembly of the full-data model."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, logsumexp, polygamma

from .expfam import (
    FamilySpec,
    InvalidTiltError,
    MixtureModel,
    check_support,
    log_g,
    log_h,
    suff_stats,
)
from .odds import ComposedOdds, EdgeOddsModel, OddsConfig, compose, fit_edge
from .patterns import IncompleteDataset, MissingPattern, lex_sorted
from .treegraph import TreeGraph, validate
from .util import atomic_write_text, config_hash, lexsorted_rows


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class EMConfig:
    tol: float = 1e-8
    max_iter: int = 500
    restarts: int = 10
    min_weight: float = 1e-10
    var_floor: float = 1e-6
    prob_clip: float = 1e-7


def n_parameters(family: FamilySpec, k: int) -> int:
    per = {"gaussian-diag": 2, "binomial-product": 1, "negative-binomial": 1, "pareto": 1, "beta": 2, "dirichlet": 1}
    if family.kind not in per:
        raise ValueError(f"{family.kind} mixtures are not fitted by EM")
    return (k - 1) + k * per[family.kind] * family.d


# ---------------------------------------------------------------------------
# M-steps


def _inv_digamma(y: np.ndarray, iters: int = 30) -> np.ndarray:
    y = np.asarray(y, float)
    x = np.where(y >= -2.22, np.exp(y) + 0.5, -1.0 / (y - digamma(1.0)))
    for _ in range(iters):
        x = x - (digamma(x) - y) / polygamma(1, x)
        x = np.maximum(x, 1e-8)
    return x


def _beta_mle(elog_x: np.ndarray, elog_1mx: np.ndarray, iters: int = 60):
    """Per-cell beta shapes solving the weighted log-moment equations."""
    # moment-style initialization via inverse digamma of the aggregated targets
    a = np.full_like(elog_x, 1.0)
    b = np.full_like(elog_x, 1.0)
    for _ in range(iters):
        a = _inv_digamma(digamma(a + b) + elog_x, iters=5)
        b = _inv_digamma(digamma(a + b) + elog_1mx, iters=5)
    return np.maximum(a, 1e-6), np.maximum(b, 1e-6)


def _dirichlet_mle(elog: np.ndarray, iters: int = 200) -> np.ndarray:
    """Fixed-point maximum likelihood from expected log coordinates, per row."""
    alpha = np.full_like(elog, 1.0)
    for _ in range(iters):
        new = _inv_digamma(digamma(alpha.sum(axis=1, keepdims=True)) + elog, iters=5)
        if np.abs(new - alpha).max() < 1e-12:
            alpha = new
            break
        alpha = new
    return np.maximum(alpha, 1e-8)


def _m_step(family: FamilySpec, X: np.ndarray, resp: np.ndarray, config: EMConfig):
    """Closed-form (or fixed-point) component updates from responsibilities."""
    nk = resp.sum(axis=0)
    nk = np.maximum(nk, 1e-300)
    w = nk / resp.shape[0]
    kind = family.kind
    if kind == "binomial-product":
        N = np.asarray(family.trials, float)
        p = (resp.T @ X) / (nk[:, None] * N)
        p = np.clip(p, config.prob_clip, 1.0 - config.prob_clip)
        eta = np.log(p) - np.log1p(-p)
    elif kind == "gaussian-diag":
        mu = (resp.T @ X) / nk[:, None]
        second = (resp.T @ (X * X)) / nk[:, None]
        var = np.maximum(second - mu * mu, config.var_floor)
        eta = np.empty((resp.shape[1], 2 * family.d))
        eta[:, 0::2] = mu / var
        eta[:, 1::2] = -0.5 / var
    elif kind == "negative-binomial":
        r = np.asarray(family.failures, float)
        m = (resp.T @ X) / nk[:, None]
        p = np.clip(m / (r + m), config.prob_clip, 1.0 - config.prob_clip)
        eta = np.log(p)
    elif kind == "pareto":
        scale = np.asarray(family.scale, float)
        t = (resp.T @ np.log(X / scale)) / nk[:, None]
        alpha = 1.0 / np.maximum(t, 1e-10)
        eta = -1.0 - alpha
    elif kind == "beta":
        ex = (resp.T @ np.log(X)) / nk[:, None]
        e1 = (resp.T @ np.log1p(-X)) / nk[:, None]
        a, b = _beta_mle(ex, e1)
        eta = np.empty((resp.shape[1], 2 * family.d))
        eta[:, 0::2] = a - 1.0
        eta[:, 1::2] = b - 1.0
    elif kind == "dirichlet":
        elog = (resp.T @ np.log(X)) / nk[:, None]
        eta = _dirichlet_mle(elog) - 1.0
    else:
        raise FitError(f"{kind} mixtures are not fitted by EM")
    return eta, np.log(w)


def _quantile_init(family: FamilySpec, X: np.ndarray, k: int) -> np.ndarray | None:
    """Deterministic, row-order-independent starting point for common families."""
    qs = [(i + 1.0) / (k + 1.0) for i in range(k)]
    kind = family.kind
    if kind == "binomial-product":
        N = np.asarray(family.trials, float)
        p = np.stack([np.quantile(X, q, axis=0) / N for q in qs])
        p = np.clip(p, 0.02, 0.98)
        return np.log(p) - np.log1p(-p)
    if kind == "gaussian-diag":
        mu = np.stack([np.quantile(X, q, axis=0) for q in qs])
        var = np.broadcast_to(np.maximum(X.var(axis=0), 1e-6), mu.shape)
        eta = np.empty((k, 2 * family.d))
        eta[:, 0::2] = mu / var
        eta[:, 1::2] = -0.5 / var
        return eta
    if kind == "negative-binomial":
        r = np.asarray(family.failures, float)
        m = np.maximum(np.stack([np.quantile(X, q, axis=0) for q in qs]), 0.05)
        p = np.clip(m / (r + m), 0.02, 0.98)
        return np.log(p)
    return None


def _em_once(family, X, stats, logh, k, config, resp=None, model=None):
    """One EM run from either initial responsibilities or an initial model."""
    n = X.shape[0]
    if model is not None:
        eta, log_w = np.array(model.eta), np.array(model.log_w)
        k = len(log_w)
    else:
        eta, log_w = _m_step(family, X, resp, config)
    prev = -np.inf
    for _ in range(config.max_iter):
        comp = stats @ eta.T + log_g(family, eta) + logh[:, None] + log_w
        ll_rows = logsumexp(comp, axis=1)
        ll = float(ll_rows.sum())
        if not np.isfinite(ll):
            raise FitError("EM log-likelihood is not finite")
        if ll < prev - 1e-7 * (1.0 + abs(ll)):
            raise FitError(f"EM log-likelihood decreased ({prev} -> {ll})")
        if ll - prev < config.tol * (1.0 + abs(ll)):
            break
        prev = ll
        resp = np.exp(comp - ll_rows[:, None])
        weights = resp.sum(axis=0) / n
        alive = weights >= config.min_weight
        if not alive.all():
            warnings.warn(
                f"pruning {int((~alive).sum())} degenerate mixture component(s)", RuntimeWarning
            )
            resp = resp[:, alive]
            resp = resp / resp.sum(axis=1, keepdims=True)
            k = resp.shape[1]
        eta, log_w = _m_step(family, X, resp, config)
    return MixtureModel(family, eta, log_w - logsumexp(log_w)), ll


def fit_cc_em(
    values: np.ndarray,
    family: FamilySpec,
    k: int,
    config: EMConfig = EMConfig(),
    rng: np.random.Generator | None = None,
    init_model: MixtureModel | None = None,
) -> MixtureModel:
    """Best-of-restarts EM fit of a k-component mixture on complete rows.

    The first restart uses a deterministic quantile spread where the family
    supports it; remaining restarts draw random responsibilities.  Rows are
    canonicalized so the fit cannot depend on input order.
    """
    X = np.atleast_2d(np.asarray(values, float))
    if X.shape[0] == 0:
        raise FitError("no complete-case rows to fit")
    check_support(family, X)
    if k < 1:
        raise FitError("k must be at least 1")
    per_comp = (n_parameters(family, k) - (k - 1)) // k
    if X.shape[0] < k * per_comp:
        raise FitError(
            f"need at least {k * per_comp} complete rows to fit k={k}, got {X.shape[0]}"
        )
    X = lexsorted_rows(X)
    stats = suff_stats(family, X)
    logh = log_h(family, X)

    if init_model is not None:
        model, _ = _em_once(family, X, stats, logh, k, config, model=init_model)
        return model.canonical()

    if rng is None:
        rng = np.random.default_rng(0)
    best, best_ll = None, -np.inf
    for rep in range(max(1, config.restarts)):
        if rep == 0:
            eta0 = _quantile_init(family, X, k)
            if eta0 is not None:
                seed_model = MixtureModel(family, eta0, np.full(k, -np.log(k)))
                try:
                    model, ll = _em_once(family, X, stats, logh, k, config, model=seed_model)
                except FitError:
                    continue
                if ll > best_ll:
                    best, best_ll = model, ll
                continue
        resp = rng.dirichlet(np.ones(k), size=X.shape[0])
        try:
            model, ll = _em_once(family, X, stats, logh, k, config, resp=resp)
        except FitError:
            continue
        if ll > best_ll:
            best, best_ll = model, ll
    if best is None:
        raise FitError("every EM restart failed")
    return best.canonical()


def mixture_loglik(model: MixtureModel, values: np.ndarray) -> float:
    return float(model.log_density(values).sum())


def select_k_bic(
    values: np.ndarray,
    family: FamilySpec,
    k_range,
    config: EMConfig = EMConfig(),
    rng: np.random.Generator | None = None,
) -> int:
    """Component count minimizing -2 loglik + params * log(n); ties pick the smallest k."""
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise FitError("empty k range")
    X = np.atleast_2d(np.asarray(values, float))
    n = X.shape[0]
    best_k, best_bic = None, np.inf
    for k in ks:
        try:
            model = fit_cc_em(X, family, k, config, rng)
        except FitError:
            continue
        bic = -2.0 * mixture_loglik(model, X) + n_parameters(family, model.k) * np.log(n)
        if bic < best_bic - 1e-12:
            best_k, best_bic = k, bic
    if best_k is None:
        raise FitError("no component count could be fitted")
    return best_k


# ---------------------------------------------------------------------------
# full model


def embed_rho(family: FamilySpec, pattern: MissingPattern, rho: np.ndarray) -> np.ndarray:
    """Sensitivity coefficients on the first-order statistics of missing coordinates."""
    out = np.zeros(family.stat_dim)
    for j in pattern.missing:
        out[family.linear_stat_index(j)] += rho[j]
    return out


def derive_pattern_models(
    tree: TreeGraph,
    family: FamilySpec,
    cc_model: MixtureModel,
    edges: dict[MissingPattern, EdgeOddsModel],
    rho: np.ndarray,
):
    """Tilt the complete-case mixture along every path; collect per-pattern failures."""
    derived = {tree.source: cc_model}
    errors: dict[MissingPattern, str] = {}
    for r in tree.non_source_patterns():
        lam = compose(tree, edges, r, family).coefs + embed_rho(family, r, rho)
        try:
            derived[r] = cc_model.tilt(lam)
        except InvalidTiltError as err:
            errors[r] = str(err)
    return derived, errors


@dataclass
class FittedFullModel:
    """Complete-case mixture, per-edge odds, pattern frequencies, derived joints."""

    tree: TreeGraph
    family: FamilySpec
    cc_model: MixtureModel
    edges: dict[MissingPattern, EdgeOddsModel]
    pattern_probs: dict[MissingPattern, float]
    rho: np.ndarray
    derived_models: dict[MissingPattern, MixtureModel] = field(default_factory=dict)
    errors: dict[MissingPattern, str] = field(default_factory=dict)

    def __post_init__(self):
        self.rho = np.asarray(self.rho, float).reshape(self.family.d)
        if not self.derived_models:
            self.derived_models, self.errors = derive_pattern_models(
                self.tree, self.family, self.cc_model, self.edges, self.rho
            )

    def derived(self, r: MissingPattern) -> MixtureModel:
        if r in self.derived_models:
            return self.derived_models[r]
        if r in self.errors:
            raise InvalidTiltError(f"pattern {r}: {self.errors[r]}")
        raise ValueError(f"pattern {r} is not in the fitted tree")

    def composed(self, r: MissingPattern) -> ComposedOdds:
        out = compose(self.tree, self.edges, r, self.family)
        out.coefs = out.coefs + embed_rho(self.family, r, self.rho)
        return out

    def to_dict(self) -> dict:
        return {
            "tree": self.tree.to_dict(),
            "family": self.family.to_dict(),
            "cc_model": self.cc_model.to_dict(),
            "edges": [self.edges[c].to_dict() for c in lex_sorted(self.edges)],
            "pattern_probs": {str(p): float(v) for p, v in sorted(self.pattern_probs.items(), key=lambda kv: str(kv[0]))},
            "rho": [float(v) for v in self.rho],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FittedFullModel":
        tree = TreeGraph.from_dict(doc["tree"])
        family = FamilySpec.from_dict(doc["family"])
        edges = {}
        for edoc in doc["edges"]:
            e = EdgeOddsModel.from_dict(edoc)
            edges[e.child] = e
        probs = {MissingPattern.from_string(k): float(v) for k, v in doc["pattern_probs"].items()}
        return cls(tree, family, MixtureModel.from_dict(doc["cc_model"]), edges, probs, np.asarray(doc["rho"], float))

    def save(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "FittedFullModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @property
    def digest(self) -> str:
        return config_hash(self.to_dict())

    @property
    def tree_digest(self) -> str:
        return config_hash(self.tree.to_dict())


def fit_full(
    data: IncompleteDataset,
    tree: TreeGraph,
    family: FamilySpec,
    k: int,
    em_config: EMConfig = EMConfig(),
    odds_config: OddsConfig = OddsConfig(),
    rng: np.random.Generator | None = None,
    init_model: MixtureModel | None = None,
) -> FittedFullModel:
    """Fit the complete-case mixture, every edge odds model, and all derived joints."""
    report = validate(tree)
    if not report.ok:
        raise FitError(f"invalid tree: {report}")
    if family.d != data.d or tree.d != data.d:
        raise FitError("tree, family, and data dimensions must agree")
    counts = data.pattern_counts()
    foreign = [p for p in counts if p not in tree.patterns]
    if foreign:
        raise FitError(
            "data contain patterns outside the tree: "
            + ", ".join(str(p) for p in foreign)
            + "; build the tree on the observed pattern set (see the representor helpers)"
        )
    thin = [p for p in tree.patterns if counts.get(p, 0) < odds_config.min_rows]
    if thin:
        raise FitError(
            "tree patterns with too few observations: "
            + ", ".join(str(p) for p in lex_sorted(thin))
            + "; prune them via a representor before fitting"
        )
    cc_rows = data.complete_values()
    cc_model = fit_cc_em(cc_rows, family, k, em_config, rng, init_model=init_model)
    edges = {}
    for child in tree.non_source_patterns():
        edges[child] = fit_edge(data, child, tree.parent_of(child), family, odds_config)
    total = sum(counts.values())
    probs = {p: counts.get(p, 0) / total for p in lex_sorted(tree.patterns)}
    return FittedFullModel(tree, family, cc_model, edges, probs, np.zeros(family.d))
