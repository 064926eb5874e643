"""Exponential-family product mixtures with closed-form odds tilting.

Every family is parameterized by a natural-parameter vector over per-coordinate
sufficient statistics, so tilting by a coefficient vector is addition in
parameter space plus a weight reallocation computed in log space.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit, gammaln, logsumexp

from .util import atomic_write_text, config_hash

KINDS = (
    "gaussian-diag",
    "binomial-product",
    "negative-binomial",
    "pareto",
    "beta",
    "dirichlet",
    "gaussian-kde",
)

_STATS_PER_COORD = {
    "gaussian-diag": 2,
    "gaussian-kde": 2,
    "binomial-product": 1,
    "negative-binomial": 1,
    "pareto": 1,
    "beta": 2,
    "dirichlet": 1,
}

_GAUSSIAN_KINDS = ("gaussian-diag", "gaussian-kde")
DISCRETE_KINDS = ("binomial-product", "negative-binomial")


class SupportError(ValueError):
    """A value lies outside the family's support."""


class InvalidTiltError(ValueError):
    """A tilt pushed a natural parameter outside the family domain."""

    def __init__(self, message, component=None, coordinate=None):
        super().__init__(message)
        self.component = component
        self.coordinate = coordinate


def _as_tuple(x, d, name) -> tuple[float, ...]:
    if np.isscalar(x):
        out = (float(x),) * d
    else:
        out = tuple(float(v) for v in x)
    if len(out) != d:
        raise ValueError(f"{name} must have one entry per coordinate ({d}), got {len(out)}")
    return out


@dataclass(frozen=True)
class FamilySpec:
    """Family kind, dimension, and fixed hyperparameters.

    ``simplex_total`` only matters for dirichlet models produced by
    conditioning: the components then live on the simplex scaled to that total.
    """

    kind: str
    d: int
    trials: tuple[int, ...] | None = None
    failures: tuple[float, ...] | None = None
    scale: tuple[float, ...] | None = None
    bandwidth: tuple[float, ...] | None = None
    simplex_total: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown family kind {self.kind!r}")
        if self.d < 0:
            raise ValueError("dimension must be nonnegative")
        if self.kind == "binomial-product":
            if self.trials is None or any(t < 1 or t != int(t) for t in self.trials):
                raise ValueError("binomial-product needs integer trial counts >= 1 per coordinate")
        if self.kind == "negative-binomial":
            if self.failures is None or any(r <= 0 for r in self.failures):
                raise ValueError("negative-binomial needs positive known failure counts")
        if self.kind == "pareto":
            if self.scale is None or any(b <= 0 for b in self.scale):
                raise ValueError("pareto needs strictly positive scale per coordinate")
        if self.kind == "gaussian-kde":
            if self.bandwidth is None or any(h <= 0 for h in self.bandwidth):
                raise ValueError("gaussian-kde needs strictly positive bandwidths")
        if self.kind == "dirichlet" and self.simplex_total <= 0:
            raise ValueError("simplex total must be positive")

    # -- constructors ------------------------------------------------------
    @classmethod
    def gaussian(cls, d: int) -> "FamilySpec":
        return cls("gaussian-diag", d)

    @classmethod
    def binomial(cls, d: int, trials) -> "FamilySpec":
        return cls("binomial-product", d, trials=tuple(int(t) for t in np.broadcast_to(trials, (d,))))

    @classmethod
    def negbin(cls, d: int, failures) -> "FamilySpec":
        return cls("negative-binomial", d, failures=_as_tuple(failures, d, "failures"))

    @classmethod
    def pareto(cls, d: int, scale) -> "FamilySpec":
        return cls("pareto", d, scale=_as_tuple(scale, d, "scale"))

    @classmethod
    def beta(cls, d: int) -> "FamilySpec":
        return cls("beta", d)

    @classmethod
    def dirichlet(cls, d: int, total: float = 1.0) -> "FamilySpec":
        return cls("dirichlet", d, simplex_total=float(total))

    @classmethod
    def kde(cls, d: int, bandwidth) -> "FamilySpec":
        return cls("gaussian-kde", d, bandwidth=_as_tuple(bandwidth, d, "bandwidth"))

    # -- layout ------------------------------------------------------------
    @property
    def stats_per_coord(self) -> int:
        return _STATS_PER_COORD[self.kind]

    @property
    def stat_dim(self) -> int:
        return self.d * self.stats_per_coord

    @property
    def is_product(self) -> bool:
        return self.kind != "dirichlet"

    @property
    def is_discrete(self) -> bool:
        return self.kind in DISCRETE_KINDS

    def stat_names(self) -> list[str]:
        names = []
        for j in range(self.d):
            v = f"x{j + 1}"
            if self.kind in _GAUSSIAN_KINDS:
                names += [v, f"{v}^2"]
            elif self.kind in ("binomial-product", "negative-binomial"):
                names.append(v)
            elif self.kind == "pareto":
                names.append(f"log({v})")
            elif self.kind == "beta":
                names += [f"log({v})", f"log(1-{v})"]
            else:  # dirichlet
                names.append(f"log({v})")
        return names

    def stat_slice(self, j: int) -> slice:
        s = self.stats_per_coord
        return slice(j * s, (j + 1) * s)

    def linear_stat_index(self, j: int) -> int:
        """Index of the per-coordinate first-order statistic."""
        return j * self.stats_per_coord

    def subset(self, coords: Sequence[int]) -> "FamilySpec":
        if not self.is_product:
            raise ValueError("coordinate subsets are only defined for product families")
        coords = list(coords)

        def pick(t):
            return None if t is None else tuple(t[j] for j in coords)

        return FamilySpec(
            self.kind,
            len(coords),
            trials=pick(self.trials),
            failures=pick(self.failures),
            scale=pick(self.scale),
            bandwidth=pick(self.bandwidth),
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "d": self.d,
            "trials": list(self.trials) if self.trials else None,
            "failures": list(self.failures) if self.failures else None,
            "scale": list(self.scale) if self.scale else None,
            "bandwidth": list(self.bandwidth) if self.bandwidth else None,
            "simplex_total": self.simplex_total,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FamilySpec":
        def tup(v):
            return None if v is None else tuple(v)

        return cls(
            doc["kind"],
            int(doc["d"]),
            trials=None if doc.get("trials") is None else tuple(int(t) for t in doc["trials"]),
            failures=tup(doc.get("failures")),
            scale=tup(doc.get("scale")),
            bandwidth=tup(doc.get("bandwidth")),
            simplex_total=float(doc.get("simplex_total", 1.0)),
        )


# ---------------------------------------------------------------------------
# support and sufficient statistics


def _log1mexp(a: np.ndarray) -> np.ndarray:
    """log(1 - exp(a)) for a < 0, stable near both ends."""
    a = np.asarray(a, float)
    out = np.empty_like(a)
    small = a < -0.6931471805599453
    out[small] = np.log1p(-np.exp(a[small]))
    out[~small] = np.log(-np.expm1(a[~small]))
    return out


def support_violation(spec: FamilySpec, X: np.ndarray) -> str | None:
    X = np.atleast_2d(np.asarray(X, float))
    if X.shape[1] != spec.d:
        return f"expected {spec.d} coordinates, got {X.shape[1]}"
    if np.isnan(X).any():
        return "NaN entries are not in any family's support"
    k = spec.kind
    if k in _GAUSSIAN_KINDS:
        if not np.isfinite(X).all():
            return "gaussian support requires finite values"
    elif k == "binomial-product":
        N = np.asarray(spec.trials, float)
        if (np.abs(X - np.round(X)) > 1e-9).any() or (X < -1e-9).any() or (X > N + 1e-9).any():
            return "binomial-product support is integers in [0, N_j]"
    elif k == "negative-binomial":
        if (np.abs(X - np.round(X)) > 1e-9).any() or (X < -1e-9).any():
            return "negative-binomial support is nonnegative integers"
    elif k == "pareto":
        if (X < np.asarray(spec.scale, float) - 1e-12).any():
            return "pareto support is x >= scale"
    elif k == "beta":
        if (X <= 0).any() or (X >= 1).any():
            return "beta support is the open unit interval"
    elif k == "dirichlet":
        if (X <= 0).any():
            return "dirichlet support requires strictly positive coordinates"
        if np.abs(X.sum(axis=1) - spec.simplex_total).max() > 1e-8 * max(1.0, spec.simplex_total):
            return f"dirichlet coordinates must sum to {spec.simplex_total}"
    return None


def check_support(spec: FamilySpec, X: np.ndarray) -> None:
    msg = support_violation(spec, X)
    if msg is not None:
        raise SupportError(msg)


def suff_stats(spec: FamilySpec, X: np.ndarray) -> np.ndarray:
    """Per-row sufficient statistics laid out coordinate-major."""
    X = np.atleast_2d(np.asarray(X, float))
    n = X.shape[0]
    k = spec.kind
    if k in _GAUSSIAN_KINDS:
        out = np.empty((n, 2 * spec.d))
        out[:, 0::2] = X
        out[:, 1::2] = X * X
        return out
    if k in ("binomial-product", "negative-binomial"):
        return np.array(X, copy=True)
    if k == "pareto":
        return np.log(X)
    if k == "beta":
        out = np.empty((n, 2 * spec.d))
        out[:, 0::2] = np.log(X)
        out[:, 1::2] = np.log1p(-X)
        return out
    # dirichlet
    return np.log(X)


def coord_log_h(spec: FamilySpec, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, float))
    k = spec.kind
    if k in _GAUSSIAN_KINDS:
        return np.full_like(X, -0.5 * np.log(2 * np.pi))
    if k == "binomial-product":
        N = np.asarray(spec.trials, float)
        return gammaln(N + 1) - gammaln(X + 1) - gammaln(N - X + 1)
    if k == "negative-binomial":
        r = np.asarray(spec.failures, float)
        return gammaln(X + r) - gammaln(r) - gammaln(X + 1)
    return np.zeros_like(X)


def log_h(spec: FamilySpec, X: np.ndarray) -> np.ndarray:
    return coord_log_h(spec, X).sum(axis=1)


def coord_log_g(spec: FamilySpec, eta: np.ndarray) -> np.ndarray:
    """Per-coordinate log normalizer, (K, d); product families only."""
    eta = np.atleast_2d(np.asarray(eta, float))
    k = spec.kind
    if k in _GAUSSIAN_KINDS:
        e1 = eta[:, 0::2]
        e2 = eta[:, 1::2]
        return e1 * e1 / (4.0 * e2) + 0.5 * np.log(-2.0 * e2)
    if k == "binomial-product":
        N = np.asarray(spec.trials, float)
        return -N * np.logaddexp(0.0, eta)
    if k == "negative-binomial":
        r = np.asarray(spec.failures, float)
        return r * _log1mexp(eta)
    if k == "pareto":
        alpha = -1.0 - eta
        return np.log(alpha) + alpha * np.log(np.asarray(spec.scale, float))
    if k == "beta":
        a = eta[:, 0::2] + 1.0
        b = eta[:, 1::2] + 1.0
        return -(gammaln(a) + gammaln(b) - gammaln(a + b))
    raise ValueError("dirichlet has no per-coordinate normalizer")


def log_g(spec: FamilySpec, eta: np.ndarray) -> np.ndarray:
    eta = np.atleast_2d(np.asarray(eta, float))
    if spec.kind == "dirichlet":
        a = eta + 1.0
        if spec.d == 1:
            out = np.zeros(eta.shape[0])
        else:
            out = gammaln(a.sum(axis=1)) - gammaln(a).sum(axis=1)
        t = spec.simplex_total
        if t != 1.0:
            out = out - (eta.sum(axis=1) + spec.d - 1) * np.log(t)
        return out
    if spec.d == 0:
        return np.zeros(eta.shape[0])
    return coord_log_g(spec, eta).sum(axis=1)


def domain_violations(spec: FamilySpec, eta: np.ndarray) -> list[tuple[int, int, str]]:
    """(component, coordinate, message) triples for out-of-domain natural parameters."""
    eta = np.atleast_2d(np.asarray(eta, float))
    out = []
    names = spec.stat_names()
    k = spec.kind

    def scan(bad, why):
        for ki, si in zip(*np.nonzero(bad)):
            j = int(si) // spec.stats_per_coord if k != "dirichlet" else int(si)
            out.append((int(ki), j, f"component {ki + 1}, statistic {names[int(si)]}: {why}"))

    if not np.isfinite(eta).all():
        scan(~np.isfinite(eta), "natural parameter is not finite")
        return out
    if k in _GAUSSIAN_KINDS:
        bad = np.zeros_like(eta, bool)
        bad[:, 1::2] = eta[:, 1::2] >= 0
        scan(bad, "second-order parameter must be negative")
    elif k == "negative-binomial":
        scan(eta >= 0, "log success probability must be negative")
    elif k == "pareto":
        scan(eta >= -1, "shape alpha = -(1 + eta) must be positive")
    elif k in ("beta", "dirichlet"):
        scan(eta <= -1, "shape parameter must stay positive")
    return out


# ---------------------------------------------------------------------------
# standard-parameter views


def standard_params(spec: FamilySpec, eta: np.ndarray) -> dict[str, np.ndarray]:
    eta = np.atleast_2d(np.asarray(eta, float))
    k = spec.kind
    if k in _GAUSSIAN_KINDS:
        e1, e2 = eta[:, 0::2], eta[:, 1::2]
        var = -0.5 / e2
        return {"mu": e1 * var, "var": var}
    if k == "binomial-product":
        return {"p": expit(eta)}
    if k == "negative-binomial":
        return {"p": np.exp(eta)}
    if k == "pareto":
        return {"alpha": -1.0 - eta}
    if k == "beta":
        return {"alpha": eta[:, 0::2] + 1.0, "beta": eta[:, 1::2] + 1.0}
    return {"alpha": eta + 1.0}


def gaussian_natural(mu, var) -> np.ndarray:
    mu = np.atleast_2d(np.asarray(mu, float))
    var = np.atleast_2d(np.asarray(var, float))
    eta = np.empty((mu.shape[0], 2 * mu.shape[1]))
    eta[:, 0::2] = mu / var
    eta[:, 1::2] = -0.5 / var
    return eta


def binomial_natural(p) -> np.ndarray:
    p = np.atleast_2d(np.asarray(p, float))
    return np.log(p) - np.log1p(-p)


def negbin_natural(p) -> np.ndarray:
    return np.log(np.atleast_2d(np.asarray(p, float)))


def pareto_natural(alpha) -> np.ndarray:
    return -1.0 - np.atleast_2d(np.asarray(alpha, float))


def beta_natural(alpha, beta) -> np.ndarray:
    alpha = np.atleast_2d(np.asarray(alpha, float))
    beta = np.atleast_2d(np.asarray(beta, float))
    eta = np.empty((alpha.shape[0], 2 * alpha.shape[1]))
    eta[:, 0::2] = alpha - 1.0
    eta[:, 1::2] = beta - 1.0
    return eta


def dirichlet_natural(alpha) -> np.ndarray:
    return np.atleast_2d(np.asarray(alpha, float)) - 1.0


@dataclass(frozen=True)
class Component:
    """A single family member in natural parameters."""

    family: FamilySpec
    natural: tuple[float, ...]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.natural, float)

    def standard(self) -> dict[str, np.ndarray]:
        return {k: v[0] for k, v in standard_params(self.family, self.as_array()[None, :]).items()}


def power_tilt(c: Component, gamma) -> Component:
    """Shift a power-family component: pareto alpha -> alpha - gamma, beta/dirichlet add."""
    if c.family.kind not in ("pareto", "beta", "dirichlet"):
        raise ValueError("power tilting applies to pareto, beta, and dirichlet components")
    gamma = np.broadcast_to(np.asarray(gamma, float), (c.family.stat_dim,))
    new = c.as_array() + gamma
    viol = domain_violations(c.family, new[None, :])
    if viol:
        _, j, msg = viol[0]
        raise InvalidTiltError(f"invalid tilt: {msg}", component=0, coordinate=j)
    return Component(c.family, tuple(float(v) for v in new))


# ---------------------------------------------------------------------------
# mixtures


class MixtureModel:
    """Weighted mixture of same-family components in natural parameters."""

    def __init__(self, family: FamilySpec, eta: np.ndarray, log_w: np.ndarray):
        eta = np.atleast_2d(np.asarray(eta, float))
        log_w = np.asarray(log_w, float).reshape(-1)
        if eta.shape != (log_w.shape[0], family.stat_dim):
            raise ValueError(
                f"natural parameters must be ({log_w.shape[0]}, {family.stat_dim}), got {eta.shape}"
            )
        if log_w.shape[0] < 1:
            raise ValueError("a mixture needs at least one component")
        viol = domain_violations(family, eta)
        if viol:
            raise ValueError("natural parameters outside the family domain: " + viol[0][2])
        eta.setflags(write=False)
        log_w.setflags(write=False)
        self.family = family
        self.eta = eta
        self.log_w = log_w

    @classmethod
    def from_weights(cls, family: FamilySpec, weights, eta) -> "MixtureModel":
        weights = np.asarray(weights, float).reshape(-1)
        if (weights <= 0).any():
            raise ValueError("mixture weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12 * max(1, len(weights)):
            raise ValueError(f"mixture weights must sum to 1, got {weights.sum()!r}")
        return cls(family, eta, np.log(weights))

    @classmethod
    def from_components(cls, components: Iterable[Component], weights) -> "MixtureModel":
        components = list(components)
        fam = components[0].family
        if any(c.family != fam for c in components):
            raise ValueError("all mixture components must share one family spec")
        return cls.from_weights(fam, weights, np.array([c.as_array() for c in components]))

    # -- basics ------------------------------------------------------------
    @property
    def k(self) -> int:
        return self.log_w.shape[0]

    @property
    def d(self) -> int:
        return self.family.d

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_w)

    def component(self, k: int) -> Component:
        return Component(self.family, tuple(float(v) for v in self.eta[k]))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, MixtureModel)
            and self.family == other.family
            and np.array_equal(self.eta, other.eta)
            and np.array_equal(self.log_w, other.log_w)
        )

    def __repr__(self) -> str:
        return f"MixtureModel(kind={self.family.kind}, d={self.d}, k={self.k})"

    # -- densities -----------------------------------------------------------
    def component_log_density(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        check_support(self.family, X)
        if self.family.kind == "dirichlet" and self.family.d == 1:
            # degenerate point mass at the simplex total
            return np.zeros((X.shape[0], self.k))
        if self.family.stat_dim == 0:
            return np.zeros((X.shape[0], self.k))
        stats = suff_stats(self.family, X)
        return stats @ self.eta.T + log_g(self.family, self.eta) + log_h(self.family, X)[:, None]

    def log_density(self, X) -> np.ndarray:
        comp = self.component_log_density(X)
        return logsumexp(comp + self.log_w, axis=1)

    def density(self, X) -> np.ndarray:
        return np.exp(self.log_density(X))

    # -- tilting -------------------------------------------------------------
    def tilt(self, gamma) -> "MixtureModel":
        """Shift all components by gamma and reweight; exact identity at gamma = 0."""
        gamma = np.broadcast_to(np.asarray(gamma, float), (self.family.stat_dim,))
        if not np.isfinite(gamma).all():
            raise InvalidTiltError("tilt coefficients must be finite")
        if not gamma.any():
            return MixtureModel(self.family, self.eta, self.log_w)
        new_eta = self.eta + gamma
        viol = domain_violations(self.family, new_eta)
        if viol:
            k, j, msg = viol[0]
            raise InvalidTiltError(f"invalid tilt: {msg}", component=k, coordinate=j)
        log_w = self.log_w + log_g(self.family, self.eta) - log_g(self.family, new_eta)
        log_w = log_w - logsumexp(log_w)
        return MixtureModel(self.family, new_eta, log_w)

    # -- conditioning ----------------------------------------------------------
    def marginal(self, coords: Sequence[int]) -> "MixtureModel":
        """Marginal over a coordinate subset; exact for product families."""
        if not self.family.is_product:
            raise ValueError("marginals over dirichlet coordinates are not product-form")
        coords = list(coords)
        cols = np.concatenate([np.arange(self.family.stat_slice(j).start, self.family.stat_slice(j).stop) for j in coords]) if coords else np.empty(0, int)
        return MixtureModel(self.family.subset(coords), self.eta[:, cols], self.log_w)

    def conditional(self, observed_coords: Sequence[int], observed_values) -> "MixtureModel":
        """Distribution of missing coordinates given observed ones under this mixture.

        Component parameters on the missing coordinates are unchanged for
        product families; only the weights update by the observed likelihood.
        """
        observed_coords = list(observed_coords)
        observed_values = np.asarray(observed_values, float).reshape(-1)
        if len(observed_values) != len(observed_coords):
            raise ValueError("one observed value per observed coordinate is required")
        missing = [j for j in range(self.d) if j not in set(observed_coords)]
        if self.family.is_product:
            if observed_coords:
                obs_model = self.marginal(observed_coords)
                obs_ll = obs_model.component_log_density(observed_values[None, :])[0]
            else:
                obs_ll = np.zeros(self.k)
            if np.all(np.isinf(obs_ll) & (obs_ll < 0)):
                raise ValueError("impossible observation: zero likelihood in every component")
            log_w = self.log_w + obs_ll
            log_w = log_w - logsumexp(log_w)
            cols = (
                np.concatenate([np.arange(self.family.stat_slice(j).start, self.family.stat_slice(j).stop) for j in missing])
                if missing
                else np.empty(0, int)
            )
            return MixtureModel(self.family.subset(missing), self.eta[:, cols], log_w)
        return self._dirichlet_conditional(observed_coords, observed_values, missing)

    def _dirichlet_conditional(self, obs, values, missing):
        if abs(self.family.simplex_total - 1.0) > 1e-12:
            raise ValueError("conditioning a scaled simplex model is not supported")
        if not missing:
            return MixtureModel(FamilySpec("dirichlet", 0), np.zeros((self.k, 0)), self.log_w)
        alpha = self.eta + 1.0
        rest = float(1.0 - values.sum())
        if rest <= 0:
            raise ValueError("observed simplex coordinates already exhaust the total")
        a_obs = alpha[:, obs]
        a_rest = alpha[:, missing].sum(axis=1)
        # aggregated marginal of (observed coords, remainder)
        if obs:
            logb = gammaln(a_obs).sum(axis=1) + gammaln(a_rest) - gammaln(a_obs.sum(axis=1) + a_rest)
            obs_ll = ((a_obs - 1.0) * np.log(values)).sum(axis=1) + (a_rest - 1.0) * np.log(rest) - logb
        else:
            obs_ll = np.zeros(self.k)
        log_w = self.log_w + obs_ll
        log_w = log_w - logsumexp(log_w)
        sub = FamilySpec.dirichlet(len(missing), total=rest)
        return MixtureModel(sub, self.eta[:, missing], log_w)

    # -- sampling ----------------------------------------------------------
    def sample(self, rng, n: int) -> np.ndarray:
        """Draw n rows: component by weight, then coordinates."""
        if self.d == 0:
            return np.zeros((n, 0))
        comp = rng.choice(self.k, size=n, p=self.weights / self.weights.sum())
        out = np.empty((n, self.d))
        kind = self.family.kind
        if kind == "dirichlet":
            t = self.family.simplex_total
            for k in np.unique(comp):
                idx = np.nonzero(comp == k)[0]
                if self.d == 1:
                    out[idx, 0] = t
                else:
                    out[idx] = t * rng.dirichlet(self.eta[k] + 1.0, size=len(idx))
            return out
        eta = self.eta[comp]
        if kind in _GAUSSIAN_KINDS:
            var = -0.5 / eta[:, 1::2]
            mu = eta[:, 0::2] * var
            out = rng.normal(mu, np.sqrt(var))
        elif kind == "binomial-product":
            out = rng.binomial(np.asarray(self.family.trials), expit(eta)).astype(float)
        elif kind == "negative-binomial":
            out = rng.negative_binomial(np.asarray(self.family.failures), 1.0 - np.exp(eta)).astype(float)
        elif kind == "pareto":
            alpha = -1.0 - eta
            out = np.asarray(self.family.scale) * rng.random((n, self.d)) ** (-1.0 / alpha)
        elif kind == "beta":
            out = rng.beta(eta[:, 0::2] + 1.0, eta[:, 1::2] + 1.0)
        else:  # pragma: no cover
            raise ValueError(kind)
        return out.reshape(n, self.d)

    def mean(self) -> np.ndarray:
        """Mixture mean per coordinate."""
        kind = self.family.kind
        std = standard_params(self.family, self.eta)
        if kind in _GAUSSIAN_KINDS:
            comp_mean = std["mu"]
        elif kind == "binomial-product":
            comp_mean = np.asarray(self.family.trials, float) * std["p"]
        elif kind == "negative-binomial":
            p = std["p"]
            comp_mean = np.asarray(self.family.failures, float) * p / (1.0 - p)
        elif kind == "pareto":
            a = std["alpha"]
            comp_mean = np.where(a > 1, np.asarray(self.family.scale, float) * a / np.maximum(a - 1, 1e-300), np.inf)
        elif kind == "beta":
            comp_mean = std["alpha"] / (std["alpha"] + std["beta"])
        else:  # dirichlet
            a = std["alpha"]
            comp_mean = self.family.simplex_total * a / a.sum(axis=1, keepdims=True)
        return self.weights @ comp_mean

    def canonical(self) -> "MixtureModel":
        """Components sorted by natural parameters so label swaps serialize stably."""
        order = np.lexsort(self.eta.T[::-1])
        return MixtureModel(self.family, self.eta[order], self.log_w[order])

    # -- persistence ---------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "family": self.family.to_dict(),
            "log_weights": [float(v) for v in self.log_w],
            "weights": [float(v) for v in self.weights],
            "components": [[float(v) for v in row] for row in self.eta],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MixtureModel":
        fam = FamilySpec.from_dict(doc["family"])
        return cls(fam, np.asarray(doc["components"], float), np.asarray(doc["log_weights"], float))

    def save(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "MixtureModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @property
    def digest(self) -> str:
        return config_hash(self.to_dict())


# ---------------------------------------------------------------------------
# kernel density estimation


def silverman_bandwidth(x: np.ndarray) -> float:
    """Rule-of-thumb bandwidth from the standard deviation and IQR."""
    x = np.asarray(x, float)
    sd = float(np.std(x))
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * len(x) ** (-0.2)


def kde_fit(values: np.ndarray, bandwidth=None, spec: FamilySpec | None = None) -> MixtureModel:
    """Gaussian product-kernel density estimate: one equal-weight component per row."""
    if spec is not None and spec.kind != "gaussian-kde":
        raise ValueError(f"kernel density estimation needs a gaussian kernel family, not {spec.kind!r}")
    X = np.atleast_2d(np.asarray(values, float))
    if X.shape[0] < 2:
        raise ValueError("kde needs at least two rows")
    if np.isnan(X).any():
        raise ValueError("kde input must be fully observed")
    d = X.shape[1]
    if bandwidth is None:
        h = np.array([silverman_bandwidth(X[:, j]) for j in range(d)])
    else:
        h = np.broadcast_to(np.asarray(bandwidth, float), (d,)).copy()
    if (h <= 0).any():
        raise ValueError("bandwidths must be strictly positive (constant coordinate?)")
    fam = FamilySpec.kde(d, tuple(float(v) for v in h))
    eta = gaussian_natural(X, np.broadcast_to(h * h, X.shape))
    log_w = np.full(X.shape[0], -np.log(X.shape[0]))
    return MixtureModel(fam, eta, log_w)
