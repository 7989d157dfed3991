"""Feature maps and the softmax log-linear policy class."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .mdp import format_float


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Basis vectors ``phi[s, a, :]`` in R^dim with Euclidean norm at most one."""

    phi: np.ndarray

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        if phi.ndim != 3:
            raise ValueError(f"phi must have shape [s][a][d], got {phi.shape}")
        norms = np.linalg.norm(phi, axis=2)
        if np.any(norms > 1.0 + 1e-12):
            s, a = np.unravel_index(np.argmax(norms), norms.shape)
            raise ValueError(f"feature norm {norms[s, a]:.17g} at ({s},{a}) exceeds 1")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)

    @property
    def dim(self) -> int:
        return self.phi.shape[2]

    @property
    def n_states(self) -> int:
        return self.phi.shape[0]

    @property
    def n_actions(self) -> int:
        return self.phi.shape[1]

    def centered(self) -> np.ndarray:
        """Features minus their uniform action-average in each state."""
        return self.phi - self.phi.mean(axis=1, keepdims=True)

    def identifiable_basis(self) -> np.ndarray:
        """Orthonormal basis (d x k) of parameter directions that change some policy.

        A direction u leaves every softmax policy unchanged iff phi[s, a] @ u is
        constant in a for every s, i.e. u is in the null space of the centered
        features. The Fisher matrix vanishes on that null space for every policy.
        """
        c = self.centered().reshape(-1, self.dim)
        _, sv, vt = np.linalg.svd(c, full_matrices=False)
        if sv.size == 0 or sv[0] == 0.0:
            return np.zeros((self.dim, 0))
        rank = int(np.sum(sv > max(c.shape) * np.finfo(float).eps * sv[0]))
        return vt[:rank].T


def onehot_features(n_states: int, n_actions: int) -> FeatureMap:
    if n_states < 1 or n_actions < 1:
        raise ValueError("sizes must be >= 1")
    d = n_states * n_actions
    return FeatureMap(np.eye(d).reshape(n_states, n_actions, d))


def random_features(n_states: int, n_actions: int, d: int, seed: int) -> FeatureMap:
    """Gaussian features scaled by one global divisor so the longest vector has unit norm."""
    if d < 1:
        raise ValueError("feature dimension must be >= 1")
    rng = np.random.default_rng(seed)
    phi = rng.standard_normal((n_states, n_actions, d))
    phi /= np.linalg.norm(phi, axis=2).max()
    return FeatureMap(phi)


@dataclass(frozen=True, eq=False)
class LogLinearPolicy:
    """pi_theta(a|s) proportional to exp(theta @ phi[s, a]); tables are computed once."""

    theta: np.ndarray
    features: FeatureMap
    table: np.ndarray = field(init=False, repr=False)
    log_table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (self.features.dim,):
            raise ValueError(f"theta must have shape ({self.features.dim},), got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        logits = self.features.phi @ theta
        log_table = logits - logsumexp(logits, axis=1, keepdims=True)
        table = np.exp(log_table)
        for arr in (theta, log_table, table):
            arr.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "log_table", log_table)
        object.__setattr__(self, "table", table)

    def mean_features(self) -> np.ndarray:
        """E_{a ~ pi(.|s)} phi[s, a] for every state, shape [s][d]."""
        return np.einsum("sa,sad->sd", self.table, self.features.phi)

    def scores(self) -> np.ndarray:
        """grad_theta log pi(a|s) for all pairs, shape [s][a][d]."""
        return self.features.phi - self.mean_features()[:, None, :]

    def score(self, s: int, a: int) -> np.ndarray:
        phi = self.features.phi[s]
        return phi[a] - self.table[s] @ phi

    def entropy(self, s: int) -> float:
        return float(entropies(self.table, self.log_table)[s])


def policy_from(theta, features: FeatureMap) -> LogLinearPolicy:
    return LogLinearPolicy(np.asarray(theta, dtype=float), features)


def uniform_policy(features: FeatureMap) -> LogLinearPolicy:
    return LogLinearPolicy(np.zeros(features.dim), features)


def entropies(table: np.ndarray, log_table: np.ndarray | None = None) -> np.ndarray:
    """Shannon entropy (nats) of each row; zero-probability actions contribute nothing."""
    table = np.asarray(table, dtype=float)
    if log_table is None:
        with np.errstate(divide="ignore"):
            log_table = np.log(table)
    with np.errstate(invalid="ignore"):
        terms = np.where(table > 0, table * log_table, 0.0)
    return -terms.sum(axis=1)


def policy_tables(policy) -> tuple[np.ndarray, np.ndarray]:
    """(probabilities, log-probabilities) for a LogLinearPolicy or a plain table."""
    if isinstance(policy, LogLinearPolicy):
        return policy.table, policy.log_table
    table = np.asarray(policy, dtype=float)
    with np.errstate(divide="ignore"):
        return table, np.log(table)


def tabular_theta(table: np.ndarray) -> np.ndarray:
    """Parameter under one-hot features that reproduces a strictly positive table."""
    return np.log(np.asarray(table, dtype=float)).reshape(-1)


def dumps_features(features: FeatureMap) -> str:
    phi = features.phi
    rows = ",\n    ".join(
        "[" + ", ".join("[" + ", ".join(format_float(x) for x in vec) + "]" for vec in state) + "]"
        for state in phi
    )
    return f'{{\n  "dim": {features.dim},\n  "phi": [\n    {rows}\n  ]\n}}\n'


def loads_features(text: str) -> FeatureMap:
    doc = json.loads(text)
    fm = FeatureMap(np.array(doc["phi"], dtype=float))
    if fm.dim != doc["dim"]:
        raise ValueError(f"declared dim {doc['dim']} does not match phi ({fm.dim})")
    return fm


def save_features(features: FeatureMap, path) -> None:
    Path(path).write_text(dumps_features(features))


def load_features(path) -> FeatureMap:
    return loads_features(Path(path).read_text())
