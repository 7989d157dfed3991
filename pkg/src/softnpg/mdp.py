"""Finite discounted MDPs, state distributions, generators and the text file format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PROB_TOL = 1e-12


class MdpError(ValueError):
    """Raised when an MDP or distribution violates its invariants."""


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """Tabular MDP with transitions ``P[s, a, s']`` and rewards ``r[s, a]``."""

    transitions: np.ndarray
    rewards: np.ndarray
    gamma: float
    r_min: float = field(init=False)
    r_max: float = field(init=False)

    def __post_init__(self):
        p = np.array(self.transitions, dtype=float)
        r = np.array(self.rewards, dtype=float)
        p.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "transitions", p)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "r_min", float(r.min()) if r.size else float("nan"))
        object.__setattr__(self, "r_max", float(r.max()) if r.size else float("nan"))

    @property
    def n_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[1]


def validate(mdp: FiniteMdp) -> None:
    """Raise :class:`MdpError` describing the first violated invariant."""
    p, r = mdp.transitions, mdp.rewards
    if r.ndim != 2 or r.shape[0] < 1 or r.shape[1] < 1:
        raise MdpError(f"rewards must be a non-empty [s][a] table, got shape {r.shape}")
    n_s, n_a = r.shape
    if p.shape != (n_s, n_a, n_s):
        raise MdpError(f"transitions must have shape {(n_s, n_a, n_s)}, got {p.shape}")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(r))):
        raise MdpError("transitions and rewards must be finite")
    neg = np.argwhere(p < 0)
    if neg.size:
        s, a, s2 = neg[0]
        raise MdpError(f"negative transition probability P[{s}][{a}][{s2}] = {p[s, a, s2]}")
    sums = p.sum(axis=2)
    bad = np.argwhere(np.abs(sums - 1.0) > PROB_TOL)
    if bad.size:
        s, a = bad[0]
        raise MdpError(f"transition row ({s},{a}) sums to {sums[s, a]:.17g}")
    if not mdp.r_min > 0:
        raise MdpError(f"r_min must be positive, got {mdp.r_min}")
    if not 0.0 < mdp.gamma < 1.0:
        raise MdpError(f"gamma must lie in (0,1), got {mdp.gamma}")


def validate_distribution(probs, n_states: int | None = None) -> np.ndarray:
    mu = np.asarray(probs, dtype=float)
    if mu.ndim != 1 or mu.size == 0:
        raise MdpError("state distribution must be a non-empty vector")
    if n_states is not None and mu.size != n_states:
        raise MdpError(f"state distribution has {mu.size} entries, expected {n_states}")
    if np.any(mu < 0) or not np.all(np.isfinite(mu)):
        raise MdpError("state distribution has negative or non-finite entries")
    if abs(mu.sum() - 1.0) > PROB_TOL:
        raise MdpError(f"state distribution sums to {mu.sum():.17g}")
    return mu


def uniform_distribution(n_states: int) -> np.ndarray:
    return np.full(n_states, 1.0 / n_states)


def point_mass(n_states: int, s: int) -> np.ndarray:
    mu = np.zeros(n_states)
    mu[s] = 1.0
    return mu


def random_mdp(n_states: int, n_actions: int, seed: int,
               r_range: tuple[float, float] = (0.1, 1.0),
               gamma: float = 0.9) -> FiniteMdp:
    """Dirichlet(1) transition rows and uniform rewards, fully determined by ``seed``."""
    if n_states < 1 or n_actions < 1:
        raise MdpError("n_states and n_actions must be >= 1")
    lo, hi = r_range
    if not 0 < lo <= hi:
        raise MdpError(f"reward range must satisfy 0 < low <= high, got {r_range}")
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    p = p / p.sum(axis=2, keepdims=True)
    r = rng.uniform(lo, hi, size=(n_states, n_actions)) if hi > lo else np.full((n_states, n_actions), lo)
    mdp = FiniteMdp(p, r, gamma)
    validate(mdp)
    return mdp


def chain_mdp(n_states: int, gamma: float = 0.9, rewards: tuple[float, float] = (1.0, 0.5)) -> FiniteMdp:
    """Deterministic cycle s -> s+1 mod n under both actions; the actions differ only in reward."""
    if n_states < 1:
        raise MdpError("n_states must be >= 1")
    p = np.zeros((n_states, 2, n_states))
    for s in range(n_states):
        p[s, :, (s + 1) % n_states] = 1.0
    r = np.tile(np.asarray(rewards, dtype=float), (n_states, 1))
    mdp = FiniteMdp(p, r, gamma)
    validate(mdp)
    return mdp


# -- structured text format ---------------------------------------------------

def format_float(x: float) -> str:
    return format(float(x), ".17g")


def _nested(arr) -> str:
    arr = np.asarray(arr)
    if arr.ndim == 0:
        return format_float(arr)
    return "[" + ", ".join(_nested(x) for x in arr) + "]"


def dumps_mdp(mdp: FiniteMdp) -> str:
    lines = [
        "{",
        f'  "n_states": {mdp.n_states},',
        f'  "n_actions": {mdp.n_actions},',
        f'  "gamma": {format_float(mdp.gamma)},',
        f'  "rewards": {_nested(mdp.rewards)},',
        f'  "transitions": {_nested(mdp.transitions)}',
        "}",
    ]
    return "\n".join(lines) + "\n"


def loads_mdp(text: str) -> FiniteMdp:
    doc = json.loads(text)
    missing = {"n_states", "n_actions", "gamma", "rewards", "transitions"} - doc.keys()
    if missing:
        raise MdpError(f"MDP document missing keys: {sorted(missing)}")
    mdp = FiniteMdp(np.array(doc["transitions"], dtype=float),
                    np.array(doc["rewards"], dtype=float), doc["gamma"])
    if (mdp.n_states, mdp.n_actions) != (doc["n_states"], doc["n_actions"]):
        raise MdpError("declared sizes do not match table shapes")
    validate(mdp)
    return mdp


def save_mdp(mdp: FiniteMdp, path) -> None:
    Path(path).write_text(dumps_mdp(mdp))


def load_mdp(path) -> FiniteMdp:
    return loads_mdp(Path(path).read_text())
