"""Exact evaluation of (entropy-regularized) values, visitation measures and the soft optimum.

Everything here is a dense linear solve or a contraction iterated to machine
precision; nothing is sampled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .mdp import FiniteMdp
from .policy import policy_tables


class DomainError(ValueError):
    """A quantity is undefined for the given inputs (e.g. log of a zero probability)."""


@dataclass(frozen=True, eq=False)
class EvalResult:
    v_lambda: np.ndarray        # [s]
    q_lambda: np.ndarray        # [s, a]
    advantage: np.ndarray       # [s, a]
    entropy_value: np.ndarray   # [s], discounted entropy H^pi(s)
    plain_value: np.ndarray     # [s], unregularized V^pi(s)
    lam: float


@dataclass(frozen=True, eq=False)
class VisitationResult:
    d_mu: np.ndarray       # [s]
    delta_mu: np.ndarray   # [s, a] = d_mu(s) * pi(a|s)


def state_transition_matrix(mdp: FiniteMdp, pi: np.ndarray) -> np.ndarray:
    """P_pi[s, s'] = sum_a pi(a|s) P(s'|s, a)."""
    return np.einsum("sa,sat->st", pi, mdp.transitions)


def visitation(mdp: FiniteMdp, policy, mu) -> VisitationResult:
    """Normalized discounted state occupancy started from ``mu``."""
    pi, _ = policy_tables(policy)
    mu = np.asarray(mu, dtype=float)
    p_pi = state_transition_matrix(mdp, pi)
    a = np.eye(mdp.n_states) - mdp.gamma * p_pi
    # d^T (I - gamma P_pi) = (1 - gamma) mu^T
    d = scipy.linalg.solve(a.T, (1.0 - mdp.gamma) * mu)
    if not np.all(np.isfinite(d)):
        raise RuntimeError("visitation solve produced non-finite values")
    return VisitationResult(d, d[:, None] * pi)


def _policy_value(mdp: FiniteMdp, pi: np.ndarray, reward: np.ndarray) -> np.ndarray:
    """Solve V = r_pi + gamma P_pi V for a per-(s,a) reward table."""
    r_pi = np.einsum("sa,sa->s", pi, reward)
    a = np.eye(mdp.n_states) - mdp.gamma * state_transition_matrix(mdp, pi)
    return scipy.linalg.solve(a, r_pi)


def _safe_log_term(pi: np.ndarray, log_pi: np.ndarray) -> np.ndarray:
    # -log pi where pi > 0; entries with pi == 0 never receive weight
    return np.where(pi > 0, -log_pi, 0.0)


def evaluate(mdp: FiniteMdp, policy, lam: float) -> EvalResult:
    """Regularized value, Q, advantage, plus separately solved plain and entropy values.

    ``policy`` is a :class:`LogLinearPolicy` (exact log-probabilities are used)
    or a plain [s, a] probability table.
    """
    if lam < 0:
        raise DomainError(f"lambda must be >= 0, got {lam}")
    pi, log_pi = policy_tables(policy)
    r = mdp.rewards
    plain = _policy_value(mdp, pi, r)
    if lam > 0:
        if not np.all(np.isfinite(log_pi)):
            s, a = np.argwhere(~np.isfinite(log_pi))[0]
            raise DomainError(f"pi({a}|{s}) = 0 with lambda > 0: log-probability undefined")
        lam_log = lam * log_pi
        ent = _policy_value(mdp, pi, -log_pi)
        v = _policy_value(mdp, pi, r - lam_log)
    else:
        ent = _policy_value(mdp, pi, _safe_log_term(pi, log_pi))
        v = plain
        lam_log = np.zeros_like(r)
    q = r + mdp.gamma * mdp.transitions @ v
    adv = q - v[:, None] - lam_log
    return EvalResult(v, q, adv, ent, plain, float(lam))


def value_of_mu(values, mu) -> float:
    """mu-weighted value; accepts an EvalResult (uses v_lambda) or a state-value vector."""
    v = values.v_lambda if isinstance(values, EvalResult) else np.asarray(values, dtype=float)
    return float(np.dot(np.asarray(mu, dtype=float), v))


def soft_bellman(mdp: FiniteMdp, v: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """One soft Bellman backup; returns (new V, Q)."""
    q = mdp.rewards + mdp.gamma * mdp.transitions @ v
    return lam * logsumexp(q / lam, axis=1), q


def soft_optimal(mdp: FiniteMdp, lam: float, tol: float = 1e-12,
                 max_iter: int = 100_000) -> tuple[np.ndarray, np.ndarray]:
    """Optimal regularized policy over all stochastic policies, and its value.

    Iterates the soft Bellman operator until the sup-norm change drops below
    ``tol * (1 - gamma)``; the returned policy is proportional to exp(Q*/lam).
    """
    if lam <= 0:
        raise DomainError("soft_optimal requires lambda > 0")
    v = np.zeros(mdp.n_states)
    threshold = tol * (1.0 - mdp.gamma)
    for _ in range(max_iter):
        v_new, _ = soft_bellman(mdp, v, lam)
        delta = np.max(np.abs(v_new - v))
        v = v_new
        # the change cannot shrink below a few ulps of |V|
        if delta < max(threshold, 8 * np.finfo(float).eps * np.max(np.abs(v))):
            break
    else:
        raise RuntimeError(f"soft Bellman iteration did not converge in {max_iter} steps")
    _, q = soft_bellman(mdp, v, lam)
    log_pi = q / lam - logsumexp(q / lam, axis=1, keepdims=True)
    return np.exp(log_pi), v
