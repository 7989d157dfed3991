"""Per-iteration convergence measurements: potential, concentrability, drift, bounds, rates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from .dp import VisitationResult
from .policy import FeatureMap, entropies, policy_tables

CSV_COLUMNS = ("t", "phi", "value_gap", "c_t", "loss_min", "sigma_min_g",
               "min_prob", "w_norm", "drift_slack")


@dataclass
class IterRecord:
    t: int
    phi: float
    value_gap: float
    c_t: float
    loss_min: float
    sigma_min_g: float
    min_prob: float
    w_norm: float
    eta: float
    drift_slack: float
    # extras kept for post-hoc checks; not part of the CSV contract
    phi_next: float = math.nan
    min_prob_dstar: float = math.nan
    loss_raw: float = math.nan
    grad_norm: float = math.nan
    fisher_identity_residual: float = math.nan
    v_mu: float = math.nan
    weighted_value: float = math.nan
    theta: np.ndarray = field(default=None, repr=False)

    def csv_row(self) -> dict:
        return {k: getattr(self, k) for k in CSV_COLUMNS}


@dataclass
class RunSummary:
    c_star: float
    eps_approx: float
    fitted_rate: float
    theorem_bound_margin: float
    p_floor: float
    sigma_floor: float
    final_phi: float

    def as_dict(self) -> dict:
        return asdict(self)


def potential(pi_star, d_star: VisitationResult, pi) -> float:
    """Visitation-weighted KL(pi* || pi); +inf if pi misses mass that pi* puts on a visited state."""
    p_star, log_star = policy_tables(pi_star)
    _, log_pi = policy_tables(pi)
    weight = d_star.d_mu[:, None] * p_star
    mask = weight > 0
    if np.any(np.isneginf(log_pi[mask])):
        return math.inf
    return float(np.sum(weight[mask] * (log_star[mask] - log_pi[mask])))


def concentrability(d_star: VisitationResult, pi_star, visit_t: VisitationResult, pi_t) -> float:
    """E_{(s,a) ~ d_t x pi_t}[(delta*(s,a) / delta_t(s,a))^2] = sum delta*^2 / delta_t."""
    p_star, _ = policy_tables(pi_star)
    p_t, _ = policy_tables(pi_t)
    num = d_star.d_mu[:, None] * p_star
    den = visit_t.d_mu[:, None] * p_t
    mask = num > 0
    if np.any(den[mask] <= 0):
        return math.inf
    return float(np.sum(num[mask] ** 2 / den[mask]))


def assumption3_matrix(features: FeatureMap, mu) -> tuple[np.ndarray, float]:
    """Feature covariance under s ~ mu, a ~ uniform, and its smallest eigenvalue."""
    mu = np.asarray(mu, dtype=float)
    c = features.centered()
    n_a = features.n_actions
    f = np.einsum("s,sai,saj->ij", mu / n_a, c, c)
    f = 0.5 * (f + f.T)
    return f, float(np.linalg.eigvalsh(f)[0])


def claim2_floor(phi: float, d_star: VisitationResult, pi_star) -> np.ndarray:
    """Lower bound on pi(a|s) implied by potential <= phi; zero off the support of d*."""
    p_star, log_star = policy_tables(pi_star)
    ent = entropies(p_star, log_star)
    delta = d_star.d_mu[:, None] * p_star
    out = np.zeros_like(p_star)
    mask = delta > 0
    s_idx = np.nonzero(mask)[0]
    out[mask] = np.exp(-phi / delta[mask] - ent[s_idx] / p_star[mask])
    return out


def drift_slack(phi_t: float, phi_next: float, value_gap: float, c_t: float, loss: float,
                eta: float, lam: float, gamma: float) -> float:
    if math.isinf(c_t):
        return math.inf
    rhs = -eta * lam * phi_t - eta * (1 - gamma) * value_gap + eta * math.sqrt(c_t * max(loss, 0.0))
    return rhs - (phi_next - phi_t)


def drift_check(record_t: IterRecord, record_t1, eta: float, lam: float, gamma: float) -> float:
    """RHS minus LHS of the one-step drift inequality; negative means it is violated.

    ``record_t1`` may be the next IterRecord or just the next potential value.
    """
    phi_next = record_t1.phi if isinstance(record_t1, IterRecord) else float(record_t1)
    return drift_slack(record_t.phi, phi_next, record_t.value_gap, record_t.c_t,
                       record_t.loss_min, eta, lam, gamma)


@dataclass
class ConvergenceMargins:
    c_star: np.ndarray
    eps_approx: np.ndarray
    phi_bound: np.ndarray
    gap_bound: np.ndarray
    phi_margin: np.ndarray
    gap_margin: np.ndarray

    @property
    def min_margin(self) -> float:
        return float(min(self.phi_margin.min(), self.gap_margin.min()))


def theorem_bounds(trace: Sequence[IterRecord], eta: float, lam: float, gamma: float,
                   n_actions: int) -> ConvergenceMargins:
    """Both convergence bounds at every recorded T, with running-max constants."""
    if len(trace) == 0:
        raise ValueError("trace is empty")
    t = np.array([r.t for r in trace], dtype=float)
    c_star = np.maximum.accumulate(np.array([r.c_t for r in trace], dtype=float))
    eps = np.maximum.accumulate(np.maximum([r.loss_min for r in trace], 0.0))
    with np.errstate(invalid="ignore"):
        floor = np.sqrt(c_star * eps) / lam
    floor = np.where(np.isnan(floor), np.inf, floor)
    contraction = (1 - eta * lam) ** t * math.log(n_actions)
    phi_bound = contraction + floor
    gap_bound = contraction / (eta * (1 - gamma)) + floor / (eta * (1 - gamma))
    phi = np.array([r.phi for r in trace])
    gap = np.array([r.value_gap for r in trace])
    return ConvergenceMargins(c_star, eps, phi_bound, gap_bound, phi_bound - phi, gap_bound - gap)


def fit_rate(trace, floor: float = 0.0, min_points: int = 10) -> float:
    """OLS slope of log(phi_t - floor) against t.

    ``trace`` is a sequence of IterRecords or of potential values (t = index).
    """
    if len(trace) and isinstance(trace[0], IterRecord):
        t = np.array([r.t for r in trace], dtype=float)
        phi = np.array([r.phi for r in trace], dtype=float)
    else:
        phi = np.asarray(trace, dtype=float)
        t = np.arange(phi.size, dtype=float)
    excess = phi - floor
    use = np.isfinite(excess) & (excess > 1e-12)
    if use.sum() < min_points:
        raise ValueError(f"only {int(use.sum())} usable points above floor {floor:g}; need {min_points}")
    x, y = t[use], np.log(excess[use])
    x = x - x.mean()
    return float(np.dot(x, y - y.mean()) / np.dot(x, x))


def summarize(trace: Sequence[IterRecord], eta: float, lam: float, gamma: float,
              n_actions: int) -> RunSummary:
    margins = theorem_bounds(trace, eta, lam, gamma, n_actions)
    c_star = float(margins.c_star[-1])
    eps = float(margins.eps_approx[-1])
    floor = math.sqrt(c_star * eps) / lam if math.isfinite(c_star) else math.inf
    try:
        rate = fit_rate(trace, floor)
    except ValueError:
        rate = math.nan
    return RunSummary(
        c_star=c_star,
        eps_approx=eps,
        fitted_rate=rate,
        theorem_bound_margin=margins.min_margin,
        p_floor=float(min(r.min_prob for r in trace)),
        sigma_floor=float(min(r.sigma_min_g for r in trace)),
        final_phi=float(trace[-1].phi),
    )
