"""Entropy-regularized natural policy gradient with exact evaluation.

The update direction is the minimum-norm solution of the compatible function
approximation regression, which satisfies ``G w = (1 - gamma) grad V``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import diagnostics as diag
from .dp import EvalResult, VisitationResult, evaluate, soft_optimal, value_of_mu, visitation
from .mdp import FiniteMdp, uniform_distribution, validate_distribution
from .policy import FeatureMap, LogLinearPolicy, policy_from, policy_tables, uniform_policy

log = logging.getLogger(__name__)

# where the two published forms of the step-size rule disagree we follow the log|A| one
STEP_SIZE_NOTE = ("eta = min{(1-gamma)^2 sigma^2 r_min / (r_max + lambda log|A|)^2, 1/(2 lambda)}; "
                  "a variant of the rule with lambda|A| in place of lambda log|A| is treated as a typo")


class NumericalAbort(RuntimeError):
    """An iterate became non-finite; carries the offending iteration index."""

    def __init__(self, t: int, reason: str):
        super().__init__(f"iteration {t}: {reason}")
        self.t = t


@dataclass(frozen=True, eq=False)
class NpgStep:
    w: np.ndarray
    fisher: np.ndarray
    loss_at_w: float     # excess loss: advantage-target regression residual
    loss_raw: float      # same w, target Q - lambda log pi
    grad: np.ndarray
    sigma_min: float     # on the policy-identifiable subspace
    w_norm: float
    fisher_identity_residual: float


@dataclass
class RunConfig:
    lam: float
    eta: float | str = "auto"
    horizon: int = 100
    mu: np.ndarray | None = None
    feature_kind: str = "onehot"
    mdp_source: str = ""
    sigma: float | None = None   # override for the step-size proxy

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.eta != "auto":
            self.eta = float(self.eta)
            if not self.eta > 0:
                raise ValueError(f"eta must be > 0 or 'auto', got {self.eta}")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError(f"sigma override must be > 0, got {self.sigma}")


def regularized_target(ev: EvalResult, policy: LogLinearPolicy) -> np.ndarray:
    """Q_lambda(s, a) - lambda log pi(a|s): the regression target."""
    return ev.q_lambda - ev.lam * policy.log_table


def fisher(policy: LogLinearPolicy, visit: VisitationResult) -> np.ndarray:
    sc = policy.scores()
    g = np.einsum("sa,sai,saj->ij", visit.delta_mu, sc, sc)
    return 0.5 * (g + g.T)


def policy_gradient(mdp: FiniteMdp, policy: LogLinearPolicy, ev: EvalResult,
                    visit: VisitationResult, lam: float | None = None) -> np.ndarray:
    """Exact gradient of the regularized value at mu with respect to theta."""
    if lam is not None and lam != ev.lam:
        raise ValueError("lambda does not match the evaluation")
    target = regularized_target(ev, policy)
    return np.einsum("sa,sai,sa->i", visit.delta_mu, policy.scores(), target) / (1 - mdp.gamma)


def restricted_sigma_min(g: np.ndarray, basis: np.ndarray) -> float:
    """Smallest eigenvalue of G on span(basis); +inf if the span is trivial."""
    if basis.shape[1] == 0:
        return math.inf
    return float(np.linalg.eigvalsh(basis.T @ g @ basis)[0])


def min_norm_solve(g: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimum-norm solution of G w = b for symmetric PSD G, truncating tiny eigenvalues."""
    evals, evecs = np.linalg.eigh(g)
    top = evals[-1] if evals.size else 0.0
    if top <= 0:
        return np.zeros_like(b)
    keep = evals > g.shape[0] * np.finfo(float).eps * top
    coef = (evecs[:, keep].T @ b) / evals[keep]
    return evecs[:, keep] @ coef


def solve_direction(g: np.ndarray, policy: LogLinearPolicy, ev: EvalResult,
                    visit: VisitationResult, lam: float | None = None, gamma: float | None = None,
                    basis: np.ndarray | None = None) -> NpgStep:
    if lam is not None and lam != ev.lam:
        raise ValueError("lambda does not match the evaluation")
    sc = policy.scores()
    delta = visit.delta_mu
    target = regularized_target(ev, policy)
    b = np.einsum("sa,sai,sa->i", delta, sc, target)
    w = min_norm_solve(g, b)
    fit = sc @ w
    # overflow here means the iterate has degenerated; run() turns the nan into an abort
    with np.errstate(over="ignore", invalid="ignore"):
        loss = float(np.sum(delta * (fit - ev.advantage) ** 2))
        loss_raw = float(np.sum(delta * (fit - target) ** 2))
    if basis is None:
        basis = policy.features.identifiable_basis()
    if gamma is None:
        # b equals (1 - gamma) grad; without gamma we report b itself
        grad, scale = b, 1.0
    else:
        grad, scale = b / (1 - gamma), 1 - gamma
    return NpgStep(
        w=w, fisher=g, loss_at_w=loss, loss_raw=loss_raw, grad=grad,
        sigma_min=restricted_sigma_min(g, basis), w_norm=float(np.linalg.norm(w)),
        fisher_identity_residual=float(np.linalg.norm(g @ w - scale * grad)),
    )


def npg_step(mdp: FiniteMdp, policy: LogLinearPolicy, lam: float, mu,
             basis: np.ndarray | None = None) -> tuple[EvalResult, VisitationResult, NpgStep]:
    """Evaluate the policy exactly and compute its NPG direction."""
    ev = evaluate(mdp, policy, lam)
    vis = visitation(mdp, policy, mu)
    step = solve_direction(fisher(policy, vis), policy, ev, vis, gamma=mdp.gamma, basis=basis)
    return ev, vis, step


def step_size_terms(mdp: FiniteMdp, lam: float, sigma: float) -> dict:
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0 (got {sigma}); check that the feature covariance "
                         "under mu is non-singular on the identifiable subspace")
    denom = (mdp.r_max + lam * math.log(mdp.n_actions)) ** 2
    fisher_branch = (1 - mdp.gamma) ** 2 * sigma ** 2 * mdp.r_min / denom
    entropy_branch = 1.0 / (2 * lam)
    branch = "fisher" if fisher_branch <= entropy_branch else "entropy"
    return {"eta": min(fisher_branch, entropy_branch), "fisher_branch": fisher_branch,
            "entropy_branch": entropy_branch, "branch": branch}


def auto_step_size(mdp: FiniteMdp, lam: float, sigma: float) -> float:
    """Largest constant step size admitted by the convergence analysis for a given sigma."""
    return step_size_terms(mdp, lam, sigma)["eta"]


@dataclass
class Reference:
    """The comparator policy pi* with its visitation measure and value.

    ``policy`` is a probability table (soft optimum) or a LogLinearPolicy
    (in-class optimum, kept so its exact log-probabilities are available).
    """

    policy: object
    visit: VisitationResult
    v_mu: float
    kind: str
    grad_tol: float | None = None
    grad_norm: float | None = None
    converged: bool = True

    @property
    def table(self) -> np.ndarray:
        return policy_tables(self.policy)[0]


@dataclass
class ReferenceOptimum:
    policy: LogLinearPolicy
    grad_norm: float
    iterations: int
    converged: bool


def reference_optimum(mdp: FiniteMdp, features: FeatureMap, lam: float, grad_tol: float = 1e-9,
                      mu=None, eta: float | None = None, max_iter: int = 50_000) -> ReferenceOptimum:
    """Best policy within the log-linear class, by NPG ascent run to stationarity.

    Starts at step 1/(2 lambda) and halves it whenever a step would decrease the
    regularized value, so the iteration is monotone.
    """
    if not grad_tol > 0:
        raise ValueError("grad_tol must be > 0")
    mu = uniform_distribution(mdp.n_states) if mu is None else np.asarray(mu, dtype=float)
    eta = 1.0 / (2 * lam) if eta is None else eta
    basis = features.identifiable_basis()
    pol = uniform_policy(features)
    ev, _, step = npg_step(mdp, pol, lam, mu, basis)
    v_cur = value_of_mu(ev, mu)
    best = (float(np.linalg.norm(step.grad)), pol)
    for it in range(max_iter):
        gnorm = float(np.linalg.norm(step.grad))
        if gnorm < best[0]:
            best = (gnorm, pol)
        if gnorm <= grad_tol:
            return ReferenceOptimum(pol, gnorm, it, True)
        cand = policy_from(pol.theta + eta * step.w, features)
        ev_c, _, step_c = npg_step(mdp, cand, lam, mu, basis)
        v_c = value_of_mu(ev_c, mu)
        if v_c >= v_cur - 1e-14 * abs(v_cur):
            pol, step, v_cur = cand, step_c, v_c
        else:
            eta *= 0.5
            if eta < 1e-12:
                break
    log.warning("reference_optimum stopped at |grad| = %.3e > %.1e", best[0], grad_tol)
    return ReferenceOptimum(best[1], best[0], max_iter, False)


def resolve_reference(mdp: FiniteMdp, features: FeatureMap, lam: float, mu,
                      grad_tol: float = 1e-9, tabular: bool | None = None) -> Reference:
    """soft_optimal for one-hot features, reference_optimum otherwise."""
    if tabular is None:
        tabular = is_onehot(features)
    if tabular:
        pol, _ = soft_optimal(mdp, lam)
        ref = Reference(pol, visitation(mdp, pol, mu), 0.0, "soft_optimal")
    else:
        opt = reference_optimum(mdp, features, lam, grad_tol, mu)
        pol = opt.policy
        ref = Reference(pol, visitation(mdp, pol, mu), 0.0, "reference_optimum",
                        grad_tol, opt.grad_norm, opt.converged)
    ref.v_mu = value_of_mu(evaluate(mdp, pol, lam), mu)
    return ref


def is_onehot(features: FeatureMap) -> bool:
    n = features.n_states * features.n_actions
    return features.dim == n and np.array_equal(features.phi.reshape(n, n), np.eye(n))


@dataclass
class RunTrace:
    records: list[diag.IterRecord]
    eta: float
    sigma_proxy: float
    step_rule: dict
    reference: Reference
    final_theta: np.ndarray = field(repr=False, default=None)

    def __iter__(self) -> Iterator[diag.IterRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]


def run(mdp: FiniteMdp, features: FeatureMap, config: RunConfig,
        reference: Reference | None = None) -> RunTrace:
    """Run the NPG iteration from theta = 0 for ``config.horizon`` steps, recording diagnostics."""
    lam = config.lam
    mu = uniform_distribution(mdp.n_states) if config.mu is None else \
        validate_distribution(config.mu, mdp.n_states)
    if reference is None:
        reference = resolve_reference(mdp, features, lam, mu)
    basis = features.identifiable_basis()
    support = mu > 0
    dstar_support = reference.visit.d_mu > 0

    theta = np.zeros(features.dim)
    pol = uniform_policy(features)
    ev, vis, step = npg_step(mdp, pol, lam, mu, basis)

    sigma_proxy = config.sigma if config.sigma is not None else step.sigma_min
    if config.eta == "auto":
        rule = step_size_terms(mdp, lam, sigma_proxy)
        eta = rule["eta"]
    else:
        eta = float(config.eta)
        rule = {"eta": eta, "branch": "user"}
    rule["formula"] = STEP_SIZE_NOTE

    records: list[diag.IterRecord] = []
    phi = diag.potential(reference.policy, reference.visit, pol)
    for t in range(config.horizon):
        if t > 0:
            try:
                ev, vis, step = npg_step(mdp, pol, lam, mu, basis)
            except (ValueError, np.linalg.LinAlgError) as exc:
                raise NumericalAbort(t, str(exc)) from exc
        if not (np.all(np.isfinite(step.w)) and np.all(np.isfinite(ev.v_lambda))
                and math.isfinite(step.loss_at_w)):
            raise NumericalAbort(t, "non-finite NPG direction, value or loss")
        theta_next = theta + eta * step.w
        if not np.all(np.isfinite(theta_next)):
            raise NumericalAbort(t, "parameter overflow")
        pol_next = policy_from(theta_next, features)
        phi_next = diag.potential(reference.policy, reference.visit, pol_next)
        v_mu = value_of_mu(ev, mu)
        gap = reference.v_mu - v_mu
        c_t = diag.concentrability(reference.visit, reference.policy, vis, pol)
        rec = diag.IterRecord(
            t=t, phi=phi, value_gap=gap, c_t=c_t, loss_min=step.loss_at_w,
            sigma_min_g=step.sigma_min, min_prob=float(pol.table[support].min()),
            w_norm=step.w_norm, eta=eta,
            drift_slack=diag.drift_slack(phi, phi_next, gap, c_t, step.loss_at_w, eta, lam, mdp.gamma),
            phi_next=phi_next, min_prob_dstar=float(pol.table[dstar_support].min()),
            loss_raw=step.loss_raw, grad_norm=float(np.linalg.norm(step.grad)),
            fisher_identity_residual=step.fisher_identity_residual, v_mu=v_mu,
            weighted_value=float(vis.d_mu @ ev.v_lambda), theta=theta.copy(),
        )
        if any(math.isnan(x) for x in (rec.phi, rec.phi_next, rec.value_gap)):
            raise NumericalAbort(t, "NaN in diagnostics")
        records.append(rec)
        theta, pol, phi = theta_next, pol_next, phi_next
    return RunTrace(records, eta, sigma_proxy, rule, reference, final_theta=theta)
