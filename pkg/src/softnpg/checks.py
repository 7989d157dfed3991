"""Numeric identity checks for the facts the convergence analysis rests on.

Every check reports its worst residual next to the tolerance it is held to,
so a failing build shows by how much it fails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import npg
from .dp import evaluate, soft_optimal, value_of_mu, visitation
from .mdp import FiniteMdp, random_mdp, uniform_distribution
from .policy import (FeatureMap, entropies, onehot_features, policy_from, random_features,
                     tabular_theta)

FD_STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    worst: float
    tol: float
    # "le": worst <= tol passes; "ge": worst >= tol passes (margins)
    sense: str = "le"

    @property
    def passed(self) -> bool:
        if math.isnan(self.worst):
            return False
        return self.worst <= self.tol if self.sense == "le" else self.worst >= self.tol

    def line(self) -> str:
        op = "<=" if self.sense == "le" else ">="
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<40s} worst={self.worst:.3e}  ({op} {self.tol:.1e})"


@dataclass
class Report:
    results: list[CheckResult] = field(default_factory=list)

    def add(self, name: str, worst: float, tol: float, sense: str = "le") -> None:
        for r in self.results:
            if r.name == name and r.sense == sense:
                r.worst = max(r.worst, worst) if sense == "le" else min(r.worst, worst)
                return
        self.results.append(CheckResult(name, float(worst), tol, sense))

    def merge(self, other: "Report") -> None:
        for r in other.results:
            self.add(r.name, r.worst, r.tol, r.sense)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def __getitem__(self, name: str) -> CheckResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def lines(self) -> list[str]:
        return [r.line() for r in self.results]


def value_at(mdp: FiniteMdp, features: FeatureMap, theta: np.ndarray, lam: float, mu) -> float:
    return value_of_mu(evaluate(mdp, policy_from(theta, features), lam), mu)


def finite_difference_gradient(mdp, features, theta, lam, mu, h: float = FD_STEP) -> np.ndarray:
    grad = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        grad[i] = (value_at(mdp, features, theta + e, lam, mu)
                   - value_at(mdp, features, theta - e, lam, mu)) / (2 * h)
    return grad


def pdl_residual(mdp, features, theta, theta_p, lam, mu) -> float:
    """|V(theta) - V(theta') - E_{d_theta, pi_theta}[A' + lam log(pi'/pi)] / (1 - gamma)|."""
    pol, pol_p = policy_from(theta, features), policy_from(theta_p, features)
    ev, ev_p = evaluate(mdp, pol, lam), evaluate(mdp, pol_p, lam)
    vis = visitation(mdp, pol, mu)
    inner = ev_p.advantage + lam * (pol_p.log_table - pol.log_table)
    rhs = np.sum(vis.delta_mu * inner) / (1 - mdp.gamma)
    return abs(value_of_mu(ev, mu) - value_of_mu(ev_p, mu) - rhs)


def smoothness_margin(features, theta, theta_p) -> float:
    """||theta - theta'|| minus the largest score difference over all (s, a)."""
    s1 = policy_from(theta, features).scores()
    s2 = policy_from(theta_p, features).scores()
    return float(np.linalg.norm(theta - theta_p) - np.linalg.norm(s1 - s2, axis=2).max())


def lemma_checks(mdp: FiniteMdp, features: FeatureMap, lam: float, seed: int = 0,
                 n_pairs: int = 20, mu=None, theta_scale: float = 1.0) -> Report:
    """Performance difference, score smoothness, gradient vs finite differences, value and Fisher identities."""
    rng = np.random.default_rng(seed)
    mu = uniform_distribution(mdp.n_states) if mu is None else np.asarray(mu, dtype=float)
    rep = Report()
    for _ in range(n_pairs):
        theta = theta_scale * rng.standard_normal(features.dim)
        dist = 10 ** rng.uniform(-3, 1)
        direction = rng.standard_normal(features.dim)
        theta_p = theta + dist * direction / np.linalg.norm(direction)

        rep.add("performance difference", pdl_residual(mdp, features, theta, theta_p, lam, mu), 1e-8)
        rep.add("score smoothness margin", smoothness_margin(features, theta, theta_p), -1e-9, "ge")

        pol = policy_from(theta, features)
        ev = evaluate(mdp, pol, lam)
        vis = visitation(mdp, pol, mu)
        grad = npg.policy_gradient(mdp, pol, ev, vis)
        fd = finite_difference_gradient(mdp, features, theta, lam, mu)
        rel = np.linalg.norm(fd - grad) / max(np.linalg.norm(fd), 1e-12)
        rep.add("gradient vs finite differences (rel)", rel, 1e-5)

        soft_v = np.sum(pol.table * (ev.q_lambda - lam * pol.log_table), axis=1)
        rep.add("value = E_pi[Q - lam log pi]", np.abs(soft_v - ev.v_lambda).max(), 1e-10)
        rep.add("value = plain + lam * entropy",
                np.abs(ev.plain_value + lam * ev.entropy_value - ev.v_lambda).max(), 1e-10)

        g = npg.fisher(pol, vis)
        step = npg.solve_direction(g, pol, ev, vis, gamma=mdp.gamma)
        rep.add("fisher direction identity", np.linalg.norm(g @ step.w - (1 - mdp.gamma) * grad), 1e-8)
    return rep


def instance_invariants(mdp: FiniteMdp, features: FeatureMap, lam: float, seed: int = 0,
                        n_policies: int = 5, mu=None) -> Report:
    """Structural invariants of evaluation, visitation, scores, Fisher matrix and direction."""
    rng = np.random.default_rng(seed)
    mu = uniform_distribution(mdp.n_states) if mu is None else np.asarray(mu, dtype=float)
    n_a = mdp.n_actions
    lo = mdp.r_min / (1 - mdp.gamma)
    hi = (mdp.r_max + lam * math.log(n_a)) / (1 - mdp.gamma)
    basis = features.identifiable_basis()
    rep = Report()
    for _ in range(n_policies):
        pol = policy_from(2 * rng.standard_normal(features.dim), features)
        ev = evaluate(mdp, pol, lam)
        vis = visitation(mdp, pol, mu)
        v = ev.v_lambda
        rep.add("value sandwich violation", max(lo - v.min(), v.max() - hi, 0.0), 1e-9)
        rep.add("advantage centering", np.abs(np.sum(pol.table * ev.advantage, axis=1)).max(), 1e-10)
        rep.add("visitation normalization", abs(vis.d_mu.sum() - 1), 1e-10)
        rep.add("visitation >= (1-gamma) mu violation",
                max(float(np.max((1 - mdp.gamma) * mu - vis.d_mu)), 0.0), 1e-12)
        sc = pol.scores()
        rep.add("score centering", np.abs(np.einsum("sa,sad->sd", pol.table, sc)).max(), 1e-12)
        rep.add("score norm <= 2 violation", max(np.linalg.norm(sc, axis=2).max() - 2, 0.0), 1e-12)
        ent = entropies(pol.table, pol.log_table)
        rep.add("entropy in [0, log|A|] violation",
                max(-ent.min(), ent.max() - math.log(n_a), 0.0), 1e-12)
        target = npg.regularized_target(ev, pol)
        rep.add("regularized target >= 0 violation", max(-target.min(), 0.0), 1e-12)
        g = npg.fisher(pol, vis)
        rep.add("fisher asymmetry", np.abs(g - g.T).max(), 1e-12)
        rep.add("fisher min eigenvalue", np.linalg.eigvalsh(g)[0], -1e-10, "ge")
        step = npg.solve_direction(g, pol, ev, vis, gamma=mdp.gamma, basis=basis)
        gnorm = np.linalg.norm(step.grad)
        weighted = vis.d_mu @ v
        rep.add("gradient norm bound violation", max(gnorm - 2 / (1 - mdp.gamma) * weighted, 0.0), 1e-9)
        if step.sigma_min > 1e-10 and math.isfinite(step.sigma_min):
            bound = (2 / step.sigma_min) / (1 - mdp.gamma) * weighted
            rep.add("direction norm bound violation", max(step.w_norm - bound, 0.0), 1e-9)
        # w minimizes the regression loss: random perturbations never do better
        for _ in range(10):
            w2 = step.w + 1e-3 * rng.standard_normal(step.w.size)
            loss2 = float(np.sum(vis.delta_mu * (sc @ w2 - ev.advantage) ** 2))
            rep.add("direction minimizes loss violation", max(step.loss_at_w - loss2, 0.0), 1e-10)
    return rep


def soft_optimum_checks(mdp: FiniteMdp, lam: float, seed: int = 0, n_random: int = 200, mu=None) -> Report:
    rng = np.random.default_rng(seed)
    mu = uniform_distribution(mdp.n_states) if mu is None else np.asarray(mu, dtype=float)
    rep = Report()
    pi_star, _ = soft_optimal(mdp, lam)
    features = onehot_features(mdp.n_states, mdp.n_actions)
    pol = policy_from(tabular_theta(pi_star), features)
    ev = evaluate(mdp, pol, lam)
    vis = visitation(mdp, pol, mu)
    rep.add("soft optimum stationarity |grad|",
            np.linalg.norm(npg.policy_gradient(mdp, pol, ev, vis)), 1e-6)
    v_star = value_of_mu(ev, mu)
    worst = -math.inf
    for _ in range(n_random):
        table = rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states)
        table = np.clip(table, 1e-300, None)
        table /= table.sum(axis=1, keepdims=True)
        worst = max(worst, value_of_mu(evaluate(mdp, table, lam), mu) - v_star)
    rep.add("soft optimum dominance excess", max(worst, 0.0), 1e-8)
    return rep


def check_suite(n_instances: int = 5, seed: int = 0, lambdas=(0.1, 1.0, 10.0)) -> Report:
    """The full battery over ``n_instances`` random instances."""
    if n_instances < 1:
        raise ValueError("need at least one instance")
    rng = np.random.default_rng(seed)
    total = Report()
    for k in range(n_instances):
        n_s = int(rng.integers(2, 7))
        n_a = int(rng.integers(2, 5))
        inst_seed = int(rng.integers(2**31))
        mdp = random_mdp(n_s, n_a, inst_seed, gamma=float(rng.uniform(0.5, 0.95)))
        lam = float(lambdas[k % len(lambdas)])
        feats = [onehot_features(n_s, n_a),
                 random_features(n_s, n_a, max(1, (n_s * n_a) // 2), inst_seed + 1)]
        for f in feats:
            total.merge(lemma_checks(mdp, f, lam, seed=inst_seed, n_pairs=4))
            total.merge(instance_invariants(mdp, f, lam, seed=inst_seed))
        total.merge(soft_optimum_checks(mdp, lam, seed=inst_seed, n_random=50))
    return total
