"""End-to-end acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line (shown in the "acceptance criteria" section
of the pytest summary) before asserting.
"""

import csv
import math

import numpy as np
import pytest
import scipy.special

from softnpg import checks, cli, diagnostics as diag
from softnpg.dp import evaluate, soft_optimal, value_of_mu
from softnpg.mdp import random_mdp, save_mdp, uniform_distribution
from softnpg.npg import RunConfig, auto_step_size, reference_optimum, resolve_reference, run
from softnpg.policy import onehot_features, policy_from, random_features

from conftest import CRITERIA_LINES

LAM = 1.0
HORIZON = 2000


def report(number, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {name} ({detail})"
    CRITERIA_LINES.append(line)
    print(line)
    return ok


@pytest.fixture(scope="session")
def mdp10():
    return random_mdp(10, 4, seed=0, r_range=(0.1, 1.0), gamma=0.9)


@pytest.fixture(scope="session")
def tabular_run(mdp10):
    return run(mdp10, onehot_features(10, 4), RunConfig(lam=LAM, horizon=HORIZON))


@pytest.fixture(scope="session")
def restricted_run(mdp10):
    feats = random_features(10, 4, 20, seed=0)
    mu = uniform_distribution(10)
    ref = resolve_reference(mdp10, feats, LAM, mu, grad_tol=1e-9)
    assert ref.kind == "reference_optimum" and ref.converged
    return run(mdp10, feats, RunConfig(lam=LAM, horizon=HORIZON), reference=ref)


def test_01_linear_convergence(tabular_run):
    eta = tabular_run.eta
    t = np.array([r.t for r in tabular_run])
    phi = np.array([r.phi for r in tabular_run])
    excess = phi - ((1 - eta * LAM) ** t * math.log(4) + 1e-8)
    summary = diag.summarize(tabular_run.records, eta, LAM, 0.9, 4)
    bound = math.log1p(-eta * LAM) + 0.01
    ok = excess.max() <= 0 and summary.fitted_rate <= bound
    report(1, "potential contracts geometrically", ok,
           f"max excess {excess.max():.2e}, slope {summary.fitted_rate:.3e} <= {bound:.3e}")
    assert ok


def test_02_value_gap_bound(tabular_run):
    eta = tabular_run.eta
    worst = max(r.value_gap - ((1 - eta * LAM) ** r.t * math.log(4) / (eta * 0.1) + 1e-8)
                for r in tabular_run)
    ok = worst <= 0
    report(2, "optimality gap bound", ok, f"max excess {worst:.2e}")
    assert ok


def test_03_tabular_realizability(tabular_run):
    worst = max(r.loss_min for r in tabular_run)
    ok = worst <= 1e-10
    report(3, "tabular regression loss vanishes", ok, f"max loss {worst:.2e}")
    assert ok


def test_04_restricted_convergence_bounds(restricted_run):
    m = diag.theorem_bounds(restricted_run.records, restricted_run.eta, LAM, 0.9, 4)
    ok = m.min_margin >= -1e-8
    report(4, "restricted-feature bounds", ok,
           f"min margin {m.min_margin:.3e}, C* {m.c_star[-1]:.3g}, eps {m.eps_approx[-1]:.3g}")
    assert ok


def test_05_drift_inequality(tabular_run, restricted_run):
    worst = min(r.drift_slack for tr in (tabular_run, restricted_run) for r in tr)
    ok = worst >= -1e-9
    report(5, "one-step drift inequality", ok, f"min slack {worst:.2e}")
    assert ok


def test_06_identity_battery():
    rng = np.random.default_rng(2024)
    total = checks.Report()
    for _ in range(20):
        n_s, n_a = int(rng.integers(2, 7)), int(rng.integers(2, 5))
        seed = int(rng.integers(2**31))
        mdp = random_mdp(n_s, n_a, seed, gamma=float(rng.uniform(0.5, 0.95)))
        lam = float(rng.choice([0.1, 1.0, 10.0]))
        feats = (onehot_features(n_s, n_a) if rng.random() < 0.5
                 else random_features(n_s, n_a, int(rng.integers(1, n_s * n_a + 1)), seed))
        total.merge(checks.lemma_checks(mdp, feats, lam, seed=seed, n_pairs=1))
    ok = total.passed
    detail = "; ".join(f"{r.name} {r.worst:.1e}" for r in total.results)
    report(6, "identity battery", ok, detail)
    assert ok, "\n".join(total.lines())


def test_07_value_sandwich():
    rng = np.random.default_rng(7)
    worst = -math.inf
    for _ in range(100):
        n_s, n_a = int(rng.integers(1, 8)), int(rng.integers(1, 6))
        mdp = random_mdp(n_s, n_a, int(rng.integers(2**31)), gamma=float(rng.uniform(0.3, 0.99)))
        lam = float(rng.choice([0.1, 1.0, 10.0]))
        pi = np.clip(rng.dirichlet(np.ones(n_a) * 0.5, size=n_s), 1e-12, None)
        pi /= pi.sum(axis=1, keepdims=True)
        v = evaluate(mdp, pi, lam).v_lambda
        lo = mdp.r_min / (1 - mdp.gamma)
        hi = (mdp.r_max + lam * math.log(n_a)) / (1 - mdp.gamma)
        worst = max(worst, lo - v.min(), v.max() - hi)
    ok = worst <= 1e-9
    report(7, "value sandwich", ok, f"max violation {worst:.2e}")
    assert ok


def test_08_probability_floor(tabular_run):
    ref = tabular_run.reference
    feats = onehot_features(10, 4)
    support = ref.visit.d_mu > 0
    worst = -math.inf
    for r in tabular_run:
        table = policy_from(r.theta, feats).table
        floor = diag.claim2_floor(r.phi, ref.visit, ref.policy)
        worst = max(worst, float(np.max(floor[support] - table[support])))
    ok = worst <= 1e-12
    report(8, "probability floor from potential", ok, f"max floor - pi {worst:.2e}")
    assert ok


def test_09_nonsingularity(tabular_run, restricted_run):
    details, ok = [], True
    for name, tr in (("tabular", tabular_run), ("restricted", restricted_run)):
        ref = tr.reference
        sigma = min(r.sigma_min_g for r in tr)
        p_min = min(r.min_prob for r in tr)
        phi_max = max(r.phi for r in tr)
        floor = float(diag.claim2_floor(phi_max, ref.visit, ref.policy)[ref.visit.d_mu > 0].min())
        ok &= p_min > 0 and sigma > 1e-12 and p_min >= floor - 1e-12
        ok &= sigma >= 0.5 * min(tr.sigma_proxy, sigma)
        details.append(f"{name}: sigma {sigma:.2e}, p_min {p_min:.3e} >= {floor:.3e}")
    report(9, "Fisher non-singularity", ok, "; ".join(details))
    assert ok


def test_10_closed_form_update(mdp10):
    feats = onehot_features(10, 4)
    trace = run(mdp10, feats, RunConfig(lam=LAM, horizon=500))
    eta = trace.eta
    log_pi = np.full((10, 4), -math.log(4))
    worst = 0.0
    for r in trace.records + [None]:
        theta = trace.final_theta if r is None else r.theta
        table = policy_from(theta, feats).table
        worst = max(worst, float((0.5 * np.abs(table - np.exp(log_pi)).sum(axis=1)).max()))
        ev = evaluate(mdp10, np.exp(log_pi), LAM)
        logits = log_pi + eta * (ev.q_lambda - LAM * log_pi)
        log_pi = logits - scipy.special.logsumexp(logits, axis=1, keepdims=True)
    ok = worst <= 1e-8
    report(10, "tabular multiplicative-update equivalence", ok, f"max TV {worst:.2e}, eta {eta:.3e}")
    assert ok


def test_11_oracle_consistency(mdp10):
    mu = uniform_distribution(10)
    pi_star, _ = soft_optimal(mdp10, LAM)
    opt = reference_optimum(mdp10, onehot_features(10, 4), LAM, grad_tol=1e-9)
    tv = float((0.5 * np.abs(opt.policy.table - pi_star).sum(axis=1)).max())
    v_star = value_of_mu(evaluate(mdp10, pi_star, LAM), mu)
    rng = np.random.default_rng(11)
    excess = -math.inf
    for _ in range(1000):
        pi = np.clip(rng.dirichlet(np.ones(4), size=10), 1e-300, None)
        pi /= pi.sum(axis=1, keepdims=True)
        excess = max(excess, value_of_mu(evaluate(mdp10, pi, LAM), mu) - v_star)
    ok = tv <= 1e-6 and excess <= 1e-8
    report(11, "soft optimum oracles agree", ok, f"TV {tv:.2e}, max excess {excess:.2e}")
    assert ok


def test_12_lambda_sweep(mdp10, tmp_path):
    path = tmp_path / "mdp10.json"
    save_mdp(mdp10, path)
    out = tmp_path / "sweep.csv"
    lambdas = (0.25, 0.5, 1.0, 2.0)
    code = cli.main(["sweep", "--mdp", str(path), "--lambdas", ",".join(map(str, lambdas)),
                     "--horizon", str(HORIZON), "--jobs", "4", "--out", str(out)])
    assert code == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ok, details = len(rows) == len(lambdas), []
    sigma = None
    for row, lam in zip(rows, lambdas):
        if sigma is None:
            trace = run(mdp10, onehot_features(10, 4), RunConfig(lam=lam, horizon=1))
            sigma = trace.sigma_proxy
        eta = auto_step_size(mdp10, lam, sigma)
        bound = math.log1p(-eta * lam) + 0.01
        rate = float(row["fitted_rate"])
        ok &= not row["error"] and float(row["lambda"]) == lam and rate <= bound
        ok &= float(row["eta"]) == pytest.approx(eta, rel=1e-12)
        details.append(f"lam {lam:g}: {rate:.2e} <= {bound:.4f}")
    report(12, "rate consistency across lambda", ok, "; ".join(details))
    assert ok
