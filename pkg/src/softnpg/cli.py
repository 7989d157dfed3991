"""Command-line front end: generate instances, run NPG, check invariants, sweep grids.

Exit codes: 0 success, 1 usage/config error, 2 numerical abort, 3 check failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import checks, diagnostics as diag
from .mdp import MdpError, chain_mdp, format_float, load_mdp, random_mdp, save_mdp, uniform_distribution, validate_distribution
from .npg import NumericalAbort, RunConfig, resolve_reference, run
from .policy import FeatureMap, load_features, onehot_features, random_features

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3

SWEEP_COLUMNS = ("lambda", "d", "eta", "fitted_rate", "c_star", "eps_approx", "final_phi",
                 "p_floor", "sigma_floor", "error")

log = logging.getLogger("softnpg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format_float(x)


def parse_features(spec: str, n_states: int, n_actions: int) -> FeatureMap:
    if spec == "onehot":
        return onehot_features(n_states, n_actions)
    if spec.startswith("random:"):
        try:
            _, d, seed = spec.split(":")
            return random_features(n_states, n_actions, int(d), int(seed))
        except ValueError as exc:
            raise UsageError(f"bad feature spec {spec!r}; expected random:D:SEED") from exc
    if spec.startswith("file:"):
        fm = load_features(spec[5:])
        if (fm.n_states, fm.n_actions) != (n_states, n_actions):
            raise UsageError("feature file does not match the MDP sizes")
        return fm
    raise UsageError(f"unknown feature spec {spec!r}; use onehot, random:D:SEED or file:PATH")


def parse_mu(spec: str, n_states: int) -> np.ndarray:
    if spec == "uniform":
        return uniform_distribution(n_states)
    doc = json.loads(Path(spec).read_text())
    probs = doc["mu"] if isinstance(doc, dict) else doc
    return validate_distribution(probs, n_states)


def parse_eta(spec: str):
    if spec == "auto":
        return "auto"
    try:
        return float(spec)
    except ValueError as exc:
        raise UsageError(f"--eta must be a number or 'auto', got {spec!r}") from exc


def write_trace_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(diag.CSV_COLUMNS)
        for rec in records:
            writer.writerow([fmt(v) for v in rec.csv_row().values()])


def execute(mdp, features: FeatureMap, config: RunConfig, grad_tol: float = 1e-9):
    """Run one configuration and build its summary document."""
    mu = config.mu
    ref = resolve_reference(mdp, features, config.lam, mu, grad_tol)
    trace = run(mdp, features, config, reference=ref)
    summary = diag.summarize(trace.records, trace.eta, config.lam, mdp.gamma, mdp.n_actions)
    negative = [r.t for r in trace.records if r.drift_slack < -1e-9]
    doc = {
        "fitted_rate": summary.fitted_rate,
        "c_star": summary.c_star,
        "eps_approx": summary.eps_approx,
        "eta": trace.eta,
        "sigma_proxy": trace.sigma_proxy,
        "p_floor": summary.p_floor,
        "sigma_floor": summary.sigma_floor,
        "theorem_margin_min": summary.theorem_bound_margin,
        "final_phi": summary.final_phi,
        "lambda": config.lam,
        "horizon": config.horizon,
        "d": features.dim,
        "features": config.feature_kind,
        "mdp": config.mdp_source,
        "step_size_branch": trace.step_rule["branch"],
        "step_size_rule": trace.step_rule["formula"],
        "contraction_rate_bound": math.log1p(-trace.eta * config.lam) if trace.eta * config.lam < 1 else None,
        "reference": {"kind": ref.kind, "grad_tol": ref.grad_tol, "grad_norm": ref.grad_norm,
                      "converged": ref.converged},
        "p_floor_dstar_support": float(min(r.min_prob_dstar for r in trace.records)),
        "drift_violations": negative,
    }
    return trace, doc


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(type(x))


def dumps_summary(doc: dict) -> str:
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return str(v)
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        return v
    return json.dumps(clean(doc), indent=2, sort_keys=True, default=_json_default) + "\n"


def summary_path(out: Path) -> Path:
    return out.with_name(out.stem + ".summary.json")


# -- commands -----------------------------------------------------------------

def cmd_gen(args) -> int:
    if args.chain:
        mdp = chain_mdp(args.states, gamma=args.gamma)
    else:
        mdp = random_mdp(args.states, args.actions, args.seed, (args.rmin, args.rmax), gamma=args.gamma)
    save_mdp(mdp, args.out)
    print(f"wrote {mdp.n_states}x{mdp.n_actions} MDP to {args.out}")
    return EXIT_OK


def _load_run_inputs(args):
    mdp = load_mdp(args.mdp)
    features = parse_features(args.features, mdp.n_states, mdp.n_actions)
    mu = parse_mu(args.mu, mdp.n_states)
    return mdp, features, mu


def cmd_run(args) -> int:
    mdp, features, mu = _load_run_inputs(args)
    config = RunConfig(lam=args.lam, eta=parse_eta(args.eta), horizon=args.horizon, mu=mu,
                       feature_kind=args.features, mdp_source=str(args.mdp), sigma=args.sigma)
    trace, doc = execute(mdp, features, config, args.grad_tol)
    out = Path(args.out)
    write_trace_csv(trace.records, out)
    summary_path(out).write_text(dumps_summary(doc))
    print(f"wrote {len(trace)} rows to {out}; eta={trace.eta:.6g} fitted_rate={doc['fitted_rate']:.6g}")
    if doc["drift_violations"]:
        print(f"warning: drift inequality violated at {len(doc['drift_violations'])} iterations",
              file=sys.stderr)
    return EXIT_OK


def cmd_check(args) -> int:
    if args.instances < 1:
        raise UsageError("--instances must be >= 1")
    report = checks.check_suite(args.instances, args.seed)
    for line in report.lines():
        print(line)
    ok = report.passed
    print("all checks passed" if ok else "CHECK SUITE FAILED")
    return EXIT_OK if ok else EXIT_CHECK


def _sweep_cell(cell):
    mdp_path, lam, d, eta, base = cell
    row = {"lambda": lam, "d": d, "eta": math.nan, "error": ""}
    try:
        mdp = load_mdp(mdp_path)
        mu = parse_mu(base["mu"], mdp.n_states)
        if d is None:
            spec = base["features"]
        else:
            spec = f"random:{d}:{base['feature_seed']}"
        features = parse_features(spec, mdp.n_states, mdp.n_actions)
        row["d"] = features.dim
        config = RunConfig(lam=lam, eta=eta, horizon=base["horizon"], mu=mu, feature_kind=spec,
                           mdp_source=str(mdp_path), sigma=base["sigma"])
        _, doc = execute(mdp, features, config, base["grad_tol"])
        row.update({k: doc[k] for k in SWEEP_COLUMNS if k in doc and k not in ("lambda", "d")})
    except (NumericalAbort, ValueError, UsageError, np.linalg.LinAlgError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _parse_list(text: str, conv):
    try:
        items = [conv(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad list {text!r}") from exc
    if not items:
        raise UsageError("grid lists must be nonempty")
    return items


def cmd_sweep(args) -> int:
    lambdas = _parse_list(args.lambdas, float)
    dims = _parse_list(args.dims, int) if args.dims else [None]
    etas = _parse_list(args.etas, parse_eta) if args.etas else [parse_eta(args.eta)]
    load_mdp(args.mdp)  # fail fast on a bad file
    base = {"mu": args.mu, "features": args.features, "feature_seed": args.feature_seed,
            "horizon": args.horizon, "sigma": args.sigma, "grad_tol": args.grad_tol}
    cells = [(args.mdp, lam, d, eta, base) for lam in lambdas for d in dims for eta in etas]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    keys = [(lam, -1 if d is None else d, -math.inf if eta == "auto" else eta)
            for _, lam, d, eta, _ in cells]
    rows = [row for _, row in sorted(zip(keys, rows), key=lambda kr: kr[0])]
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for r in rows:
            writer.writerow([fmt(r.get(k, math.nan)) for k in SWEEP_COLUMNS])
    failed = sum(1 for r in rows if r["error"])
    print(f"wrote {len(rows)} sweep rows to {args.out} ({failed} failed)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="softnpg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a random or chain MDP file")
    g.add_argument("--states", type=int, required=True)
    g.add_argument("--actions", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--gamma", type=float, default=0.9)
    g.add_argument("--rmin", type=float, default=0.1)
    g.add_argument("--rmax", type=float, default=1.0)
    g.add_argument("--chain", action="store_true", help="deterministic cycle (2 actions)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    def run_flags(q):
        q.add_argument("--mdp", required=True)
        q.add_argument("--eta", default="auto", help="number or 'auto'")
        q.add_argument("--horizon", type=int, default=100)
        q.add_argument("--features", default="onehot", help="onehot | random:D:SEED | file:PATH")
        q.add_argument("--mu", default="uniform", help="uniform | PATH to JSON list")
        q.add_argument("--sigma", type=float, default=None, help="override the step-size sigma proxy")
        q.add_argument("--grad-tol", type=float, default=1e-9,
                       help="stopping tolerance of the in-class reference optimum")
        q.add_argument("--out", required=True)

    r = sub.add_parser("run", help="run NPG and write the trace CSV and summary")
    run_flags(r)
    r.add_argument("--lambda", dest="lam", type=float, required=True)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("check", help="run the invariant battery on random instances")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--instances", type=int, default=5)
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("sweep", help="run a grid of configurations")
    run_flags(s)
    s.add_argument("--lambdas", required=True, help="comma-separated")
    s.add_argument("--dims", default=None, help="comma-separated random-feature dimensions")
    s.add_argument("--etas", default=None, help="comma-separated step sizes or 'auto' (default: --eta)")
    s.add_argument("--feature-seed", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalAbort as exc:
        print(f"numerical abort at {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, MdpError, ValueError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
