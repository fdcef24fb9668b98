"""Command-line front end: ``entrobound {abstract,bounds,synthesize,simulate}``.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 guard violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .abstraction import IntervalAbstraction, content_hash
from .bounds import GuardError, SolverOptions, compute_bounds, sweep_csv
from .config import ConfigError, build_model, load
from .credal import InfeasibleRowError
from .geometry import GeometryError, build_uniform_grid
from .kernels import ModelError, QuadratureError
from .montecarlo import DensityMismatchError, mc_kl_to_uniform, mc_objective, simulate, trajectories_csv
from .pipeline import prepare
from .synthesis import Policy, evaluate_policy, synthesize, unregularized_policy

log = logging.getLogger("entrobound")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_GUARD = 0, 2, 3, 4


def _finite(obj):
    # JSON has no inf/nan; spell them as strings so files stay standard
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.generic):
        return _finite(obj.item())
    return obj


def write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_finite(obj), indent=2) + "\n")
    log.info("wrote %s", path)
    return path


def _opts(cfg) -> SolverOptions:
    s = cfg["solver"]
    return SolverOptions(s["fw_tol"], s["fw_max_iter"], s["vertex_budget"], s["starts"], s["workers"])


def _cache_key(cfg, counts) -> str:
    s = cfg["solver"]
    keyed = {"model": cfg["model"], "counts": list(counts),
             "solver": {k: s[k] for k in ("quad_tol", "mesh", "cost_mesh", "sound", "safety", "sup_mesh")}}
    return content_hash(keyed).split(":")[1][:16]


def _setup(cfg, model, counts, cache: Path | None, abstraction_file: str | None = None):
    s = cfg["solver"]
    cached = None
    if abstraction_file:
        cached = IntervalAbstraction.load(abstraction_file)
        log.info("loaded abstraction %s", abstraction_file)
    elif cache is not None:
        path = cache / f"abstraction-{_cache_key(cfg, counts)}.json"
        if path.exists():
            cached = IntervalAbstraction.load(path)
            log.info("cache hit %s: integration skipped (original build %.2f s)", path.name,
                     cached.metadata.get("build_s", float("nan")))
    setup = prepare(model, counts, s["mesh"], s["sound"], s["log_base"], s["safety"], s["sup_mesh"], cached)
    if cached is None:
        setup.abstraction.metadata["build_s"] = setup.build_s
        log.info("built abstraction with %d cells in %.2f s", setup.partition.cell_count, setup.build_s)
        if cache is not None:
            cache.mkdir(parents=True, exist_ok=True)
            setup.abstraction.save(cache / f"abstraction-{_cache_key(cfg, counts)}.json")
    return setup


def _header(cfg, *extra) -> dict:
    return {"version": __version__, "config": cfg, "input_hash": content_hash([cfg, *extra])}


def _out_dir(cfg, args) -> Path:
    return Path(args.out) if args.out else Path(cfg["output"]["dir"])


def _parse_sweep(text: str):
    m = re.fullmatch(r"\s*(\d+)\s*\.\.\s*(\d+)\s*", text)
    if not m or int(m.group(1)) < 1 or int(m.group(1)) > int(m.group(2)):
        raise ConfigError("--sweep", f"expected A..B with 1 <= A <= B, got {text!r}")
    return list(range(int(m.group(1)), int(m.group(2)) + 1))


# ---------------------------------------------------------------------------

def cmd_abstract(cfg, args) -> Path:
    model = build_model(cfg)
    s = _setup(cfg, model, cfg["partition"]["counts"], _cache(args))
    abs_ = s.abstraction
    abs_.metadata.update(_header(cfg))
    abs_.metadata["sup_bounds"] = {"L_q": s.sup.L_q, "L_grad": s.sup.L_grad, "source": s.sup.source}
    out = Path(args.out) if args.out else Path(cfg["output"]["dir"]) / "abstraction.json"
    if out.suffix != ".json":
        out = out / "abstraction.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    abs_.save(out)
    log.info("wrote %s (%d x %d x %d intervals)", out, abs_.n_actions, abs_.n_states, abs_.n_states)
    return out


def _action(cfg, args, model):
    a = args.action if args.action is not None else cfg["model"]["action"]
    if model.has_actions and a is None:
        raise GuardError("the model has several actions; pin one with --action or model.action")
    if a is not None and not 0 <= a < model.n_actions:
        raise GuardError(f"action index {a} outside 0..{model.n_actions - 1}")
    return a


def cmd_bounds(cfg, args) -> Path:
    model = build_model(cfg)
    action = _action(cfg, args, model)
    resolutions = _parse_sweep(args.sweep) if args.sweep else [None]
    if args.sweep and args.abstraction:
        raise GuardError("--sweep builds one abstraction per resolution; drop --abstraction")
    reports = []
    for N in resolutions:
        counts = cfg["partition"]["counts"] if N is None else [N] * model.dim
        t0 = time.perf_counter()
        s = _setup(cfg, model, counts, _cache(args), args.abstraction)
        rep = compute_bounds(s.abstraction, model.horizon, s.geom, s.gradient, _opts(cfg), action)
        rep.constants["L_q"] = s.sup.L_q
        rep.constants["constants_source"] = s.sup.source
        rep.runtime_s = time.perf_counter() - t0
        log.info("N=%s lower=%.6g upper_global=%.6g upper_local=%.6g (%.1f s)", rep.N, rep.lower,
                 rep.upper_global, rep.upper_local, rep.runtime_s)
        reports.append(rep)
    out = _out_dir(cfg, args)
    body = _header(cfg, args.sweep, action)
    if args.sweep:
        body["reports"] = [r.to_dict() for r in reports]
        if cfg["output"]["csv"]:
            out.mkdir(parents=True, exist_ok=True)
            (out / "sweep.csv").write_text(sweep_csv(reports))
            log.info("wrote %s", out / "sweep.csv")
    else:
        body.update(reports[0].to_dict())
    return write_json(out / "bounds.json", body)


def cmd_synthesize(cfg, args) -> Path:
    model = build_model(cfg)
    if not model.has_costs:
        raise GuardError(f"model {model.name!r} has no stage cost; synthesis needs an MDP with costs")
    s = _setup(cfg, model, cfg["partition"]["counts"], _cache(args), args.abstraction)
    sigma = cfg["model"]["sigma"]
    opts = _opts(cfg)
    K = model.horizon
    rep = synthesize(s.abstraction, K, s.geom, s.gradient, sigma, opts)
    dp = unregularized_policy(s.abstraction, K)
    t0 = time.perf_counter()
    dp_bounds = evaluate_policy(s.abstraction, K, s.geom, s.gradient, dp, sigma, opts)
    out = _out_dir(cfg, args)
    policies = {"global": rep.policy_global, "local": rep.policy_local, "dp": dp}
    for name, pol in policies.items():
        write_json(out / f"policy_{name}.json", pol.to_dict())
    body = _header(cfg)
    body.update(rep.to_dict())
    body["policy_dp"] = dp.to_dict()
    body["dp_bounds"] = dp_bounds.to_dict()
    body["dp_runtime_s"] = time.perf_counter() - t0
    body["identical_policies"] = rep.policy_global == rep.policy_local == dp
    log.info("mode: %s", rep.mode)
    log.info("global %.6g <= J <= %.6g ; local %.6g <= J <= %.6g", rep.lower_global, rep.upper_global,
             rep.lower_local, rep.upper_local)
    return write_json(out / "synthesis.json", body)


def _policy_bounds(report: dict, policy: Policy):
    """Sandwich ``(lower, upper)`` for ``policy`` from a bounds or synthesis report, or ``None``."""
    if "lower" in report:
        return report["lower"], min(float(report["upper_global"]), float(report["upper_local"]))
    for name in ("global", "local", "dp"):
        entry = report.get(f"policy_{name}")
        if entry is None or Policy.from_dict(entry) != policy:
            continue
        if name != "dp":
            return report[f"lower_{name}"], report[f"upper_{name}"]
        b = report["dp_bounds"]
        return (max(float(b["lower_global"]), float(b["lower_local"])),
                min(float(b["upper_global"]), float(b["upper_local"])))
    return None


def cmd_simulate(cfg, args) -> Path:
    model = build_model(cfg)
    seed = cfg["solver"]["seed"] if args.seed is None else args.seed
    M = cfg["solver"]["M"] if args.samples is None else args.samples
    if M < 1:
        raise GuardError("--samples must be at least 1")
    counts = cfg["partition"]["counts"]
    partition = build_uniform_grid(model.box, counts)
    policy = Policy.load(args.policy) if args.policy else None
    if model.has_actions and policy is None:
        raise GuardError("a model with actions needs --policy")
    if policy is not None and (policy.n_states != partition.cell_count or policy.horizon < model.horizon):
        raise GuardError(f"policy table {policy.actions.shape} does not match the partition "
                         f"({model.horizon} x {partition.cell_count})")
    log_base = cfg["solver"]["log_base"]
    body = _header(cfg, None if policy is None else policy.to_dict(), seed, M)
    if model.has_costs and policy is not None:
        sigma = cfg["model"]["sigma"]
        est = mc_objective(model, policy, partition, M, seed, sigma, log_base)
        body["estimates"] = {k: v.to_dict() for k, v in est.items()}
        target = est["objective"]
    else:
        target = mc_kl_to_uniform(model, policy, partition, M, seed, log_base)
        body["estimates"] = {"kl": target.to_dict()}
    if args.report:
        sandwich = _policy_bounds(json.loads(Path(args.report).read_text()), policy)
        if sandwich is None:
            log.warning("report %s has no bounds for this policy; bracket check skipped", args.report)
        else:
            lo, hi = (float(v) for v in sandwich)
            body["bracket"] = {"lower": lo, "upper": hi, "k_se": 3.0, "ok": target.brackets(lo, hi)}
            log.info("bracket [%.6g, %.6g] %s estimate %.6g", lo, hi,
                     "contains" if body["bracket"]["ok"] else "MISSES", target.mean)
    out = _out_dir(cfg, args)
    n_traj = cfg["output"]["trajectories"]
    if n_traj and cfg["output"]["csv"]:
        traj = simulate(model, policy, partition if policy is not None else None, min(n_traj, M), seed)
        out.mkdir(parents=True, exist_ok=True)
        legend = None if policy is None else policy.legend
        (out / "trajectories.csv").write_text(trajectories_csv(traj, legend))
    return write_json(out / "simulate.json", body)


# ---------------------------------------------------------------------------

def _cache(args):
    return Path(args.cache) if getattr(args, "cache", None) else None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration (JSON)")
    common.add_argument("--out", help="output directory (file path for `abstract`)")
    common.add_argument("--seed", type=int, help="override solver.seed")
    common.add_argument("--samples", type=int, help="override solver.M")
    common.add_argument("--cache", help="directory for reusable abstraction files")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="entrobound", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("abstract", parents=[common], help="build and save the interval abstraction")
    b = sub.add_parser("bounds", parents=[common], help="certified KL-to-uniform bounds")
    b.add_argument("--sweep", metavar="A..B", help="repeat over N = A..B cells per dimension")
    b.add_argument("--abstraction", help="use a saved abstraction instead of building one")
    b.add_argument("--action", type=int, help="action index for models with actions")
    s = sub.add_parser("synthesize", parents=[common], help="regularized robust policies with bounds")
    s.add_argument("--abstraction", help="use a saved abstraction instead of building one")
    m = sub.add_parser("simulate", parents=[common], help="Monte Carlo estimates for a policy")
    m.add_argument("--policy", help="policy JSON written by `synthesize`")
    m.add_argument("--report", help="bounds or synthesis report for the bracket check")
    return p


COMMANDS = {"abstract": cmd_abstract, "bounds": cmd_bounds, "synthesize": cmd_synthesize,
            "simulate": cmd_simulate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load(args.config)
        if args.seed is not None:
            cfg["solver"]["seed"] = args.seed
        if args.samples is not None:
            cfg["solver"]["M"] = args.samples
        path = COMMANDS[args.command](cfg, args)
    except (InfeasibleRowError, QuadratureError, DensityMismatchError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except GuardError as exc:
        print(f"guard violation: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (ConfigError, ModelError, GeometryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
