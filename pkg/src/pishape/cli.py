"""Command-line front end: ``pishape {nominal,tune,verify} --config FILE --out DIR``.

Artifacts go to ``nominal/``, ``shaping/``, ``tuning/`` and ``verify/``
below the output root.  Each stage writes a ``summary.toml`` holding its
results and the fully resolved configuration.  ``M`` and ``theta`` are
persisted, so ``verify`` can reuse an earlier ``tune`` run.

Exit codes: 0 on success, 2 for configuration or usage errors, 1 for any
other failure (solver, divergence, missing artifact).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, builtin_configs, load_config
from .domain import Box
from .dynamics import CartPole, linearize, third_order_lti
from .errors import DivergenceError, InvalidArgumentError, NonNegativityWarning, SolverError
from .nominal import (ControlWeight, PolynomialValue, QuadraticValue, StateCost,
                      fit_nominal_policy_iteration, optimal_control, solve_care)
from .objective import OvershootPenalty
from .polybasis import enumerate_even_monomials
from .shaping import (ShapingProblem, ShapingSolution, check_nonnegativity, shaped_controller,
                      solve_shaping)
from .simulate import rollout
from .tuning import BoxSampler, TuningConfig, gradient_descent
from .verify import gain_scaling_check, iss_check, lyapunov_decrease_check, sinusoid_pulse

log = logging.getLogger("pishape")

__all__ = ["build_pipeline", "main", "write_summary"]


# -- summary files ----------------------------------------------------------------

_BARE = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-")


def _key(k) -> str:
    k = str(k)
    return k if k and set(k) <= _BARE else json.dumps(k)


def _val(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, (complex, np.complexfloating)):
        return _val([v.real, v.imag])
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, np.ndarray):
        return _val(v.tolist())
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_val(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _flatten(d: dict, prefix=()):
    for k, v in d.items():
        if v is None:
            continue
        if isinstance(v, dict):
            yield from _flatten(v, prefix + (k,))
        else:
            yield ".".join(_key(p) for p in prefix + (k,)), v


def write_summary(path, sections: dict):
    """Write nested dicts as TOML: one table per top-level key, dotted keys below.

    ``None`` values are skipped, since TOML has no null.
    """
    lines = []
    for name, body in sections.items():
        lines.append(f"[{_key(name)}]")
        lines.extend(f"{k} = {_val(v)}" for k, v in _flatten(body))
        lines.append("")
    Path(path).write_text("\n".join(lines))


def _savetxt(path, a):
    np.savetxt(path, np.atleast_1d(np.asarray(a, dtype=float)), fmt="%.17g")


def _digest(cfg: RunConfig, *tables) -> str:
    blob = json.dumps({t: cfg[t] for t in tables}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


NOMINAL_TABLES = ("system", "cost", "nominal", "basis", "domain")
SHAPING_TABLES = NOMINAL_TABLES + ("shaping",)


# -- building blocks --------------------------------------------------------------

def build_system(cfg: RunConfig):
    name, params = cfg["system"]["name"], cfg["system"]["params"]
    if name == "lti3":
        return third_order_lti(**params)
    return CartPole(**params)


def build_pipeline(cfg: RunConfig):
    """``(system, cost, weight, domain, value_basis, m_basis, h_basis)`` for a config."""
    system = build_system(cfg)
    cost = StateCost(np.asarray(cfg["cost"]["Q"]))
    weight = ControlWeight(np.asarray(cfg["cost"]["R"]))
    domain = Box(cfg["domain"]["lo"], cfg["domain"]["hi"])
    b = cfg["basis"]
    scale = domain.half_widths if b["scale"] == "domain" else None
    vb = enumerate_even_monomials(system.n, b["value_degree"])
    mb = enumerate_even_monomials(system.n, b["m_degree"], scale)
    hb = enumerate_even_monomials(system.n, b["h_degree"], scale)
    return system, cost, weight, domain, vb, mb, hb


def _trajectory_stats(traj, component):
    xc = traj.states[:, component]
    return {"peak": float(xc.max()), "peak_abs": float(np.abs(xc).max()),
            "terminal_norm": float(np.linalg.norm(traj.states[-1]))}


# -- stages -----------------------------------------------------------------------

def stage_nominal(cfg: RunConfig, out: Path):
    """Solve the nominal problem; write ``nominal/``.  Returns ``phi0``."""
    system, cost, weight, domain, vb, _, _ = build_pipeline(cfg)
    nom = cfg["nominal"]
    d = out / "nominal"
    d.mkdir(parents=True, exist_ok=True)
    lin = linearize(system, cost.Q)
    info = {"controllability_rank": lin.controllability_rank,
            "observability_rank": lin.observability_rank}
    if nom["method"] == "care":
        phi0 = solve_care(lin.A, lin.B, cost, weight, tol=nom["tol"], method=nom["care_method"])
        _savetxt(d / "value.txt", phi0.P)
        info.update(kind="quadratic", P=phi0.P, care_residual=phi0.info["care_residual"],
                    gain=phi0.info["gain"], closed_loop_eigs=phi0.info["closed_loop_eigs"])
    else:
        phi0 = fit_nominal_policy_iteration(system, cost, weight, vb, domain, K=nom["K"],
                                            tol=nom["tol"], max_iter=nom["max_iter"])
        _savetxt(d / "value.txt", phi0.coeffs)
        pi = phi0.info
        info.update(kind="polynomial", basis=vb.descriptor(), coeffs=phi0.coeffs,
                    iterations=pi["iterations"], converged=pi["converged"],
                    validation_max_hjb_residual=pi["max_residual"],
                    residual_history=pi["residual_history"], min_value=pi["min_value"])
    traj = rollout(system, optimal_control(phi0, system, weight), nom["x0"],
                   nom["horizon"], nom["dt"])
    traj.to_csv(d / "rollout.csv")
    info["rollout"] = _trajectory_stats(traj, cfg["objective"]["component"])
    write_summary(d / "summary.toml", {"nominal": info,
                                       "meta": {"digest": _digest(cfg, *NOMINAL_TABLES)},
                                       "config": cfg.resolved})
    log.info("nominal: %s solved, rollout terminal norm %.3e", info["kind"],
             info["rollout"]["terminal_norm"])
    return phi0


def stage_shaping(cfg: RunConfig, phi0, out: Path) -> ShapingSolution:
    system, cost, weight, domain, _, mb, hb = build_pipeline(cfg)
    sh = cfg["shaping"]
    problem = ShapingProblem(system, weight, phi0, mb, hb, domain, K=sh["K"], cost=cost)
    sol = solve_shaping(problem, ridge=sh["ridge"])
    d = out / "shaping"
    d.mkdir(parents=True, exist_ok=True)
    _savetxt(d / "M.txt", sol.M)
    write_summary(d / "summary.toml", {
        "shaping": dict(sol.summary(), residual_rms_columns=sol.residual_rms_columns),
        "meta": {"digest": _digest(cfg, *SHAPING_TABLES)}, "config": cfg.resolved})
    log.info("shaping: N=%d q=%d residual_rms=%.3e", sol.M.shape[0], sol.M.shape[1],
             sol.residual_rms)
    return sol


def _load_if_current(cfg: RunConfig, out: Path, stage: str, tables) -> Path | None:
    from .config import tomllib
    d = out / stage
    try:
        with open(d / "summary.toml", "rb") as fh:
            meta = tomllib.load(fh).get("meta", {})
    except (FileNotFoundError, tomllib.TOMLDecodeError):
        return None
    return d if meta.get("digest") == _digest(cfg, *tables) else None


def load_or_solve(cfg: RunConfig, out: Path) -> ShapingSolution:
    """Reuse persisted ``phi0`` and ``M`` under ``out`` when they match ``cfg``, else solve."""
    system, cost, weight, domain, vb, mb, hb = build_pipeline(cfg)
    d = _load_if_current(cfg, out, "nominal", NOMINAL_TABLES)
    if d is None:
        phi0 = stage_nominal(cfg, out)
    elif cfg["nominal"]["method"] == "care":
        phi0 = QuadraticValue(np.atleast_2d(np.loadtxt(d / "value.txt")))
    else:
        phi0 = PolynomialValue(vb, np.atleast_1d(np.loadtxt(d / "value.txt")))
    d = _load_if_current(cfg, out, "shaping", SHAPING_TABLES)
    if d is None:
        return stage_shaping(cfg, phi0, out)
    problem = ShapingProblem(system, weight, phi0, mb, hb, domain, K=cfg["shaping"]["K"],
                             cost=cost)
    M = np.loadtxt(d / "M.txt", ndmin=2).reshape(len(hb), len(mb))
    log.info("reusing persisted nominal value and shaping map from %s", out)
    return ShapingSolution(problem, M, float("nan"), np.full(len(mb), np.nan))


def _tuning_ics(cfg: RunConfig):
    tun = cfg["tuning"]
    if tun["initial_conditions"] is not None:
        return np.asarray(tun["initial_conditions"], dtype=float)
    box = Box(tun["sample_lo"], tun["sample_hi"])
    return BoxSampler(box, tun["sample_count"], cfg.seed).sample()


def _write_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "L", "grad_norm", "step"])
        for r in history:
            w.writerow([r["iter"], format(r["L"], ".17g"), format(r["grad_norm"], ".17g"),
                        format(r["step"], ".17g")])


def stage_tuning(cfg: RunConfig, sol: ShapingSolution, out: Path) -> np.ndarray:
    tun, obj = cfg["tuning"], cfg["objective"]
    penalty = OvershootPenalty(obj["component"], obj["threshold"], obj["beta"], tun["dt"])
    ics = _tuning_ics(cfg)
    tc = TuningConfig(ics, tun["horizon"], tun["dt"], gamma=tun["gamma"],
                      max_iter=tun["max_iter"], grad_tol=tun["grad_tol"], step=tun["step"],
                      mode=tun["mode"], check_points=tun["check_points"],
                      terminal_tol=tun["terminal_tol"], step_tol=tun["step_tol"])
    result = gradient_descent(sol, penalty, tc)
    theta = result.theta
    d = out / "tuning"
    d.mkdir(parents=True, exist_ok=True)
    _write_history(d / "history.csv", result.history)
    _savetxt(d / "theta.txt", theta)
    _savetxt(d / "c.txt", sol.coefficients(theta))
    np.savetxt(d / "initial_conditions.csv", ics, fmt="%.17g", delimiter=",", comments="",
               header=",".join(f"x{i + 1}" for i in range(ics.shape[1])))

    system = sol.system
    x0, horizon = tun["test_x0"], tun["test_horizon"]
    comparison = {}
    for label, th in (("nominal", np.zeros_like(theta)), ("shaped", theta)):
        traj = rollout(system, shaped_controller(sol, th), x0, horizon, tun["dt"])
        traj.to_csv(d / f"rollout_{label}.csv")
        comparison[label] = _trajectory_stats(traj, obj["component"])
    mmin, hmin = check_nonnegativity(sol, theta, count=tun["check_points"], warn=False)
    gap = comparison["shaped"]["peak_abs"] - obj["threshold"]
    if gap > 0:
        log.info("tuned peak |x_%d| = %.4f is %.4f above the threshold %.4f",
                 obj["component"], comparison["shaped"]["peak_abs"], gap, obj["threshold"])
    reports = {}
    for label, th in (("nominal", np.zeros_like(theta)), ("shaped", theta)):
        reports[label] = lyapunov_decrease_check(
            sol, th, x0, horizon, tun["dt"], increase_tol=cfg["verify"]["increase_tol"],
            terminal_tol=cfg["verify"]["terminal_tol"]).to_dict()
    write_summary(d / "summary.toml", {
        "tuning": {"stop_reason": result.stop_reason, "iterations": len(result.history) - 1,
                   "L_initial": result.history[0]["L"], "L_final": result.history[-1]["L"],
                   "theta": theta, "c": sol.coefficients(theta),
                   "min_mbar": mmin, "min_h": hmin, "threshold_gap": gap},
        "comparison": comparison, "stability": reports, "config": cfg.resolved})
    log.info("tuning: L %.6g -> %.6g in %d iterations (%s)", result.history[0]["L"],
             result.history[-1]["L"], len(result.history) - 1, result.stop_reason)
    return theta


def stage_verify(cfg: RunConfig, sol: ShapingSolution, theta, out: Path) -> list:
    ver, tun = cfg["verify"], cfg["tuning"]
    x0, dt = tun["test_x0"], ver["dt"]
    d = out / "verify"
    d.mkdir(parents=True, exist_ok=True)
    reports = {"lyapunov": lyapunov_decrease_check(
        sol, theta, x0, ver["lyapunov_horizon"], dt, increase_tol=ver["increase_tol"],
        terminal_tol=ver["terminal_tol"])}
    for eps in ver["epsilons"]:
        reports[f"gain_eps_{eps:g}"] = gain_scaling_check(
            sol, theta, eps, x0, ver["gain_horizon"], dt, increase_tol=ver["increase_tol"],
            terminal_tol=ver["gain_terminal_tol"])
    dist = sinusoid_pulse(ver["disturbance_amplitude"], ver["disturbance_omega"],
                          ver["disturbance_off"], sol.system.p)
    reports["iss"] = iss_check(sol, theta, dist, x0, ver["iss_horizon"], dt,
                               t_off=ver["disturbance_off"], sup_bound=ver["sup_bound"],
                               terminal_tol=ver["terminal_tol"],
                               increase_tol=ver["increase_tol"])
    for name, rep in reports.items():
        write_summary(d / f"{name}.toml", {"report": rep.to_dict(), "theta": {"value": theta}})
        if rep.trajectory is not None:
            rep.trajectory.to_csv(d / f"{name}.csv")
        log.info("verify %s: %s", name, "pass" if rep.passed else "FAIL")
    write_summary(d / "summary.toml", {
        "verdicts": {k: r.passed for k, r in reports.items()},
        "theta": {"value": theta}, "config": cfg.resolved})
    return list(reports.values())


# -- commands ---------------------------------------------------------------------

def cmd_nominal(cfg: RunConfig, out: Path, args) -> int:
    stage_nominal(cfg, out)
    return 0


def cmd_tune(cfg: RunConfig, out: Path, args) -> int:
    phi0 = stage_nominal(cfg, out)
    sol = stage_shaping(cfg, phi0, out)
    stage_tuning(cfg, sol, out)
    return 0


def cmd_verify(cfg: RunConfig, out: Path, args) -> int:
    theta_path = Path(args.theta) if args.theta else out / "tuning" / "theta.txt"
    if not theta_path.exists():
        raise FileNotFoundError(f"theta artifact not found: {theta_path} (run 'tune' first)")
    theta = np.atleast_1d(np.loadtxt(theta_path))
    sol = load_or_solve(cfg, out)
    reports = stage_verify(cfg, sol, theta, out)
    if args.strict and not all(r.passed for r in reports):
        log.error("verify: at least one check failed")
        return 1
    return 0


COMMANDS = {"nominal": cmd_nominal, "tune": cmd_tune, "verify": cmd_verify}


def _parser():
    ap = argparse.ArgumentParser(prog="pishape", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help=f"TOML run file, or a shipped name: {', '.join(builtin_configs())}")
        p.add_argument("--out", required=True, help="output root directory")
        p.add_argument("--seed", type=int, default=None,
                       help="unsigned 64-bit seed; overrides the config value")
        p.add_argument("--quiet", action="store_true", help="only log warnings and errors")
        if name == "verify":
            p.add_argument("--theta", default=None,
                           help="theta file (default OUT/tuning/theta.txt)")
            p.add_argument("--strict", action="store_true",
                           help="exit 1 when any stability check fails")
    return ap


def _fail(code, msg):
    print(f"pishape: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.captureWarnings(True)
    try:
        cfg = load_config(args.config).with_seed(args.seed)
    except FileNotFoundError as exc:
        return _fail(2, f"config file not found: {exc.filename or exc}")
    except ConfigError as exc:
        return _fail(2, f"invalid config: {exc}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            # already reported through the log
            warnings.simplefilter("ignore", NonNegativityWarning)
            return COMMANDS[args.command](cfg, out, args)
    except FileNotFoundError as exc:
        return _fail(1, str(exc))
    except (SolverError, DivergenceError, InvalidArgumentError) as exc:
        return _fail(1, f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
