"""Command-line front end.

Subcommands: analyze, lyapunov, simulate, reverse. Exit codes: 0 on success,
1 on I/O or parse errors, 2 when the network or the requested Lyapunov
function fails validation (the report is still printed).
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .bounds import DEFAULT_BUDGET, DEFAULT_STARTS, compute_bounds
from .lyapunov import (
    build_h,
    build_h_rho_eps,
    drift_region,
    eps_box,
    gamma_membership,
    rho_eps_gamma,
)
from .network import (
    JacksonNetwork,
    NetworkError,
    NetworkFormatError,
    dumps_network,
    load_network,
    loads_network,
    solve_traffic,
    time_reverse,
    validate_network,
)
from .simulation import (
    DEFAULT_BATCHES,
    DEFAULT_SEED,
    SimConfig,
    TargetSet,
    estimate_stationary,
    estimate_tail,
    verify_against_bound,
)

EXIT_OK = 0
EXIT_IO = 1
EXIT_INVALID = 2
SIG_DIGITS = 12
BUNDLED = ("net_a", "net_b", "net_c")


class UsageError(Exception):
    """Bad flag values; reported like a parse error (exit 1)."""


# -- formatting ---------------------------------------------------------------------

def tagged(value, source: str) -> dict[str, Any]:
    if isinstance(value, np.ndarray):
        value = value.tolist()
    return {"value": value, "source": source}


def round_sig(obj):
    """Round every float to SIG_DIGITS significant digits; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {k: round_sig(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_sig(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return round_sig(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return str(x)
        return float(f"{x:.{SIG_DIGITS}g}")
    return obj


def dumps_report(report: dict) -> str:
    return json.dumps(round_sig(report), indent=2, sort_keys=True)


def num(x) -> str:
    x = float(x)
    if x == 0:
        x = 0.0  # drop the sign of -0
    return f"{x:.10g}"


def vec(v) -> str:
    return "[" + ", ".join(num(x) for x in np.ravel(v)) + "]"


def mat(M) -> str:
    return "[" + ", ".join(vec(r) for r in np.asarray(M)) + "]"


# -- argument parsing ---------------------------------------------------------------------

def parse_vector(text: str) -> np.ndarray:
    try:
        out = np.array([float(t) for t in text.split(",") if t.strip() != ""])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from exc
    if out.size == 0:
        raise argparse.ArgumentTypeError("empty vector")
    return out


def parse_state(text: str) -> tuple[int, ...]:
    v = parse_vector(text)
    if np.any(v < 0) or np.any(v != np.round(v)):
        raise argparse.ArgumentTypeError(f"not a state of nonnegative integers: {text!r}")
    return tuple(int(x) for x in v)


def parse_count(text: str) -> int:
    try:
        x = float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc
    if x != int(x) or x < 1:
        raise argparse.ArgumentTypeError(f"not a positive integer: {text!r}")
    return int(x)


def resolve_network(name: str) -> JacksonNetwork:
    path = Path(name)
    if path.exists():
        return load_network(path)
    key = name.lower().replace("-", "_")
    if key in BUNDLED:
        text = resources.files("jackson_lyapunov").joinpath("data").joinpath(f"{key}.json").read_text()
        return loads_network(text)
    raise FileNotFoundError(f"no such network file: {name}")


# -- shared pieces ---------------------------------------------------------------------------

def network_section(net: JacksonNetwork) -> dict[str, Any]:
    return {k: tagged(v, "input") for k, v in net.to_dict().items()}


def validation_section(net: JacksonNetwork):
    report = validate_network(net)
    violations = [
        {"condition": v.condition, "message": v.message, "index": v.index} for v in report.violations
    ]
    ts = None
    if report.ok:
        ts = solve_traffic(net)
        for i in range(net.d):
            if not ts.nu[i] < net.mu[i]:
                violations.append({
                    "condition": "stability",
                    "message": f"nu[{i}] = {num(ts.nu[i])} >= mu[{i}] = {num(net.mu[i])}",
                    "index": i,
                })
    return {"ok": not violations, "violations": violations}, ts


def traffic_section(ts) -> dict[str, Any]:
    return {
        "nu": tagged(ts.nu, "traffic_equations"),
        "G": tagged(ts.G, "traffic_equations"),
        "Q": tagged(ts.Q, "traffic_equations"),
        "routing_spectral_radius": tagged(ts.routing_spectral_radius, "power_iteration"),
        "residual": tagged(ts.residual, "traffic_equations"),
        "stable": ts.stable,
    }


def lyapunov_from_args(args, net, ts):
    """(certificate, h or None, construction dict) for --gamma or --rho/--eps."""
    have_gamma = args.gamma is not None
    have_re = args.rho is not None or args.eps is not None
    if have_gamma == have_re:
        raise UsageError("give exactly one of --gamma or --rho with --eps")
    if have_gamma:
        if args.gamma.size != net.d:
            raise UsageError(f"--gamma needs {net.d} components")
        cert = gamma_membership(ts, args.gamma)
        h = build_h(ts, cert, net) if cert.is_member else None
        return cert, h, {"kind": "direct_gamma"}
    if args.rho is None or args.eps is None:
        raise UsageError("--rho and --eps must be given together")
    if args.rho.size != net.d:
        raise UsageError(f"--rho needs {net.d} components")
    if args.eps.size != 1:
        raise UsageError("--eps is a scalar")
    eps = float(args.eps[0])
    cert = rho_eps_gamma(ts, net, args.rho, eps)
    h = build_h_rho_eps(ts, net, args.rho, eps) if cert.is_member else None
    box = eps_box(ts, net, args.rho)
    return cert, h, {
        "kind": "rho_eps",
        "rho": tagged(args.rho, "input"),
        "eps": tagged(eps, "input"),
        "eps_box": tagged(box, "rho_eps_box"),
        "eps_inside_box": bool(0 < eps < box),
    }


def lyapunov_section(args, net, ts):
    """(report section, h or None, drift region or None)."""
    cert, h, construction = lyapunov_from_args(args, net, ts)
    out: dict[str, Any] = {"construction": construction}
    cd = cert.to_dict()
    out["certificate"] = {
        "gamma": tagged(cd["gamma"], "input" if construction["kind"] == "direct_gamma" else "rho_eps"),
        "verdict": cd["verdict"],
        "slack": tagged(cd["slack"], "membership_lp"),
    }
    if "witnesses" in cd:
        out["certificate"]["witnesses"] = tagged(cd["witnesses"], "membership_lp")
    else:
        out["certificate"]["violating_index"] = cd["violating_index"]
        out["certificate"]["violating_direction"] = tagged(cd["violating_direction"], "membership_lp")
    if h is None:
        return out, None, None
    out["arrows"] = tagged(h.arrows, "gamma_arrows")
    out["theta_h"] = tagged(h.theta_h, "drift_terms")
    region = None
    if args.theta is not None:
        if not 0 < args.theta < h.theta_h:
            out["theta_rejected"] = f"theta = {num(args.theta)} is not in (0, theta_h = {num(h.theta_h)})"
            return out, h, None
        region = drift_region(ts, net, h, args.theta, args.box)
        out["drift_region"] = {
            "theta": tagged(args.theta, "input"),
            "box": args.box,
            "size": len(region),
            "states": tagged(region.states, "drift_region"),
            "c_E": tagged(region.c_E, "drift_region"),
            "boundary_clean": region.boundary_clean,
        }
    if construction["kind"] == "rho_eps":
        probe = np.array([[k % 4 for k in range(j, j + net.d)] for j in range(5)])
        direct = h(probe)
        closed = h.product_form(probe, ts)
        out["product_form_max_rel_error"] = tagged(
            float(np.max(np.abs(direct - closed) / closed)), "product_form"
        )
    return out, h, region


def h_formula(h) -> str:
    terms = []
    for row in np.asarray(h.arrows):
        inner = " + ".join(f"{num(a)}*x[{j}]" for j, a in enumerate(row))
        terms.append(f"exp({inner})")
    return " + ".join(terms)


# -- analyze ---------------------------------------------------------------------------

def cmd_analyze(args) -> tuple[dict, list[str], int]:
    net = resolve_network(args.network)
    validation, ts = validation_section(net)
    report: dict[str, Any] = {
        "command": "analyze",
        "network": network_section(net),
        "validation": validation,
        "traffic": None if ts is None else traffic_section(ts),
        "bounds": None,
        "special_case": None,
    }
    lines = header_lines(net, validation, ts)
    code = EXIT_OK
    if not validation["ok"]:
        code = EXIT_INVALID
    else:
        b = compute_bounds(net, ts, budget=args.budget, starts=args.starts, seed=args.seed)
        report["bounds"] = b.to_dict()
        report["special_case"] = b.exact_tag
        lines.append("bounds on log r_e*:")
        lines.append(f"  lower              = {num(b.lower)}  [lower_bound]")
        lines.append(f"  upper over gamma   = {num(b.upper_gamma)}  [gamma_search]")
        lines.append(f"    at gamma         = {vec(b.upper_gamma_point)}")
        lines.append(f"  upper over rho,eps = {num(b.upper_rho_eps)}  [rho_eps_search]")
        lines.append(f"  exact              = {'n/a' if b.exact is None else num(b.exact)}"
                     + ("" if b.exact is None else f"  [{b.exact_tag}]"))
        lines.append(f"  equality diagnosed = {str(b.equality_diagnosed).lower()}")
        for iv in b.delta_intervals:
            lines.append(f"  Delta[{iv.i}] = [{num(iv.a)}, {num(iv.b)}]")
        lines.append(f"special case: {b.exact_tag or 'none'}")
        if args.gamma is not None or args.rho is not None or args.eps is not None:
            lyap, h, _ = lyapunov_section(args, net, ts)
            report["lyapunov"] = lyap
            lines.extend(lyapunov_lines(lyap, h))
    return report, lines, code


def header_lines(net, validation, ts) -> list[str]:
    lines = [
        f"network: d={net.d}",
        f"  lambda = {vec(net.lam)}",
        f"  mu     = {vec(net.mu)}",
        f"  P      = {mat(net.P)}",
    ]
    if validation["ok"]:
        lines.append("validation: pass")
    else:
        lines.append("validation: FAIL")
        for v in validation["violations"]:
            lines.append(f"  [{v['condition']}] {v['message']}")
    if ts is not None:
        lines.append("traffic:")
        lines.append(f"  nu = {vec(ts.nu)}")
        lines.append(f"  load nu/mu = {vec(ts.nu / net.mu)}")
        lines.append(f"  routing spectral radius = {num(ts.routing_spectral_radius)}")
        lines.append(f"  stable = {str(ts.stable).lower()}")
    return lines


# -- lyapunov -------------------------------------------------------------------------------

def lyapunov_lines(lyap: dict, h) -> list[str]:
    c = lyap["certificate"]
    lines = ["lyapunov function:"]
    con = lyap["construction"]
    if con["kind"] == "rho_eps":
        lines.append(f"  construction: rho = {vec(con['rho']['value'])}, eps = {num(con['eps']['value'])}"
                     f" (eps box (0, {num(con['eps_box']['value'])}),"
                     f" inside = {str(con['eps_inside_box']).lower()})")
    lines.append(f"  gamma = {vec(c['gamma']['value'])}")
    slack = c["slack"]["value"]
    lines.append(f"  membership: {c['verdict']} (slack {'inf' if slack is None else num(slack)})")
    if "violating_direction" in c:
        lines.append(f"  violating index {c['violating_index']},"
                     f" direction v = {vec(c['violating_direction']['value'])}")
        return lines
    lines.append(f"  theta_h = {num(lyap['theta_h']['value'])}")
    if "product_form_max_rel_error" in lyap:
        lines.append(f"  product form check: max rel error {lyap['product_form_max_rel_error']['value']:.2e}")
    if h is not None:
        lines.append(f"  h(x) = {h_formula(h)}")
    if "theta_rejected" in lyap:
        lines.append(f"  rejected: {lyap['theta_rejected']}")
    if "drift_region" in lyap:
        dr = lyap["drift_region"]
        theta = dr["theta"]["value"]
        lines.append(f"  drift region E (theta = {num(theta)}, box [0, {dr['box']}]^d): {dr['size']} states")
        lines.append(f"    E = {mat(dr['states']['value']) if dr['size'] <= 20 else '(' + str(dr['size']) + ' states)'}")
        lines.append(f"    c_E = {num(dr['c_E']['value'])}")
        lines.append(f"    boundary_clean = {str(dr['boundary_clean']).lower()}")
        lines.append(f"  tail bound: P_x(tau_E > t) <= h(x) * exp(-{num(theta)} t) / {num(dr['c_E']['value'])}")
    return lines


def cmd_lyapunov(args) -> tuple[dict, list[str], int]:
    net = resolve_network(args.network)
    validation, ts = validation_section(net)
    report: dict[str, Any] = {"command": "lyapunov", "network": network_section(net), "validation": validation}
    lines = header_lines(net, validation, ts)
    if ts is None:
        return report, lines, EXIT_INVALID
    lyap, h, _ = lyapunov_section(args, net, ts)
    report["lyapunov"] = lyap
    lines.extend(lyapunov_lines(lyap, h))
    code = EXIT_OK
    if lyap["certificate"]["verdict"] != "member" or "theta_rejected" in lyap:
        code = EXIT_INVALID
    return report, lines, code


# -- simulate ---------------------------------------------------------------------------

def cmd_simulate(args) -> tuple[dict, list[str], int]:
    net = resolve_network(args.network)
    validation, ts = validation_section(net)
    report: dict[str, Any] = {"command": "simulate", "network": network_section(net), "validation": validation}
    lines = header_lines(net, validation, ts)
    if not validation["ok"]:
        lines.append("simulation refused: the network is not valid and stable")
        return report, lines, EXIT_INVALID
    if args.mode == "stationary":
        return simulate_stationary(args, net, ts, report, lines)
    return simulate_tail(args, net, ts, report, lines)


def simulate_stationary(args, net, ts, report, lines):
    horizon = 1e5 if args.horizon is None else args.horizon
    reps = args.reps or 1
    config = SimConfig(horizon, args.seed, reps, args.warmup, args.x0)
    est = estimate_stationary(net, ts, config, args.table_box, batches=args.batches, workers=args.workers)
    report["simulation"] = tagged({"config": config.to_dict(), "estimate": est.to_dict()}, "simulation")
    lines.append(f"stationary simulation: seed {args.seed}, horizon {num(horizon)},"
                 f" warmup {num(config.warmup_time)}, replications {reps}")
    lines.append(f"  box [0, {args.table_box}]^{net.d}, 95% half-widths from {args.batches} batches per replication")
    lines.append("  state | estimate | half-width | product form | |deviation|")
    for s, v, hw, ex in zip(est.grid, est.values, est.half_widths, est.extra["exact"]):
        lines.append(f"  {vec(s)} | {v:.6f} | {hw:.6f} | {ex:.6f} | {abs(v - ex):.6f}")
    m = est.extra["marginals"]
    mhw = est.extra["marginal_half_widths"]
    mex = est.extra["marginal_exact"]
    for i in range(net.d):
        lines.append(f"  P(X[{i}] = 0): {m[i, 0]:.6f} +- {mhw[i, 0]:.6f} (product form {mex[i, 0]:.6f})")
    lines.append(f"  max |deviation| on the box = {est.extra['max_abs_deviation']:.6f}"
                 f" at {vec(est.extra['max_deviation_state'])}")
    return report, lines, EXIT_OK


def simulate_tail(args, net, ts, report, lines):
    if args.x0 is None:
        raise UsageError("tail mode needs --x0")
    if args.theta is None:
        raise UsageError("tail mode needs --theta")
    lyap, h, region = lyapunov_section(args, net, ts)
    report["lyapunov"] = lyap
    lines.extend(lyapunov_lines(lyap, h))
    if region is None:
        lines.append("simulation refused: no valid drift region")
        return report, lines, EXIT_INVALID
    reps = args.reps or 10_000
    grid = args.t if args.t is not None else np.array([1.0, 2.0, 5.0, 10.0])
    target = TargetSet.from_region(region)
    if target.contains(args.x0):
        raise UsageError(f"x0 = {vec(args.x0)} lies in E")
    config = SimConfig(float(np.max(grid)), args.seed, reps, 0.0, args.x0)
    est = estimate_tail(net, config, target, args.x0, grid, workers=args.workers)
    check = verify_against_bound(est, region)
    report["simulation"] = tagged(
        {"config": config.to_dict(), "estimate": est.to_dict(), "bound_check": check.to_dict()}, "simulation")
    lines.append(f"tail simulation: seed {args.seed}, replications {reps}, x0 = {vec(args.x0)}")
    lines.append(f"  h(x0) = {num(h(np.asarray(args.x0)))}")
    lines.append("  t | P(tau_E > t) | lower edge | bound | margin")
    for t, p, lo, b, mg in zip(check.grid, check.estimate, check.lower, check.bound, check.margins):
        lines.append(f"  {num(t)} | {p:.6f} | {lo:.6f} | {num(b)} | {num(mg)}")
    if not est.extra["monotone"]:
        lines.append("  note: raw survival estimates are not monotone in t")
    if not check.boundary_clean:
        lines.append("  note: E touches the edge of the box; c_E is only certified on the box")
    lines.append(f"  one-sided bound check: {'PASS' if check.passed else 'FAIL'}")
    return report, lines, EXIT_OK if check.passed else EXIT_INVALID


# -- reverse ---------------------------------------------------------------------------------

def cmd_reverse(args) -> tuple[dict, list[str], int]:
    net = resolve_network(args.network)
    validation, ts = validation_section(net)
    if not validation["ok"]:
        lines = header_lines(net, validation, ts)
        lines.append("time reversal refused: the network is not valid and stable")
        return {"command": "reverse", "network": network_section(net), "validation": validation}, lines, EXIT_INVALID
    rev = time_reverse(net, ts)
    return {"command": "reverse", "network": rev.to_dict()}, [dumps_network(rev)], EXIT_OK


# -- entry point -----------------------------------------------------------------------------

def add_lyapunov_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gamma", type=parse_vector, help="gamma vector, comma separated")
    p.add_argument("--rho", type=parse_vector, help="rho vector for the rho/eps construction")
    p.add_argument("--eps", type=parse_vector, help="eps for the rho/eps construction")
    p.add_argument("--theta", type=float, help="drift level theta in (0, theta_h)")
    p.add_argument("--box", type=int, default=40,
                   help="box cap used to enumerate the drift region (default 40)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jackson-lyapunov",
        description="Stability, Lyapunov functions and spectral bounds for Jackson networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("network", help=f"network JSON file, or one of {', '.join(BUNDLED)}")
        p.add_argument("--out", help="write the JSON report to this path")

    p = sub.add_parser("analyze", help="validate, solve traffic, bound log r_e*")
    common(p)
    p.add_argument("--budget", type=parse_count, default=DEFAULT_BUDGET)
    p.add_argument("--starts", type=parse_count, default=DEFAULT_STARTS)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    add_lyapunov_flags(p)

    p = sub.add_parser("lyapunov", help="certify gamma and build the drift region")
    common(p)
    add_lyapunov_flags(p)

    p = sub.add_parser("simulate", help="simulate the stationary law or hitting-time tails")
    common(p)
    p.add_argument("--mode", choices=("stationary", "tail"), required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="random seed (default 0)")
    p.add_argument("--horizon", type=float, help="time horizon for stationary mode (default 1e5)")
    p.add_argument("--warmup", type=float, help="warmup for stationary mode (default horizon/100)")
    p.add_argument("--reps", type=parse_count, help="replications (default 1 stationary, 1e4 tail)")
    p.add_argument("--box", dest="table_box", type=int, default=5,
                   help="box cap of the stationary table (default 5)")
    p.add_argument("--batches", type=parse_count, default=DEFAULT_BATCHES)
    p.add_argument("--x0", type=parse_state, help="initial state, comma separated")
    p.add_argument("--t", type=parse_vector, help="time grid for tail mode (default 1,2,5,10)")
    p.add_argument("--workers", type=parse_count, default=1)
    p.add_argument("--gamma", type=parse_vector)
    p.add_argument("--rho", type=parse_vector)
    p.add_argument("--eps", type=parse_vector)
    p.add_argument("--theta", type=float)
    p.add_argument("--lyap-box", dest="box", type=int, default=40,
                   help="box cap for the drift region in tail mode (default 40)")

    p = sub.add_parser("reverse", help="print the time-reversed network file")
    common(p)
    return parser


COMMANDS = {
    "analyze": cmd_analyze,
    "lyapunov": cmd_lyapunov,
    "simulate": cmd_simulate,
    "reverse": cmd_reverse,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits with 2 on usage errors
        return EXIT_IO if exc.code else EXIT_OK
    try:
        report, lines, code = COMMANDS[args.command](args)
    except (OSError, NetworkFormatError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NetworkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print("\n".join(lines))
    if args.out:
        try:
            if args.command == "reverse" and code == EXIT_OK:
                Path(args.out).write_text(lines[0] + "\n")
            else:
                Path(args.out).write_text(dumps_report(report) + "\n")
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
    return code


if __name__ == "__main__":
    sys.exit(main())
