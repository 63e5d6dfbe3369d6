"""Command-line driver: ``bisis <subcommand> ...``.

Exit codes: 0 success, 1 validation error, 2 solver non-convergence,
3 bound violation (``bounds`` only).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .bounds import evaluate_bounds
from .dynamics import BiState, IntegrationError, IntegratorConfig, VirusParams, integrate, write_trajectory_csv
from .equilibria import EquilibriumError, classify_regime, solve_equilibria
from .generators import AS733_REFERENCE_LAMBDA, as733_standins
from .graph import GraphError, SpectralConvergenceError, load_pair, write_edge_list
from .sweep import load_spec, records_to_csv, records_to_json, run_sweep, spec_meta

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED, EXIT_VIOLATION = 0, 1, 2, 3

log = logging.getLogger("bisis")


class _Parser(argparse.ArgumentParser):
    """Usage errors exit 1 so that 2 stays reserved for solver failures."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


class _Formatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def _positive(kind):
    def parse(text: str):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a valid {kind.__name__}: {text!r}") from None
        if not (v > 0 and np.isfinite(v)):
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v

    parse.__name__ = f"positive {kind.__name__}"
    return parse


def _nonneg_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a valid float: {text!r}") from None
    if not (v >= 0 and np.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a valid integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("seed must be non-negative")
    return v


pos_float, pos_int = _positive(float), _positive(int)


def _graph_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--graph-a", type=Path, required=True, metavar="PATH", help="edge list of virus-1 graph A")
    p.add_argument("--graph-b", type=Path, required=True, metavar="PATH", help="edge list of virus-2 graph B")


def _rate_args(p: argparse.ArgumentParser) -> None:
    for k in ("1", "2"):
        g = p.add_mutually_exclusive_group(required=True)
        g.add_argument(f"--tau{k}", type=pos_float, help=f"effective rate of virus {k} (beta = tau * delta)")
        g.add_argument(f"--beta{k}", type=pos_float, help=f"infection rate of virus {k}")
        p.add_argument(f"--delta{k}", type=pos_float, default=1.0, help=f"recovery rate of virus {k}")


def _solver_args(p: argparse.ArgumentParser, starts: bool = True) -> None:
    if starts:
        p.add_argument("--starts", type=pos_int, default=50, help="multi-start trajectories per point")
        p.add_argument("--jobs", type=pos_int, default=1, help="worker threads for multi-start")
    p.add_argument("--seed", type=_seed, default=0, help="seed for random initial states")
    p.add_argument("--convergence-tol", type=pos_float, default=1e-10, help="stop when the field sup-norm falls below this")
    p.add_argument("--step", type=pos_float, default=None, help="fixed RK4 step (default: step-fraction / max rate)")
    p.add_argument("--step-fraction", type=pos_float, default=0.01, help="step as a fraction of 1 / max rate")
    p.add_argument("--max-time", type=pos_float, default=1e6, help="integration horizon")


def _output_args(p: argparse.ArgumentParser, formats: Sequence[str], default: str) -> None:
    p.add_argument("--format", choices=formats, default=default, help="output format")
    p.add_argument("--output", "-o", default="-", metavar="PATH", help="output file; '-' is standard output")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bisis", description=__doc__, formatter_class=_Formatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--verbose", "-v", action="store_true", help="log solver progress to standard error")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("regime", help="threshold quantities and regime", formatter_class=_Formatter,
                       description="Print the four threshold quantities and the regime classification.")
    _graph_args(p)
    _rate_args(p)
    _output_args(p, ("text", "json"), "text")

    p = sub.add_parser("equilibria", help="enumerate equilibria", formatter_class=_Formatter,
                       description="Classify the instance and enumerate its coexistence equilibria by multi-start.")
    _graph_args(p)
    _rate_args(p)
    _solver_args(p)
    _output_args(p, ("json", "csv"), "json")

    p = sub.add_parser("sweep", help="run a sweep config", formatter_class=_Formatter,
                       description="Execute a TOML sweep config (see README for the key set).")
    p.add_argument("--config", type=Path, required=True, metavar="PATH", help="sweep config file")
    p.add_argument("--seed", type=_seed, default=None, help="override the config seed")
    p.add_argument("--jobs", type=pos_int, default=None, help="override the config's multi-start worker threads")
    _output_args(p, ("csv", "json"), "csv")

    p = sub.add_parser("bounds", help="check all bounds on an instance", formatter_class=_Formatter,
                       description="Solve the instance and check the single-virus bound, the per-node "
                                   "coexistence bounds, the aggregate bound and local monotonicity. "
                                   "Exits 3 if any check fails.")
    _graph_args(p)
    _rate_args(p)
    _solver_args(p)
    p.add_argument("--no-monotonicity", action="store_true", help="skip the local continuation checks")
    _output_args(p, ("text", "json"), "text")

    p = sub.add_parser("simulate", help="integrate one trajectory", formatter_class=_Formatter,
                       description="Integrate one trajectory from a uniform or random initial state.")
    _graph_args(p)
    _rate_args(p)
    _solver_args(p, starts=False)
    p.add_argument("--x0", type=_nonneg_float, default=0.1, help="uniform initial virus-1 level")
    p.add_argument("--y0", type=_nonneg_float, default=0.1, help="uniform initial virus-2 level")
    p.add_argument("--random-init", action="store_true", help="draw the initial state from the seed instead")
    p.add_argument("--log-interval", type=pos_float, default=None, help="sample the trajectory every this much time")
    p.add_argument("--trajectory", type=Path, default=None, metavar="PATH", help="write the sampled trajectory as CSV")
    _output_args(p, ("text", "json"), "text")

    p = sub.add_parser("gen-graphs", help="write seeded stand-in graphs", formatter_class=_Formatter,
                       description="Write three overlaid 103-node stand-in graphs (616/267/297 edges).")
    p.add_argument("--out-dir", type=Path, default=Path("."), metavar="DIR", help="destination directory")
    p.add_argument("--seed", type=_seed, default=0, help="generator seed")
    p.add_argument("--base", type=Path, default=None, metavar="PATH",
                   help="base snapshot edge list (default: seeded preferential-attachment graph)")
    return parser


def _params(ns: argparse.Namespace) -> tuple[VirusParams, VirusParams]:
    out = []
    for k in ("1", "2"):
        tau, beta, delta = getattr(ns, f"tau{k}"), getattr(ns, f"beta{k}"), getattr(ns, f"delta{k}")
        out.append(VirusParams.from_tau(tau, delta) if tau is not None else VirusParams(beta, delta))
    return out[0], out[1]


def _cfg(ns: argparse.Namespace, log_interval: float | None = None) -> IntegratorConfig:
    return IntegratorConfig(
        step=ns.step,
        convergence_tol=ns.convergence_tol,
        max_time=ns.max_time,
        step_fraction=ns.step_fraction,
        log_interval=log_interval,
    )


def _use_color(stream) -> bool:
    return "NO_COLOR" not in os.environ and hasattr(stream, "isatty") and stream.isatty()


def _mark(ok: bool, color: bool) -> str:
    word = "ok" if ok else "VIOLATED"
    if not color:
        return word
    return f"\033[32m{word}\033[0m" if ok else f"\033[31m{word}\033[0m"


def _write(ns: argparse.Namespace, text: str) -> None:
    if ns.output == "-":
        sys.stdout.write(text)
    else:
        Path(ns.output).write_text(text, encoding="utf-8")


def _json(doc) -> str:
    return json.dumps(doc, indent=2, default=_jsonable) + "\n"


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"not serializable: {type(v).__name__}")


def _cmd_regime(ns) -> int:
    g_a, g_b = load_pair(ns.graph_a, ns.graph_b)
    p1, p2 = _params(ns)
    rep = classify_regime(p1, p2, g_a, g_b)
    if ns.format == "json":
        _write(ns, _json(dict(rep.to_dict(), tau1=p1.tau, tau2=p2.tau)))
        return EXIT_OK
    lines = [
        f"tau1 * lambda(A)               = {rep.t1_lambdaA:.12g}",
        f"tau2 * lambda(B)               = {rep.t2_lambdaB:.12g}",
        f"tau1 * lambda(diag(1 - y*) A)  = {rep.t1_lambda_scaledA:.12g}",
        f"tau2 * lambda(diag(1 - x*) B)  = {rep.t2_lambda_scaledB:.12g}",
        f"classification                 = {rep.classification.value}",
        f"margin                         = {rep.margin:.6g}",
    ]
    _write(ns, "\n".join(lines) + "\n")
    return EXIT_OK


def _cmd_equilibria(ns) -> int:
    g_a, g_b = load_pair(ns.graph_a, ns.graph_b)
    p1, p2 = _params(ns)
    eqset = solve_equilibria(p1, p2, g_a, g_b, ns.starts, _cfg(ns), ns.seed, ns.jobs)
    if ns.format == "json":
        _write(ns, _json(eqset.to_dict(p1, p2, g_a, g_b)))
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        k = len(eqset.coexistence)
        w.writerow(["node_id", "xstar", "ystar"] + [f"{v}_{j}" for j in range(k) for v in ("xhat", "yhat")])
        for i, nid in enumerate(g_a.node_ids):
            row = [nid, repr(float(eqset.virus1.xstar[i])), repr(float(eqset.virus2.xstar[i]))]
            for ce in eqset.coexistence:
                row += [repr(float(ce.xhat[i])), repr(float(ce.yhat[i]))]
            w.writerow(row)
        _write(ns, buf.getvalue())
    unrefined = [j for j, ce in enumerate(eqset.coexistence) if not ce.refined]
    if unrefined:
        log.error("equilibria %s failed Newton certification", unrefined)
        return EXIT_NONCONVERGED
    return EXIT_OK


def _cmd_sweep(ns) -> int:
    spec = load_spec(ns.config)
    if ns.seed is not None:
        spec.seed = ns.seed
    if ns.jobs is not None:
        spec.jobs = ns.jobs
    records = run_sweep(spec)
    if not records:
        raise ValueError("sweep produced no records")
    if ns.format == "csv":
        _write(ns, records_to_csv(records))
    else:
        _write(ns, records_to_json(records, spec_meta(spec)))
    failed = [r for r in records if r.error is not None or not r.converged]
    if failed:
        log.error("%d sweep record(s) did not converge", len(failed))
        return EXIT_NONCONVERGED
    return EXIT_OK


def _cmd_bounds(ns) -> int:
    g_a, g_b = load_pair(ns.graph_a, ns.graph_b)
    p1, p2 = _params(ns)
    cfg = _cfg(ns)
    eqset = solve_equilibria(p1, p2, g_a, g_b, ns.starts, cfg, ns.seed, ns.jobs)
    reports = evaluate_bounds(eqset, p1, p2, g_a, g_b, monotonicity=not ns.no_monotonicity, cfg=cfg)
    ok = all(r.all_satisfied for r in reports)
    if ns.format == "json":
        _write(ns, _json({
            "tau1": p1.tau, "tau2": p2.tau,
            "classification": eqset.report.classification.value,
            "all_satisfied": ok,
            "reports": [r.to_dict() for r in reports],
        }))
    else:
        color = ns.output == "-" and _use_color(sys.stdout)
        lines = [f"classification: {eqset.report.classification.value}"]
        for r in reports:
            head = "single-virus equilibria" if r.ce_index is None else f"coexistence equilibrium {r.ce_index}"
            lines.append(head)
            for label, c in (("virus 1", r.prop1_v1), ("virus 2", r.prop1_v2)):
                if c is not None:
                    lines.append(f"  mean bound {label}: {c.avg:.10g} <= {c.bound:.10g} <= {c.xmax:.10g}  "
                                 f"{_mark(c.holds, color)}")
            if r.cor1 is not None:
                lines.append(f"  per-node bound: min margin {r.cor1.min_margin:.6g}  {_mark(r.cor1.holds, color)}")
            if r.prop2 is not None:
                lines.append(f"  aggregate bound: {r.prop2.lhs:.10g} < {r.prop2.rhs:.10g}  {_mark(r.prop2.holds, color)}")
            for param, pair in r.monotonicity.items():
                if pair is not None:
                    lines.append(f"  monotone in {param}: levels {_mark(pair[0].holds, color)}, "
                                 f"ratios {_mark(pair[1].holds, color)}")
            if r.mu is not None:
                lines.append(f"  mu = {r.mu:.10g}, nu = {r.nu:.10g}")
            lines += [f"  note: {n}" for n in r.notes]
        _write(ns, "\n".join(lines) + "\n")
    if not ok:
        return EXIT_VIOLATION
    if any(not ce.refined for ce in eqset.coexistence):
        return EXIT_NONCONVERGED
    return EXIT_OK


def _cmd_simulate(ns) -> int:
    g_a, g_b = load_pair(ns.graph_a, ns.graph_b)
    p1, p2 = _params(ns)
    n = g_a.node_count
    if ns.random_init:
        w = np.random.default_rng(ns.seed).dirichlet([1.0, 1.0, 1.0], size=n)
        init = BiState(w[:, 0], w[:, 1])
    else:
        if ns.x0 + ns.y0 > 1:
            raise ValueError("--x0 + --y0 must not exceed 1")
        init = BiState(np.full(n, ns.x0), np.full(n, ns.y0))
    interval = ns.log_interval
    if ns.trajectory is not None and interval is None:
        raise ValueError("--trajectory needs --log-interval")
    res = integrate(init, p1, p2, g_a, g_b, _cfg(ns, interval))
    if ns.trajectory is not None:
        write_trajectory_csv(res.trajectory, ns.trajectory)
    x, y = res.final.x, res.final.y
    if ns.format == "json":
        _write(ns, _json({
            "converged": res.converged, "elapsed": res.elapsed, "steps": res.steps, "residual": res.residual,
            "node_ids": list(g_a.node_ids), "x": x.tolist(), "y": y.tolist(),
        }))
    else:
        status = "converged" if res.converged else "not converged"
        _write(ns, f"{status} at t = {res.elapsed:.6g} after {res.steps} steps (residual {res.residual:.3e})\n"
                   f"mean x = {x.mean():.10g}, mean y = {y.mean():.10g}\n")
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def _cmd_gen_graphs(ns) -> int:
    ns.out_dir.mkdir(parents=True, exist_ok=True)
    graphs = as733_standins(ns.base, ns.seed)
    source = str(ns.base) if ns.base is not None else "preferential-attachment base"
    for label, g in graphs.items():
        path = ns.out_dir / f"as733_{label}.edges"
        write_edge_list(g, path, header=f"stand-in graph {label} (seed {ns.seed}, {source})\n"
                                        f"{g.node_count} nodes, {g.edge_count} edges")
        print(f"{path}: {g.node_count} nodes, {g.edge_count} edges, lambda = {g.spectral_radius:.6g} "
              f"(reference {AS733_REFERENCE_LAMBDA[label]})")
    return EXIT_OK


_COMMANDS = {
    "regime": _cmd_regime,
    "equilibria": _cmd_equilibria,
    "sweep": _cmd_sweep,
    "bounds": _cmd_bounds,
    "simulate": _cmd_simulate,
    "gen-graphs": _cmd_gen_graphs,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return _COMMANDS[ns.command](ns)
    except (EquilibriumError, IntegrationError, SpectralConvergenceError) as e:
        print(f"bisis: solver failure: {e}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (GraphError, ValueError, OSError) as e:
        print(f"bisis: error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
