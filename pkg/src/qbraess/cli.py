"""Command-line interface: ``qbraess gen|solve|scan|sweep|fixture``.

Every command writes either a structured JSON document (config echo, tool
version, seed, timestamp and results) or comma-separated rows with a header.
The exit code is 0 only when the command finished and every solver converged;
invalid input exits with status 2 and a one-line reason on stderr.
"""
from __future__ import annotations

import argparse
import csv
import datetime
import io
import json
import os
import sys
from importlib import metadata

import numpy as np

from . import equilibria, experiments, netmodel
from .game import NoPathError, RoutingGame
from .netmodel import NetworkError
from .validation import (
    check_f0,
    check_fraction,
    check_gaussian,
    check_int,
    check_pair,
    check_solver,
    parse_grid,
    parse_pairs,
)

THREADS_ENV = "QBRAESS_THREADS"
TOOL = "qbraess"
EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_USAGE = 2


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"{THREADS_ENV}: expected an integer, got {raw!r}") from None


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default: ${THREADS_ENV} or 1)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", default=None, help="output file (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=TOOL, description="Braess paradox in entanglement routing networks.")
    parser.add_argument("--version", action="version", version=f"{TOOL} {tool_version()}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a random network file")
    g.add_argument("--nodes", type=int, required=True)
    g.add_argument("--degree", type=float, required=True)
    g.add_argument("--bell-fraction", type=float, default=0.5)
    f0 = g.add_mutually_exclusive_group(required=True)
    f0.add_argument("--f0", type=float)
    f0.add_argument("--f0-gauss", help="MEAN,SIGMA of the discrete Gaussian fidelity law")
    g.add_argument("--budget", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=None)

    s = sub.add_parser("solve", help="solve one network")
    s.add_argument("--net", required=True, help="network file or fixture:NAME")
    s.add_argument("--a", type=int)
    s.add_argument("--b", type=int)
    s.add_argument("--pairs", help="A1:B1,A2:B2 (several commodities)")
    s.add_argument("--solver", default="ne", choices=("ne", "we", "global", "btn", "fair"))
    _add_common(s)

    c = sub.add_parser("scan", help="edge-removal scan")
    c.add_argument("--net", required=True, help="network file or fixture:NAME")
    c.add_argument("--a", type=int)
    c.add_argument("--b", type=int)
    c.add_argument("--all-pairs", action="store_true")
    c.add_argument("--optima", action="store_true",
                   help="with --all-pairs, also solve global, btN and fair optima")
    c.add_argument("--removals", type=int, default=1)
    c.add_argument("--solver", default="ne", choices=("ne", "we"))
    _add_common(c)

    w = sub.add_parser("sweep", help="ensemble statistics over random networks")
    w.add_argument("--nodes", type=int, required=True)
    w.add_argument("--degree", type=float, default=3.0)
    w.add_argument("--runs", type=int, required=True)
    w.add_argument("--removals", type=int, default=1)
    w.add_argument("--d", type=int, default=1, help="disjoint Alice-Bob pairs per placement")
    w.add_argument("--placements", type=int, default=None,
                   help="random placements per network (default: all pairs when d=1, else 1)")
    w.add_argument("--f0", type=float, default=None)
    w.add_argument("--f0-gauss", default=None, help="MEAN,SIGMA")
    w.add_argument("--f0-grid", default=None, help="start:stop:step")
    w.add_argument("--bell-fraction", type=float, default=0.5)
    w.add_argument("--bell-grid", default=None, help="start:stop:step")
    w.add_argument("--budget", type=int, default=1000)
    w.add_argument("--solver", default="ne", choices=("ne", "we"))
    _add_common(w)

    x = sub.add_parser("fixture", help="write a shipped example network")
    x.add_argument("name", choices=netmodel.FIXTURES)
    x.add_argument("--out", default=None)
    return parser


# -- helpers -------------------------------------------------------------------

def _load_net(spec: str) -> netmodel.Network:
    if spec.startswith("fixture:"):
        return netmodel.load_fixture(spec.split(":", 1)[1])
    try:
        with open(spec, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise UsageError(f"net: cannot read {spec!r} ({exc.strerror})") from None
    return netmodel.load_network(data)


def _pairs(args, net) -> list[tuple[int, int]]:
    if args.pairs:
        if args.a is not None or args.b is not None:
            raise UsageError("give either --a/--b or --pairs, not both")
        pairs = [check_pair(net, a, b) for a, b in parse_pairs(args.pairs)]
        netmodel.demand_for(net, pairs)
        return pairs
    if args.a is None or args.b is None:
        raise UsageError("--a and --b are required")
    return [check_pair(net, args.a, args.b)]


def _write(args, payload: bytes):
    if args.out:
        with open(args.out, "wb") as fh:
            fh.write(payload)
    else:
        sys.stdout.buffer.write(payload)
        sys.stdout.flush()


def _csv(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _document(args, results, converged: bool) -> bytes:
    # threads and output path do not influence results, so they stay out of
    # the echo and documents from different thread counts compare equal
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "threads")}
    doc = {
        "tool": TOOL,
        "version": tool_version(),
        "command": args.command,
        "seed": getattr(args, "seed", None),
        "config": config,
        "converged": bool(converged),
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "results": results,
    }
    return (json.dumps(_jsonable(doc), indent=1) + "\n").encode()


def strip_timestamp(doc: dict) -> dict:
    """Copy of a structured output document without its timestamp."""
    return {k: v for k, v in doc.items() if k != "timestamp"}


def _fmt_edges(edges) -> str:
    return ";".join(f"{u}-{v}" for u, v in edges)


# -- commands ------------------------------------------------------------------

def cmd_gen(args) -> int:
    n = check_int("nodes", args.nodes, 2)
    b = check_fraction("bell-fraction", args.bell_fraction)
    check_int("budget", args.budget, 1)
    if args.f0_gauss is not None:
        try:
            mean, sigma = (float(v) for v in args.f0_gauss.split(","))
        except ValueError:
            raise UsageError(f"f0-gauss: expected MEAN,SIGMA, got {args.f0_gauss!r}") from None
        spec = check_gaussian(mean, sigma)
    else:
        spec = check_f0(args.f0)
    net = netmodel.generate_er(n, args.degree, args.seed, args.budget)
    net = netmodel.assign_states(net, b, spec, args.seed)
    _write(args, netmodel.save_network(net))
    return EXIT_OK


def _solve_one(game, solver, seed):
    if solver is equilibria.Solver.GREEDY_NE:
        return equilibria.greedy_ne(game, seed=seed)
    if solver is equilibria.Solver.WARDROP:
        return equilibria.solve_wardrop(game, seed=seed)
    if solver is equilibria.Solver.GLOBAL:
        return equilibria.solve_global(game, seed=seed)
    if solver is equilibria.Solver.BTN:
        return equilibria.solve_btn(game, seed=seed)
    return equilibria.solve_fair(game, seed=seed)


def cmd_solve(args) -> int:
    net = _load_net(args.net)
    pairs = _pairs(args, net)
    solver = check_solver(args.solver)
    game = RoutingGame.build(net, netmodel.demand_for(net, pairs))
    res = _solve_one(game, solver, args.seed)
    if args.format == "csv":
        rows = []
        for f in res.to_dict()["flows"]:
            rows.append([solver.value, f["commodity"], "-".join(map(str, f["path"])),
                         repr(f["x"]), repr(f["fidelity"]), repr(res.average_fidelity)])
        _write(args, _csv(["solver", "commodity", "path", "x", "fidelity", "average_fidelity"], rows))
    else:
        _write(args, _document(args, res.to_dict(), res.converged))
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def cmd_scan(args) -> int:
    net = _load_net(args.net)
    size = check_int("removals", args.removals, 1, experiments.MAX_REMOVAL_SIZE)
    solver = check_solver(args.solver, experiments.SCAN_SOLVERS)
    threads = args.threads
    if args.all_pairs:
        if args.a is not None or args.b is not None:
            raise UsageError("give either --a/--b or --all-pairs, not both")
        if size != 1:
            raise UsageError("--all-pairs scans single-edge removals (--removals 1)")
        sweep = experiments.ab_sweep(net, solver, args.seed, optima=args.optima, threads=threads)
        header = ["a", "b", "baseline", "post", "improvement", "best_edges", "used_paths",
                  "post_used_paths", "global", "btn", "fair", "below_ne"]
        rows = [[r.pair[0], r.pair[1], repr(r.ne), repr(r.post), repr(r.improvement),
                 _fmt_edges(r.best_edges), r.used_paths, r.post_used_paths,
                 "" if r.global_opt is None else repr(r.global_opt),
                 "" if r.btn is None else repr(r.btn),
                 "" if r.fair is None else repr(r.fair),
                 "" if r.below_ne is None else repr(r.below_ne)] for r in sweep.records]
        if args.format == "csv":
            _write(args, _csv(header, rows))
        else:
            results = {"pairs": [dict(zip(header, _pair_row(r))) for r in sweep.records],
                       "skipped": [list(p) for p in sweep.skipped]}
            _write(args, _document(args, results, sweep.converged))
        return EXIT_OK if sweep.converged else EXIT_NOT_CONVERGED
    if args.a is None or args.b is None:
        raise UsageError("--a and --b (or --all-pairs) are required")
    pair = check_pair(net, args.a, args.b)
    scan = experiments.braess_scan(net, netmodel.demand_for(net, [pair]), size, solver, args.seed,
                                   threads=threads)
    if args.format == "csv":
        rows = [[args.seed, f"{pair[0]}:{pair[1]}", _fmt_edges(r.edges), repr(scan.baseline.average_fidelity),
                 repr(r.result.average_fidelity), repr(r.improvement)] for r in scan.removals]
        _write(args, _csv(["seed", "pair", "removed", "baseline", "post", "improvement"], rows))
    else:
        _write(args, _document(args, scan.to_dict(), scan.converged))
    return EXIT_OK if scan.converged else EXIT_NOT_CONVERGED


def _pair_row(r):
    return [r.pair[0], r.pair[1], r.ne, r.post, r.improvement, [list(e) for e in r.best_edges],
            r.used_paths, r.post_used_paths, r.global_opt, r.btn, r.fair, r.below_ne]


def cmd_sweep(args) -> int:
    nodes = check_int("nodes", args.nodes, 2)
    runs = check_int("runs", args.runs, 1)
    size = check_int("removals", args.removals, 1, experiments.MAX_REMOVAL_SIZE)
    d = check_int("d", args.d, 1)
    if 2 * d > nodes:
        raise UsageError(f"d: {d} disjoint pairs need at least {2 * d} nodes")
    solver = check_solver(args.solver, experiments.SCAN_SOLVERS)
    chosen = [v is not None for v in (args.f0, args.f0_gauss, args.f0_grid)]
    if sum(chosen) > 1:
        raise UsageError("give at most one of --f0, --f0-gauss, --f0-grid")
    if args.f0_grid is not None:
        f0s = [check_f0(v) for v in parse_grid("f0-grid", args.f0_grid)]
    elif args.f0_gauss is not None:
        try:
            mean, sigma = (float(v) for v in args.f0_gauss.split(","))
        except ValueError:
            raise UsageError(f"f0-gauss: expected MEAN,SIGMA, got {args.f0_gauss!r}") from None
        f0s = [check_gaussian(mean, sigma)]
    else:
        f0s = [check_f0(args.f0 if args.f0 is not None else 0.675)]
    if args.bell_grid is not None:
        bells = [check_fraction("bell-grid", v) for v in parse_grid("bell-grid", args.bell_grid)]
    else:
        bells = [check_fraction("bell-fraction", args.bell_fraction)]

    points = []
    for f0 in f0s:
        for b in bells:
            cfg = experiments.EnsembleConfig(
                n_nodes=nodes, degree=args.degree, f0=f0, bell_fraction=b, runs=runs,
                master_seed=args.seed, d=d, removal_size=size, budget=check_int("budget", args.budget, 1),
                solver=solver, placements=args.placements)
            stats = (experiments.multi_pair_run(cfg, args.threads) if d > 1
                     else experiments.ensemble_run(cfg, args.threads))
            points.append((cfg, stats))
    converged = all(s.converged for _, s in points)
    if args.format == "csv":
        rows = []
        for cfg, st in points:
            f0 = cfg.to_dict()["f0"]
            f0 = f0 if not isinstance(f0, dict) else f"gauss({f0['mean']},{f0['sigma']})"
            rows.append([f0, cfg.bell_fraction, cfg.d, cfg.removal_size, len(st.values), repr(st.mean),
                         repr(st.se), repr(st.mean_raw), repr(st.se_raw), st.fingerprint])
        _write(args, _csv(["f0", "bell_fraction", "d", "removals", "runs", "mean", "se", "mean_raw",
                           "se_raw", "fingerprint"], rows))
    else:
        results = []
        for cfg, st in points:
            results.append({
                "config": cfg.to_dict(),
                "summary": st.summary(),
                "realizations": [{"index": r.index, "seed": r.seed, "value": r.value, "value_raw": r.value_raw,
                                  "placements": [[list(p) for p in pl] for pl in r.placements],
                                  "improvements": r.improvements,
                                  "best_edges": [[list(e) for e in b] for b in r.best_subsets]}
                                 for r in st.records],
            })
        _write(args, _document(args, results, converged))
    return EXIT_OK if converged else EXIT_NOT_CONVERGED


def cmd_fixture(args) -> int:
    _write(args, netmodel.save_network(netmodel.load_fixture(args.name)))
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "scan": cmd_scan, "sweep": cmd_sweep, "fixture": cmd_fixture}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "threads", 0) is None:
            args.threads = _default_threads()
        if getattr(args, "threads", 1) < 1:
            raise UsageError("threads: must be >= 1")
        return COMMANDS[args.command](args)
    except (UsageError, NoPathError, NetworkError, ValueError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"{TOOL}: error: {msg}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
