"""Command line entry point: ``ghostsim run | compare | localize | validate``.

Output directories default to ``$GHOSTSIM_OUT/<kind>-<scenario>`` (or
``./ghostsim-out/...`` when the variable is unset).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import __version__
from .errors import InvalidScenario, MismatchedScenarios
from .experiments import KINDS, _dos_window, compare_runs, run_experiment, topo_paths, write_csv
from .frame_security import dump_frame
from .localization import localize, throughput_variation
from .mac_sim import capture_frames, load_trace_csv, mean_throughput
from .scenario import SHIPPED, parse_scenario

OUT_ENV = "GHOSTSIM_OUT"

EXIT_OK, EXIT_ERROR, EXIT_BAD_INPUT, EXIT_MISMATCH = 0, 1, 2, 3


def default_out(*parts: str) -> Path:
    return Path(os.environ.get(OUT_ENV) or "ghostsim-out").joinpath(*parts)


def parse_seeds(text: str) -> list[int]:
    """``7``, ``1-5`` or ``1,4,9`` (ranges allowed inside the comma list)."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        if sep:
            a, b = int(lo), int(hi)
            if b < a:
                raise argparse.ArgumentTypeError(f"empty seed range {part!r}")
            seeds.extend(range(a, b + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError("no seeds given")
    return seeds


def _seed_arg(text):
    try:
        return parse_seeds(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ghostsim", description="Ghost energy-depletion attack simulator.")
    p.add_argument("--version", action="version", version=f"ghostsim {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run one experiment kind on a scenario")
    r.add_argument("kind", choices=KINDS)
    r.add_argument("--scenario", required=True,
                   help=f"scenario file, or a shipped name ({', '.join(SHIPPED)})")
    r.add_argument("--seed", type=_seed_arg, default=None, help="n, a-b or a,b,c (default: the scenario's seeds)")
    r.add_argument("--out", type=Path, default=None, help=f"output directory (default under ${OUT_ENV})")
    r.add_argument("--no-traces", action="store_true", help="skip per-run trace/energy/summary CSVs")
    r.add_argument("--dump-frames", action="store_true", help="write every transmitted frame to frames.txt")

    c = sub.add_parser("compare", help="per-node throughput and drain change of run B against run A")
    c.add_argument("dir_a", type=Path)
    c.add_argument("dir_b", type=Path)
    c.add_argument("--out", type=Path, default=None, help="write compare.csv here")

    lz = sub.add_parser("localize", help="locate attackers from a recorded trace")
    lz.add_argument("--trace", type=Path, required=True, help="trace.csv of the run under attack")
    lz.add_argument("--scenario", required=True, help="scenario the trace was recorded from")
    lz.add_argument("--baseline", type=Path, default=None,
                    help="trace.csv of an attack-free run; without it the trace is split at attack start")
    lz.add_argument("--window", type=float, nargs=2, metavar=("START", "END"), default=None)
    lz.add_argument("--delta", type=float, default=None)
    lz.add_argument("--delta-prime", type=float, default=None)
    lz.add_argument("--radius", type=float, default=None)
    lz.add_argument("--out", type=Path, default=None)

    v = sub.add_parser("validate", help="load and check a scenario file")
    v.add_argument("scenario")
    return p


# -- verbs ----------------------------------------------------------------------

def cmd_run(args) -> int:
    sc = parse_scenario(args.scenario)
    out = args.out or default_out(f"{args.kind}-{sc.name}")
    if args.dump_frames:
        with capture_frames() as frames:
            m = run_experiment(args.kind, sc, args.seed, out, traces=not args.no_traces)
        path = Path(out) / "frames.txt"
        with open(path, "w", encoding="utf-8") as fh:
            for seed, t, sender, dst, raw in frames:
                fh.write(f"seed={seed}|t={t!r}|from={sender}|to={dst}|{dump_frame(raw)}\n")
        print(f"{len(frames)} frames dumped to {path}")
    else:
        m = run_experiment(args.kind, sc, args.seed, out, traces=not args.no_traces)
    print(m.summary_text(), end="")
    print(f"wrote {len(m.files)} files to {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    rows = compare_runs(args.dir_a, args.dir_b, args.out)
    print(f"{'node':>5} {'S_a':>8} {'S_b':>8} {'dS%':>8} {'I_a mA':>9} {'I_b mA':>9} {'dDrain%':>8}")
    fmt = lambda v, w, p: f"{v:>{w}.{p}f}" if v is not None else f"{'-':>{w}}"  # noqa: E731
    for n, sa, sb, dS, ca, cb, dE in rows:
        print(f"{n:>5} {fmt(sa, 8, 3)} {fmt(sb, 8, 3)} {fmt(dS, 8, 1)} {fmt(ca, 9, 4)} {fmt(cb, 9, 4)} "
              f"{fmt(dE, 8, 2)}")
    if args.out:
        print(f"wrote {Path(args.out) / 'compare.csv'}")
    return EXIT_OK


def cmd_localize(args) -> int:
    sc = parse_scenario(args.scenario)
    sec, dsec = sc.section("localization"), sc.section("dos_network")
    records = load_trace_csv(args.trace)
    end = max((r.time_s for r in records), default=0.0)
    if args.window:
        lo, hi = args.window
    else:
        lo, hi = _dos_window(sc, dsec)
        hi = min(hi, end) if end > lo else hi
    if args.baseline is not None:
        base = mean_throughput(load_trace_csv(args.baseline), lo, hi)
    else:
        start = min((a.start for a in sc.attackers), default=0.0)
        if start <= 0:
            print("no attack-free prefix in the trace; pass --baseline", file=sys.stderr)
            return EXIT_BAD_INPUT
        base = mean_throughput(records, 0.0, start)
    att = mean_throughput(records, lo, hi, nodes=sorted(base))
    dS = throughput_variation(base, att).delta
    kw = dict(delta=args.delta if args.delta is not None else float(sec.get("delta", 5.0)),
              delta_prime=args.delta_prime if args.delta_prime is not None else float(sec.get("delta_prime", 10.0)),
              radius=args.radius if args.radius is not None else float(sec.get("radius", sc.topology.interference_range)),
              min_group_size=int(sec.get("min_group_size", 2)))
    res = localize(topo_paths(sc), dS, sc.topology.positions, **kw)
    print(f"{len(res.suspects)} suspects: {' '.join(map(str, sorted(res.suspects))) or 'none'}")
    for g, est in zip(res.groups, res.estimates):
        print(f"group {' '.join(map(str, g))} -> attacker near ({est[0]:.1f}, {est[1]:.1f})")
    if not res.groups:
        print("no attacker located")
    if args.out:
        write_csv(Path(args.out) / "localization.csv", ("group", "members", "estimate_x", "estimate_y"),
                  [(i, " ".join(map(str, g)), e[0], e[1]) for i, (g, e) in enumerate(zip(res.groups, res.estimates))])
        lines = [f"suspects: {sorted(res.suspects)}"] + [f"group {g}: ({e[0]:.2f}, {e[1]:.2f})"
                                                         for g, e in zip(res.groups, res.estimates)]
        (Path(args.out) / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_validate(args) -> int:
    sc = parse_scenario(args.scenario)
    topo = sc.topology
    print(f"{sc.name}: ok")
    print(f"  nodes {len(sc.nodes)} (gateway {topo.gateway}), ranges {topo.comm_range:g}/{topo.interference_range:g} m")
    print(f"  attackers {len(sc.attackers)}, sim_end {sc.sim_end:g} s, seeds {sc.seeds}")
    if sc.params:
        print(f"  experiment sections: {', '.join(sorted(sc.params))}")
    return EXIT_OK


VERBS = {"run": cmd_run, "compare": cmd_compare, "localize": cmd_localize, "validate": cmd_validate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return VERBS[args.verb](args)
    except InvalidScenario as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except FileNotFoundError as exc:
        print(f"not found: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except MismatchedScenarios as exc:
        print(f"cannot compare: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (ValueError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
