"""Command-line entry point: compile, scf, tune, validate, bench.

Exit codes: 0 success, 1 failed check or run, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

log = logging.getLogger("eriflow")

THREADS_ENV = "ERIFLOW_THREADS"

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be >= 1")
    return n


def _parse_class(text: str) -> tuple[int, int, int, int]:
    try:
        parts = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"class must look like 1,0,1,0, got {text!r}") from None
    if len(parts) != 4 or any(p < 0 for p in parts):
        raise argparse.ArgumentTypeError(f"class needs four non-negative momenta, got {text!r}")
    return parts


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _nonneg_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not np.isfinite(v) or v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text!r}")
    return v


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def _write_json(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2, default=_json_default)
    if path is None or path == "-":
        print(text)
    else:
        Path(path).write_text(text + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=_positive_int, default=None,
                   help=f"worker threads (default: ${THREADS_ENV} or 1)")
    p.add_argument("--deterministic", action="store_true", help="merge contributions in block order")
    p.add_argument("--contended", action="store_true", help="all workers add into one shared matrix")
    p.add_argument("--tile-size", type=_positive_int, default=32, help="pairs per tile (M)")
    p.add_argument("--screen-threshold", type=_nonneg_float, default=None,
                   help="drop shell pairs below this prefactor (off by default)")
    p.add_argument("--lambda", dest="lam", type=_nonneg_float, default=1.0, help="greedy momentum weight")
    p.add_argument("--granularity", type=_positive_int, default=None, help="primitive tasks per work item")


def _molecule_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--xyz", required=True, help="XYZ file (Angstrom) or a bundled fixture name")
    p.add_argument("--basis", default="sto-3g", help="basis name or file")
    p.add_argument("--charge", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eriflow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="compile ERI classes to execution plans")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--class", dest="cls", type=_parse_class, help="La,Lb,Lc,Ld")
    g.add_argument("--max-l", type=int, help="compile every class with momenta up to this value")
    p.add_argument("--lambda", dest="lam", type=_nonneg_float, default=1.0)
    p.add_argument("--seed", type=int, default=None, help="random valid path instead of greedy")
    p.add_argument("--emit-source", nargs="?", const="-", default=None, metavar="PATH",
                   help="write the generated kernel source (stdout without PATH)")
    p.add_argument("--stats-json", default=None, metavar="PATH")

    p = sub.add_parser("scf", help="restricted Hartree-Fock energy")
    _molecule_args(p)
    _add_engine_flags(p)
    p.add_argument("--conv", type=_nonneg_float, default=1e-6, help="max density change")
    p.add_argument("--max-iter", type=_positive_int, default=99)
    p.add_argument("--diis", type=_on_off, default=True, metavar="on|off")
    p.add_argument("--damping", type=_nonneg_float, default=0.0)
    p.add_argument("--tune", action="store_true", help="tune granularities before the first iteration")
    p.add_argument("--json", default=None, metavar="PATH")

    p = sub.add_parser("tune", help="tune per-class granularity on a sample of blocks")
    _molecule_args(p)
    _add_engine_flags(p)
    p.add_argument("--sample-blocks", type=_positive_int, default=2)
    p.add_argument("--repeats", type=_positive_int, default=3)
    p.add_argument("--g0", type=_positive_int, default=64, help="starting granularity")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", default=None, metavar="PATH")

    p = sub.add_parser("validate", help="run a self-check suite")
    p.add_argument("suite", help="energies | oracle | symmetry | allocator")
    p.add_argument("--reference", choices=("published", "fixture"), default="published",
                   help="energy table for the energies suite")
    p.add_argument("--molecules", default="water,benzene", help="comma list for the energies suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", default=None, metavar="PATH")

    p = sub.add_parser("bench", help="time Fock builds")
    _molecule_args(p)
    _add_engine_flags(p)
    p.add_argument("--repeats", type=_positive_int, default=3)
    p.add_argument("--tune", action="store_true", help="also time a tuned configuration")
    p.add_argument("--sample-blocks", type=_positive_int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", default=None, metavar="PATH")
    return parser


def _mode(args) -> str:
    if args.deterministic and args.contended:
        raise UsageError("--deterministic and --contended are exclusive")
    return "deterministic" if args.deterministic else "contended" if args.contended else "concurrent"


def _threads(args) -> int:
    return args.threads if args.threads is not None else _default_threads()


def _load(args):
    from .molecule import InputError, load_molecule

    try:
        return load_molecule(args.xyz, args.basis, args.charge)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    except InputError as exc:
        raise UsageError(f"bad input: {exc}") from None


def cmd_compile(args) -> int:
    from .compiler import CompilerConfig, all_classes, compile_report, emit_source

    if args.max_l is not None and args.max_l < 0:
        raise UsageError("--max-l must be non-negative")
    config = CompilerConfig(lam=args.lam, seed=args.seed)
    classes = [args.cls] if args.cls else all_classes(args.max_l)
    reports, sources = [], []
    t0 = time.perf_counter()
    for cls in classes:
        plan, rep = compile_report(cls, config)
        reports.append(rep)
        if args.emit_source is not None:
            sources.append(emit_source(plan))
    total_ms = (time.perf_counter() - t0) * 1e3
    if args.emit_source is not None:
        text = "\n\n".join(sources)
        if args.emit_source == "-":
            sys.stdout.write(text)
        else:
            Path(args.emit_source).write_text(text)
    stats = reports[0] if len(reports) == 1 else {"classes": reports, "compile_ms": total_ms}
    if args.stats_json:
        _write_json(stats, args.stats_json)
    if args.emit_source != "-":
        for rep in reports:
            print(f"class {','.join(map(str, rep['class']))}: op_count={rep['op_count']} "
                  f"slot_count={rep['slot_count']} node_count={rep['node_count']} "
                  f"compile_ms={rep['compile_ms']:.1f}")
    return EXIT_OK


def cmd_scf(args) -> int:
    from .executor import DEFAULT_GRANULARITY
    from .scf import ScfError, ScfOptions, scf_iterate

    mol = _load(args)
    if args.damping >= 1.0:
        raise UsageError("--damping must be below 1")
    options = ScfOptions(
        conv=args.conv, max_iter=args.max_iter, damping=args.damping, diis=args.diis,
        threads=_threads(args), mode=_mode(args), tile_size=args.tile_size,
        screen_threshold=args.screen_threshold, lam=args.lam,
        granularity=args.granularity or DEFAULT_GRANULARITY, tune=args.tune,
    )
    try:
        res = scf_iterate(mol, options)
    except ScfError as exc:
        log.error("%s", exc)
        return EXIT_FAIL
    out = res.to_json()
    out["molecule"] = args.xyz
    out["basis"] = args.basis
    out["nbasis"] = mol.nbasis
    if args.json:
        _write_json(out, args.json)
    status = "converged" if res.converged else "NOT converged"
    print(f"E = {res.energy:.10f} Ha  ({status} in {res.iterations} iterations, "
          f"{res.timing['total_s']:.2f} s)")
    return EXIT_OK if res.converged else EXIT_FAIL


def _engine(args, mol):
    from .blocks import construct
    from .compiler import CompilerConfig
    from .executor import FockContext, compile_plans
    from .oneint import one_electron
    from .scf import density_from_mos, orthogonalizer, solve_fock

    bplan = construct(mol.shells, args.tile_size, args.screen_threshold)
    ctx = FockContext(mol.shells, bplan)
    plans = compile_plans(bplan.classes, CompilerConfig(lam=args.lam))
    S, T, V = one_electron(mol)
    _, C = solve_fock(T + V, orthogonalizer(S))
    D = density_from_mos(C, mol.n_occupied)
    return ctx, plans, D


def cmd_tune(args) -> int:
    from .allocator import tune_blocks

    mol = _load(args)
    ctx, plans, D = _engine(args, mol)
    res = tune_blocks(ctx, plans, D, args.sample_blocks, args.repeats, g0=args.g0, seed=args.seed,
                      threads=_threads(args), mode=_mode(args))
    report = res.report()
    _write_json(report, args.json)
    if args.json:
        for rec in report:
            print(f"class {','.join(map(str, rec['class']))}: g = {rec['g_final']}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from . import validate

    if args.suite not in validate.SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; expected one of {', '.join(validate.SUITES)}")
    kwargs = {}
    if args.suite == "energies":
        kwargs = {"molecules": tuple(m for m in args.molecules.split(",") if m), "reference": args.reference}
    elif args.suite in ("oracle", "symmetry"):
        kwargs = {"seed": args.seed}
    report = validate.run_suite(args.suite, **kwargs)
    if args.json:
        _write_json(report, args.json)
    print(f"{args.suite}: {'PASS' if report['passed'] else 'FAIL'}")
    for row in report.get("checks", []):
        print("  " + ("pass" if row["passed"] else "FAIL") + "  " +
              ", ".join(f"{k}={v}" for k, v in row.items() if k != "passed"))
    return EXIT_OK if report["passed"] else EXIT_FAIL


def _median_build(ctx, plans, D, repeats, **kw) -> tuple[float, list[float], dict]:
    from .executor import benchmark

    runs = [benchmark(ctx, plans, D, **kw) for _ in range(repeats + 1)][1:]
    walls = [r["wall_seconds"] for r in runs]
    mid = sorted(range(len(walls)), key=walls.__getitem__)[len(walls) // 2]
    return walls[mid], walls, runs[mid]


def cmd_bench(args) -> int:
    from .allocator import tune_blocks
    from .executor import DEFAULT_GRANULARITY

    mol = _load(args)
    ctx, plans, D = _engine(args, mol)
    threads, mode = _threads(args), _mode(args)
    g = args.granularity or DEFAULT_GRANULARITY
    wall, walls, detail = _median_build(ctx, plans, D, args.repeats, threads=threads, mode=mode, granularity=g)
    report = {"molecule": args.xyz, "nbasis": mol.nbasis, "threads": threads, "mode": mode,
              "untuned": {"granularity": g, "median_seconds": wall, "runs": walls, "classes": detail["classes"]}}
    if args.tune:
        res = tune_blocks(ctx, plans, D, args.sample_blocks, repeats=3, g0=g, seed=args.seed,
                          threads=threads, mode=mode)
        tuned_g = dict(res.config.g)
        twall, twalls, tdetail = _median_build(ctx, plans, D, args.repeats, threads=threads, mode=mode,
                                               granularity=tuned_g)
        report["tuned"] = {"granularity": {",".join(map(str, c)): v for c, v in tuned_g.items()},
                           "median_seconds": twall, "runs": twalls, "classes": tdetail["classes"],
                           "tuning": res.report()}
    _write_json(report, args.json)
    if args.json:
        line = f"untuned: {wall:.3f} s"
        if args.tune:
            line += f"  tuned: {report['tuned']['median_seconds']:.3f} s"
        print(line)
    return EXIT_OK


COMMANDS = {"compile": cmd_compile, "scf": cmd_scf, "tune": cmd_tune, "validate": cmd_validate, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"eriflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"eriflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
