"""Command line entry point: ``qtflow <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .config import ConfigError, build_geometry, build_run, parse_config
from .functionals import MT_THRESHOLD, TRACE_MT_THRESHOLD, energy_qf, energy_ts, mt_ratio, trace_mt_ratio
from .geometry import build_grid, flat_background
from .qflow import run_qflow
from .snapshot import VOLUME, read_snapshot
from .tflow import run_tflow
from .verify import checks_csv, consistency_checks, format_checks, hypothesis_checks, operator_checks

STATUS_CODES = {
    "converged": dg.EXIT_OK,
    "budget": dg.EXIT_BUDGET,
    "diverged": dg.EXIT_DIVERGED,
    "stuck": dg.EXIT_DIVERGED,
}
EXIT_IO = 1


def _grid(text):
    try:
        dims = tuple(int(x) for x in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected n1xn2xn3xn4, got {text!r}") from None
    if len(dims) != 4:
        raise argparse.ArgumentTypeError(f"expected four sizes n1xn2xn3xn4, got {text!r}")
    return dims


def _parser():
    p = argparse.ArgumentParser(prog="qtflow", description="Conformal Q- and T-curvature flows on T^3 x [0,1].")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required):
        sp.add_argument("--config", type=Path, required=config_required)
        sp.add_argument("--out-dir", type=Path)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--grid-override", type=_grid, metavar="N1xN2xN3xN4")

    for name in ("run-qflow", "run-tflow"):
        sp = sub.add_parser(name, help=f"integrate the {name[4]}-curvature flow")
        common(sp, True)
        if name == "run-qflow":
            sp.add_argument("--skip-hypothesis-check", action="store_true",
                            help="run even if the background fails the standing hypotheses")
    sp = sub.add_parser("verify-operators", help="symmetry, kernel, nonnegativity and consistency checks")
    common(sp, False)
    for name, text in (("check-invariants", "invariant report of a diagnostics CSV"),
                       ("report", "summary of a finished run")):
        sp = sub.add_parser(name, help=text)
        common(sp, False)
        sp.add_argument("--diagnostics", type=Path, help="diagnostics CSV (default: <out-dir>/diagnostics.csv)")
        if name == "check-invariants":
            sp.add_argument("--snapshot", type=Path,
                            help="evaluate energies and Moser-Trudinger ratios of a stored volume field instead")
            sp.add_argument("--alpha", type=float, default=1.0, help="exponent for the ratios (default 1)")
    return p


def _summary_text(summary):
    return "".join(f"{k}: {v!r}\n" if isinstance(v, float) else f"{k}: {v}\n" for k, v in summary.items())


def _run(args, flow):
    cfg = parse_config(args.config, seed=args.seed, grid_override=args.grid_override)
    if cfg.flow != flow:
        raise ConfigError(f"config describes a {cfg.flow} run, not {flow}",
                          cfg.lines.get(("flow", "type")), cfg.path)
    geo, profile, initial = build_run(cfg)
    if flow == "qflow" and not args.skip_hypothesis_check:
        checks = hypothesis_checks(geo, seed=cfg.seed)
        if not all(c.passed for c in checks):
            sys.stderr.write(format_checks(checks, "background fails the standing hypotheses:"))
            return dg.EXIT_CONFIG
    out = args.out_dir if args.out_dir is not None else cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / cfg.diagnostics
    runner = run_qflow if flow == "qflow" else run_tflow
    try:
        with dg.CsvSink(csv_path, flow) as sink:
            result = runner(geo, profile, cfg.flow_config, initial, sink=sink, snapshot_dir=out)
    except OSError as exc:
        sys.stderr.write(f"run aborted, partial output left in {out}: {exc}\n")
        return EXIT_IO
    text = _summary_text(result.summary)
    (out / "summary.txt").write_text(text)
    sys.stdout.write(text)
    if result.message:
        sys.stderr.write(result.message + "\n")
    return STATUS_CODES[result.status]


def _verify(args):
    if args.config is not None:
        cfg = parse_config(args.config, seed=args.seed, grid_override=args.grid_override)
        geo, _, _ = build_run(cfg)
        seed = cfg.seed
    else:
        geo = flat_background(build_grid(*(args.grid_override or (8, 8, 8, 9))))
        seed = args.seed or 0
    checks = operator_checks(geo, seed=seed)
    text = format_checks(checks, f"operator checks on {'x'.join(map(str, geo.grid.shape))} ({geo.kind})")
    cons, _ = consistency_checks()
    checks += cons
    text += format_checks(cons, "mode eigenvalue consistency (flat)")
    sys.stdout.write(text)
    if args.out_dir is not None:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / "verify.txt").write_text(text)
        (args.out_dir / "verify.csv").write_text(checks_csv(checks))
    return dg.EXIT_OK if all(c.passed for c in checks) else dg.EXIT_INVARIANT


def _diagnostics_path(args):
    if args.diagnostics is not None:
        return args.diagnostics, None
    cfg = parse_config(args.config, seed=args.seed) if args.config is not None else None
    out = args.out_dir or (cfg.out_dir if cfg else Path("."))
    return out / (cfg.diagnostics if cfg else "diagnostics.csv"), cfg


def _snapshot_report(args):
    try:
        u, dims, face = read_snapshot(args.snapshot)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read snapshot {args.snapshot}: {exc}") from None
    if face != VOLUME:
        raise ConfigError(f"{args.snapshot} holds a boundary field; a volume field is needed")
    if args.config is not None:
        cfg = parse_config(args.config, seed=args.seed, grid_override=dims)
        geo = build_geometry(cfg)
    else:
        geo = flat_background(build_grid(*dims))
    eq = energy_qf(u, np.ones(geo.grid.shape), geo)
    es = energy_ts(u, np.ones(geo.grid.face_shape), geo)
    lines = [f"snapshot {args.snapshot} ({'x'.join(map(str, dims))})",
             f"energy_qf (F = 1): {eq.total!r}  [quadratic {eq.quadratic!r}, linear {eq.linear!r}, log {eq.log_term!r}]",
             f"energy_ts (S = 1): {es.total!r}  [quadratic {es.quadratic!r}, linear {es.linear!r}, log {es.log_term!r}]"]
    try:
        lines.append(f"mt_ratio (alpha = {args.alpha}): {mt_ratio(u, geo, args.alpha)!r}"
                     f"  (sharp exponent {MT_THRESHOLD:.4f})")
        lines.append(f"trace_mt_ratio (alpha = {args.alpha}): {trace_mt_ratio(u, geo, args.alpha)!r}"
                     f"  (sharp exponent {TRACE_MT_THRESHOLD:.4f})")
    except ValueError as exc:
        lines.append(f"Moser-Trudinger ratios: {exc}")
    sys.stdout.write("\n".join(lines) + "\n")
    return dg.EXIT_OK


def _check(args):
    if args.snapshot is not None:
        return _snapshot_report(args)
    path, cfg = _diagnostics_path(args)
    tol = {"x_tol": cfg.flow_config.x_tol} if cfg else {}
    text, code = dg.invariant_report(path, **tol)
    sys.stdout.write(text)
    return code


def _report(args):
    path, _ = _diagnostics_path(args)
    flow, rows = dg.read_diagnostics(path)
    if not rows:
        sys.stdout.write(f"{path}: no data\n")
        return dg.EXIT_NO_DATA
    names = dg.column_names(flow)
    keys = dg.FIELD_NAMES
    first, last = rows[0], rows[-1]
    lines = [f"{flow} run: {len(rows) - 1} accepted steps, t = {last['t']:.6g}"]
    for key, name in zip(keys, names):
        if key in ("step", "t"):
            continue
        lines.append(f"{name:>14}: {first[key]: .10e} -> {last[key]: .10e}")
    lines.append(f"{'total cg':>14}: {int(sum(r['cg_iters'] for r in rows))}")
    summary = path.parent / "summary.txt"
    if summary.exists():
        lines.append("")
        lines.append(summary.read_text().rstrip())
    sys.stdout.write("\n".join(lines) + "\n")
    return dg.EXIT_OK


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    handlers = {
        "run-qflow": lambda: _run(args, "qflow"),
        "run-tflow": lambda: _run(args, "tflow"),
        "verify-operators": lambda: _verify(args),
        "check-invariants": lambda: _check(args),
        "report": lambda: _report(args),
    }
    try:
        return handlers[args.command]()
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return dg.EXIT_CONFIG
    except dg.ReportError as exc:
        sys.stderr.write(f"malformed diagnostics: {exc}\n")
        return dg.EXIT_INVARIANT
    except FileNotFoundError as exc:
        sys.stderr.write(f"{exc}\n")
        return dg.EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
