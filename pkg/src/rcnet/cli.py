"""Command-line harness: fixtures, forwards, checks, counting, benching.

Every subcommand reads a JSON config (defaulting to the built-in desk
config), runs, and emits a single JSON report. The exit code is 0 exactly
when every enabled check in the report passed.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

from .accounting import count_all
from .bench import bench_shift
from .checks import CheckResult, run_gradient_suite, run_invariants
from .config import NeckConfig, desk_config, load_config, paper_width
from .csn import csn_params, rcnet_forward
from .fixtures import extend_stem, synth_backbone
from .fpn import fpn_forward, fpn_params
from .pyramid import load_pyramid, pyramid_digest, save_pyramid
from .revfp import revfp_forward, revfp_params

SCHEMA = "rcnet-report/1"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rcnet",
        description="Verification harness for the reverse-pyramid + cross-scale-shift neck.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", metavar="PATH", help="JSON config (default: built-in desk config)")
        sp.add_argument("--out", metavar="PATH", help="report destination (default: stdout)")
        sp.add_argument("--seed", type=int, metavar="U64", help="override the config seed")
        sp.add_argument(
            "--paper-width", action="store_true",
            help="restore full channel widths (d=256, undivided backbone stages)",
        )
        sp.add_argument("--checks", metavar="LIST", help="comma-separated subset of checks")
        sp.add_argument("--reps", type=int, default=10, metavar="N", help="benchmark repetitions")

    gen = sub.add_parser("gen-fixtures", help="write a synthetic backbone pyramid as FPZ1")
    gen.add_argument("--fixtures", metavar="PATH", default="fixtures.fpz", help="FPZ1 destination")
    common(gen)

    fwd = sub.add_parser("forward", help="run one neck forward and report digests")
    fwd.add_argument("model", choices=["fpn", "revfp", "rcnet"])
    fwd.add_argument("--fixtures", metavar="PATH", help="load backbone from FPZ1 instead of generating")
    common(fwd)

    for name, help_text in [
        ("grad-check", "finite-difference suite over all ops and the full graph"),
        ("invariants", "structural invariant checks"),
        ("count", "parameter and MAC accounting for fpn, revfp, and csn"),
        ("bench-shift", "time the scale shift against the dense circulant conv"),
    ]:
        common(sub.add_parser(name, help=help_text))
    return parser


def _load_cfg(args) -> NeckConfig:
    cfg = load_config(args.config) if args.config else desk_config()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.paper_width:
        cfg = paper_width(cfg)
    return cfg


def _selected(args) -> list[str] | None:
    return [s.strip() for s in args.checks.split(",") if s.strip()] if args.checks else None


def _filter(checks: list[CheckResult], args) -> list[CheckResult]:
    names = _selected(args)
    return [c for c in checks if c.name in names] if names else checks


def _emit(report: dict, args, force_stdout: bool = False) -> None:
    text = json.dumps(report, indent=2)
    if args.out and not force_stdout:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _report(command: str, cfg: NeckConfig, checks: list[CheckResult], **extra) -> dict:
    doc = {
        "schema": SCHEMA,
        "command": command,
        "config": cfg.to_dict(),
        "checks": {c.name: c.to_dict() for c in checks},
    }
    doc.update(extra)
    return doc


def _exit_code(report: dict) -> int:
    return 0 if all(c["pass"] for c in report["checks"].values()) else 1


def cmd_gen_fixtures(args) -> int:
    cfg = _load_cfg(args)
    t0 = time.perf_counter_ns()
    pyr = synth_backbone(cfg)
    save_pyramid(args.fixtures, pyr, seed=cfg.seed, config=cfg.to_dict())
    back = load_pyramid(args.fixtures)
    elapsed = time.perf_counter_ns() - t0
    check = CheckResult(
        "fixtures_roundtrip", pyr.equal_bitwise(back), "bitwise equal", "bitwise"
    )
    report = _report(
        "gen-fixtures", cfg, [check],
        digests={"backbone": pyramid_digest(pyr)},
        fixtures_path=args.fixtures,
        timings_ns={"total": elapsed},
    )
    _emit(report, args)
    return _exit_code(report)


def cmd_forward(args) -> int:
    cfg = _load_cfg(args)
    C = load_pyramid(args.fixtures) if args.fixtures else synth_backbone(cfg)

    def complete(store):
        return extend_stem(C, store, cfg) if cfg.has_stem else C

    t0 = time.perf_counter_ns()
    if args.model == "fpn":
        store = fpn_params(cfg)
        out = fpn_forward(complete(store), store, cfg)
    elif args.model == "revfp":
        store = revfp_params(cfg)
        out = revfp_forward(complete(store), store, cfg)
    else:
        rp = revfp_params(cfg)
        out = rcnet_forward(complete(rp), cfg, rp, csn_params(cfg))
    elapsed = time.perf_counter_ns() - t0
    report = _report(
        "forward", cfg, [],
        model=args.model,
        digests={"input": pyramid_digest(C), "output": pyramid_digest(out)},
        timings_ns={"forward": elapsed},
    )
    _emit(report, args)
    return _exit_code(report)


def cmd_grad_check(args) -> int:
    cfg = _load_cfg(args)
    t0 = time.perf_counter_ns()
    checks = _filter(run_gradient_suite(cfg.seed), args)
    report = _report(
        "grad-check", cfg, checks, timings_ns={"total": time.perf_counter_ns() - t0}
    )
    _emit(report, args)
    return _exit_code(report)


def cmd_invariants(args) -> int:
    cfg = _load_cfg(args)
    t0 = time.perf_counter_ns()
    checks = run_invariants(cfg, _selected(args))
    report = _report(
        "invariants", cfg, checks, timings_ns={"total": time.perf_counter_ns() - t0}
    )
    _emit(report, args)
    return _exit_code(report)


def cmd_count(args) -> int:
    cfg = _load_cfg(args)
    t0 = time.perf_counter_ns()
    counts = count_all(cfg)
    totals = counts.module_totals()
    sums_ok = all(
        tuple(totals[m][k] for k in ("params", "macs")) == counts.total(m) for m in totals
    )
    shift_row = counts.rows.get("csn/scale_shift")
    shift_ok = shift_row is not None and shift_row.params == 0 and shift_row.macs == 0
    checks = [
        CheckResult("count_totals_consistent", sums_ok, str(totals), "totals == sum of rows"),
        CheckResult(
            "shift_zero_cost",
            shift_ok,
            "row missing" if shift_row is None else f"params={shift_row.params} macs={shift_row.macs}",
            "params == 0 and macs == 0",
        ),
    ]
    report = _report(
        "count", cfg, _filter(checks, args),
        counts=counts.to_dict(),
        timings_ns={"total": time.perf_counter_ns() - t0},
    )
    _emit(report, args)
    return _exit_code(report)


def cmd_bench_shift(args) -> int:
    cfg = _load_cfg(args)
    result = bench_shift(cfg, reps=args.reps)
    checks = [
        CheckResult("shift_dense_equal", result.max_abs_diff <= 1e-12, result.max_abs_diff, 1e-12),
        CheckResult("shift_cheaper", result.ratio > 1.0, result.ratio, "> 1"),
    ]
    report = _report(
        "bench-shift", cfg, _filter(checks, args),
        bench=result.to_dict(),
        timings_ns={"shift_median": result.shift_ns, "dense_median": result.dense_ns},
    )
    _emit(report, args)
    return _exit_code(report)


COMMANDS = {
    "gen-fixtures": cmd_gen_fixtures,
    "forward": cmd_forward,
    "grad-check": cmd_grad_check,
    "invariants": cmd_invariants,
    "count": cmd_count,
    "bench-shift": cmd_bench_shift,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args)


def entry():  # console-script hook
    sys.exit(main())


if __name__ == "__main__":
    entry()
