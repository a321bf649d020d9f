"""Command line entry point: ``mahbf {sweep,converge,timing,oracle}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import oracles
from .experiments import load_config_file, resolve_spec, run_convergence, run_sweep, run_timing


def _int_list(text: str) -> list[int]:
    """``"0,1,5"`` or inclusive ranges like ``"0-9"``."""
    out = []
    for part in filter(None, (x.strip() for x in text.split(","))):
        lo, _, hi = part.partition("-")
        out.extend(range(int(lo), int(hi) + 1) if hi else [int(lo)])
    return out


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file (see README for the schema)")
    common.add_argument("--preset", choices=["desk", "paper"], help="base parameter set (default: desk)")
    common.add_argument("--seed", type=_int_list, help="seed list, e.g. 0,1,2 or 0-9")
    common.add_argument("--out", help="output directory")
    common.add_argument("--snr", type=_float_list, help="SNR grid in dB, e.g. 0,5,10")
    common.add_argument("--agents", type=_int_list, help="agent counts, e.g. 1,2,3")
    common.add_argument("--iters", type=int, help="maximum learning iterations per episode")
    common.add_argument("--realizations", type=int, help="channel realizations per point")
    common.add_argument("--workers", type=int, help="worker processes (results are order-stable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mahbf", description="Multi-agent DRL hybrid beamforming experiments")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("sweep", parents=[common], help="rates over the SNR x agent-count grid")
    conv = sub.add_parser("converge", parents=[common], help="ablation convergence traces")
    conv.add_argument("--cases", default="case1,case2,case3,single", help="comma-separated ablation cases")
    sub.add_parser("timing", parents=[common], help="per-phase wall-clock and iterations per agent count")
    orc = sub.add_parser("oracle", help="brute-force verification suites")
    orc.add_argument("--seed", type=int, default=0)
    orc.add_argument("--out", help="write oracle.json here")
    return p


def _overrides(args) -> dict:
    o = {
        "preset": args.preset,
        "seeds": args.seed,
        "out_dir": args.out,
        "snr_grid": args.snr,
        "agent_counts": args.agents,
        "realizations": args.realizations,
        "workers": args.workers,
    }
    if args.iters is not None:
        o["trainer"] = {"max_iters": args.iters}
    return o


def _cmd_oracle(args) -> int:
    reports = oracles.run_all(seed=args.seed)
    for r in reports:
        print(r.line())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = {r.name: {"passed": r.passed, **r.metrics} for r in reports}
        (out / "oracle.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return 0 if all(r.passed for r in reports) else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "oracle":
        return _cmd_oracle(args)

    file_config = load_config_file(args.config) if args.config else None
    spec = resolve_spec(file_config=file_config, overrides=_overrides(args))
    try:
        if args.command == "sweep":
            result = run_sweep(spec)
            for row in result["summary"]:
                print(f"snr={row['snr_db']:g} dB Y={row['n_agents']}: mahbf {row['mahbf_mean']:.3f} "
                      f"baseline {row['baseline_mean']:.3f} full-digital {row['full_digital_mean']:.3f} "
                      f"(n={row['n']}, failed={row['failed']})")
        elif args.command == "converge":
            result = run_convergence(spec, [c.strip() for c in args.cases.split(",") if c.strip()])
            for case, med in result["medians"].items():
                print(f"{case}: median iterations to convergence {med:g} "
                      f"({result['censored'][case]} runs hit the iteration cap)")
        else:
            result = run_timing(spec)
            for y, row in result["per_agents"].items():
                ms = row["median_ms"]
                print(f"Y={y}: median iterations to convergence {row['median_iterations_to_convergence']:g}, "
                      f"median total {ms['total']:.0f} ms (act {ms['act']:.0f}, env {ms['env']:.0f}, "
                      f"update {ms['update']:.0f})")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"outputs in {spec.out_dir}")
    return 0 if result["ok"] else 1


if __name__ == "__main__":
    sys.exit(main())
