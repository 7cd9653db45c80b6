"""Command-line entry point: ``blochrte {bands,kernel,evolve,oracle,validate}``.

Exit status: 0 success, 1 a validation check failed, 2 configuration error,
3 numerical failure inside a module.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import io
from .config import ConfigError, load_config

log = logging.getLogger("blochrte")

COMMANDS = ("bands", "kernel", "evolve", "oracle", "validate")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blochrte", description="Bloch-band radiative transport toolkit")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="YAML run configuration")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (created if missing)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. --set grid.n_q=64 (repeatable)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for per-q and per-seed work")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run_validate(cfg, out: Path) -> tuple[dict, bool]:
    from .runner import build_case
    from .validation import run_suite

    case = build_case(cfg)
    if case.model is None:
        raise ConfigError("validate needs disorder.enabled = true for the kernel checks")
    checks = run_suite(case.lattice, case.potential, case.model, n_q=cfg.grid.n_q, n_pw=cfg.grid.n_pw)
    h = cfg.content_hash()
    io.write_tsv(out / "checks.tsv", ["check", "value", "threshold", "passed"],
                 [[c.name, c.value, c.threshold, int(c.passed)] for c in checks], h)
    ok = all(c.passed for c in checks)
    report = {"passed": ok, "checks": [c.as_dict() for c in checks]}
    io.write_json(out / "validate_report.json", report, h)
    for c in checks:
        print(c.line())
    return report, ok


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"configuration error:\n{exc}", file=sys.stderr)
        return 2
    if args.threads < 1:
        print("configuration error: --threads must be >= 1", file=sys.stderr)
        return 2
    out = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"cannot create output directory {out}: {exc}", file=sys.stderr)
        return 2

    from . import runner

    ex = runner.executor_for(args.threads)
    t0 = time.perf_counter()
    status = 0
    try:
        if args.command == "validate":
            _, ok = run_validate(cfg, out)
            status = 0 if ok else 1
        else:
            fn = {"bands": runner.run_bands, "kernel": runner.run_kernel,
                  "evolve": runner.run_evolve, "oracle": runner.run_oracle}[args.command]
            fn(cfg, out, ex)
    except ConfigError as exc:
        print(f"configuration error:\n{exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"{args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        status = 3
    finally:
        if ex is not None:
            ex.shutdown()
    io.write_metadata(out, args.command, cfg.content_hash(), {
        "wall_seconds": time.perf_counter() - t0,
        "threads": args.threads,
        "exit_status": status,
        "overrides": overrides,
        "config_path": str(args.config) if args.config else None,
    })
    return status


if __name__ == "__main__":
    sys.exit(main())
