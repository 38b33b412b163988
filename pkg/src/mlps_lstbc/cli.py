"""Command-line entry point: ``mlps-lstbc <subcommand> [options]``.

Exit status is 0 on success, 2 for a bad configuration and 3 for a
configuration the simulator cannot run (e.g. an oversized MLSE trellis).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np

from .analysis import det_bound_batch
from .channel import ChannelModel
from .codec import CodeParams
from .errors import ConfigError, InfeasibleConfigError
from .harness import (
    PowerSweep,
    SimConfig,
    config_from_dict,
    format_records,
    load_config,
    run_diversity,
    run_figure1,
    run_rate_report,
    run_sweep,
)

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 2, 3


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    return str(o)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, default=_json_default) + "\n"


def _write(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _sidecar(out: Optional[str], suffix: str) -> Optional[Path]:
    return None if out is None else Path(out).with_suffix(suffix)


def _with_seed(cfg: SimConfig, seed: Optional[int]) -> SimConfig:
    if seed is None:
        return cfg
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("--seed must be an unsigned 64-bit integer")
    return dataclasses.replace(cfg, master_seed=seed)


def _raw(args) -> Dict[str, Any]:
    return load_config(args.config) if args.config else {}


def _diversity_defaults() -> Dict[str, Any]:
    return {
        "code": CodeParams(2, 2),
        "channel": ChannelModel(clip_level_dbm=None, lpf=None, fading="RAYLEIGH_MAGNITUDE"),
        "power_sweep_dbm": PowerSweep(-5.0, 5.0, 2.5),
        "min_bit_errors": 10 ** 12,
        "max_bits": 10 ** 6,
    }


def _cmd_sweep(args) -> int:
    cfg = _with_seed(config_from_dict(_raw(args)), args.seed)
    _write(format_records(run_sweep(cfg, args.jobs), args.format), args.out)
    return EXIT_OK


def _cmd_figure1(args) -> int:
    raw = _raw(args)
    unknown = set(raw) - {"mlps", "ofdm", "shared"}
    if unknown:
        raise ConfigError(f"figure1 config takes mlps/ofdm/shared sections, got {sorted(unknown)}")
    shared = raw.get("shared") or {}
    mlps = config_from_dict({**shared, "scheme": "MLPS_LSTBC", **(raw.get("mlps") or {})})
    ofdm = config_from_dict({**shared, "scheme": "DCO_OFDM", **(raw.get("ofdm") or {})})
    result = run_figure1(_with_seed(mlps, args.seed), _with_seed(ofdm, args.seed), args.jobs)
    _write(format_records(result["records"], args.format), args.out)
    summary = _dumps(result["summary"])
    side = _sidecar(args.out, ".summary.json")
    if side is None:
        sys.stderr.write(summary)
    else:
        side.write_text(summary)
    return EXIT_OK


def _cmd_rates(args) -> int:
    cfg = _with_seed(config_from_dict(_raw(args)), args.seed)
    reports = run_rate_report(args.n, args.m, cfg, args.jobs, simulate=not args.no_sim)
    rows = [r.to_dict() for r in reports]
    if args.format == "csv":
        cols = list(rows[0])
        lines = [",".join(cols)] + [",".join(str(r[c]) for c in cols) for r in rows]
        _write("\n".join(lines) + "\n", args.out)
    else:
        _write(_dumps({"reports": rows}), args.out)
    return EXIT_OK


def _cmd_bounds(args) -> int:
    seed = 0 if args.seed is None else args.seed
    rng = np.random.default_rng(seed)
    rows = [det_bound_batch(n, m, args.count, rng)
            for n in range(1, args.n_max + 1) for m in range(1, args.m_max + 1)]
    ok = all(r["upper_violations"] == 0 and r["max_homogeneity_rel_error"] <= 1e-10 for r in rows)
    _write(_dumps({"seed": seed, "count": args.count, "all_pass": ok, "batches": rows}), args.out)
    return EXIT_OK


def _cmd_diversity(args) -> int:
    raw = _raw(args)
    base = _diversity_defaults()
    cfg = config_from_dict(raw)
    cfg = dataclasses.replace(cfg, **{k: v for k, v in base.items() if k not in raw})
    cfg = _with_seed(cfg, args.seed)
    result = run_diversity(cfg, tuple(args.fit), args.jobs)
    _write(format_records(result["records"], args.format), args.out)
    summary = _dumps({k: v for k, v in result.items() if k != "records"})
    side = _sidecar(args.out, ".slope.json")
    if side is None:
        sys.stderr.write(summary)
    else:
        side.write_text(summary)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON file keyed by SimConfig field names")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweep points")

    p = argparse.ArgumentParser(prog="mlps-lstbc", description="Layered space-time code VLC simulator")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("sweep", parents=[common], help="BER against power for one configuration")
    sub.add_parser("figure1", parents=[common], help="MLPS vs DCO-OFDM comparison with summary")
    r = sub.add_parser("rates", parents=[common], help="rate accounting and FEC check per (N, M)")
    r.add_argument("--n", type=int, nargs="+", default=[1, 16, 32])
    r.add_argument("--m", type=int, nargs="+", default=[1, 32, 32])
    r.add_argument("--no-sim", action="store_true", help="rates only, skip the BER sweep")
    b = sub.add_parser("bounds", parents=[common], help="determinant bound checks over random gains")
    b.add_argument("--n-max", type=int, default=8)
    b.add_argument("--m-max", type=int, default=8)
    b.add_argument("--count", type=int, default=1000)
    d = sub.add_parser("diversity", parents=[common], help="BER over fading and slope fit")
    d.add_argument("--fit", type=float, nargs=2, default=[15.0, 25.0], metavar=("LO_DB", "HI_DB"))
    return p


_COMMANDS = {
    "sweep": _cmd_sweep,
    "figure1": _cmd_figure1,
    "rates": _cmd_rates,
    "bounds": _cmd_bounds,
    "diversity": _cmd_diversity,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _COMMANDS[args.command](args)
    except InfeasibleConfigError as exc:
        print(f"infeasible configuration: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
