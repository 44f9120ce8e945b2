"""Command-line entry point: ``sim run | validate | oracle``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..baselines import MAP_BUDGET
from .config import ConfigError, builtin_scenarios, load_config
from .oracle import uncoded_comparison
from .sim import sweep, to_csv


def _float_list(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _str_list(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sim", description="EPA multi-user receiver link-level simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-point progress")
    sub = p.add_subparsers(dest="command", required=True)

    cfg_help = "config file, or a built-in scenario name (" + ", ".join(builtin_scenarios()) + ")"
    run = sub.add_parser("run", help="BLER sweep to CSV")
    run.add_argument("--config", required=True, help=cfg_help)
    run.add_argument("--snr-db", type=_float_list, help="comma-separated SNR points overriding the config")
    run.add_argument("--receiver", type=_str_list, help="comma-separated receivers: epa, mmse-pic, map")
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
    run.add_argument("--out", required=True, help="CSV path, or - for stdout")

    val = sub.add_parser("validate", help="check a config and print the resolved scenario")
    val.add_argument("--config", required=True, help=cfg_help)

    orc = sub.add_parser("oracle", help="uncoded EPA / MMSE-PIC / exact-MAP cross-check")
    orc.add_argument("--config", required=True, help=cfg_help)
    orc.add_argument("--snr-db", type=_float_list, help="SNR points (default: the config's)")
    orc.add_argument("--trials", type=int, default=1000, help="symbol vectors per SNR point")
    return p


def _overrides(args) -> dict:
    out = {}
    for key, attr in (("snr_db", "snr_db"), ("receiver", "receiver"), ("trials", "trials"), ("seed", "seed")):
        v = getattr(args, attr, None)
        if v is not None:
            out[key] = v
    return out


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        if args.command == "run":
            cfg = cfg.replace(**_overrides(args))
            if args.workers < 1:
                raise ConfigError("--workers must be at least 1")
            text = to_csv(sweep(cfg, workers=args.workers))
            if args.out == "-":
                sys.stdout.write(text)
            else:
                Path(args.out).write_text(text)
        elif args.command == "validate":
            _ = cfg.codebooks, cfg.graph
            print(f"{args.config}: ok")
            print(f"  scheme={cfg.scheme} K={cfg.K} L={cfg.L} M={cfg.M} N_r={cfg.N_r} d_f={cfg.graph.df_max}")
            print(f"  payload={cfg.payload_bytes} B, coded bits={cfg.code_configs[0].coded_bits}, "
                  f"symbols/block={cfg.n_symbols}")
            print(f"  snr_db={','.join(f'{s:g}' for s in cfg.snr_db)} trials={cfg.trials} "
                  f"receivers={','.join(cfg.receiver)}")
        else:
            if cfg.M**cfg.K > MAP_BUDGET:
                raise ConfigError(f"M**K = {cfg.M**cfg.K} joint hypotheses exceed the exact-MAP budget "
                                  f"of {MAP_BUDGET}; use a smaller K or M")
            for snr in args.snr_db or cfg.snr_db:
                print("\n".join(uncoded_comparison(cfg, snr, args.trials).lines()))
    except (ConfigError, OSError) as exc:
        print(f"sim: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
