"""Command line entry point: ``qmmse {uncoded,coded,bounds,table}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from .core import ConfigurationError, draw_channel, snr_to_sigma_w2, trial_rng
from .detectors import compute_statistics
from .harness import config_hash, emit, load_config, run
from .precoders import build_lookup_table, save_table

log = logging.getLogger("qmmse")


def _parse_set(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(value)
    return out


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="YAML experiment file")
    p.add_argument("--seed", type=int, dest="master_seed", help="master seed")
    p.add_argument("--threads", type=int, help="worker processes")
    p.add_argument("--out", dest="output", help="result file (.csv or .json)")
    p.add_argument("--snr", type=float, nargs="+", dest="snr_db", help="SNR points in dB")
    p.add_argument("--trials", type=int, help="channel blocks per SNR point")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key (value parsed as YAML)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qmmse", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (("uncoded", "uncoded BER with phase-quantizer detection"),
                       ("coded", "LDPC-coded BER with iterative detection and decoding"),
                       ("bounds", "mean number of evaluated bounds of the B&B precoder")):
        _common(sub.add_parser(name, help=text))
    t = sub.add_parser("table", help="build and dump the lookup table of one channel")
    _common(t)
    t.add_argument("--trial", type=int, default=0, help="which trial's channel to use")
    return ap


def _config(args, mode):
    flags = dict(master_seed=args.master_seed, threads=args.threads, output=args.output,
                 snr_db=args.snr_db, trials=args.trials)
    if mode != "table":
        flags["mode"] = mode
    return load_config(args.config, _parse_set(args.set), **flags)


def _table(cfg, trial: int, out) -> Path:
    rng = trial_rng(cfg.master_seed, trial)
    H = draw_channel(cfg.K, cfg.M, rng, sigma_g2=cfg.sigma_g2).H
    sigma_w2 = snr_to_sigma_w2(cfg.snr_db[0], cfg.E_tx)
    table = build_lookup_table(H, sigma_w2, cfg.precoders[0], alpha_s=cfg.alpha_s,
                               alpha_x=cfg.alpha_x, config=cfg.bnb_config, E_tx=cfg.E_tx)
    stats = [compute_statistics(table, H, sigma_w2, k) for k in range(cfg.K)]
    path = Path(out or "table.csv")
    save_table(table, path, stats=stats)
    return path


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _config(args, args.command)
        if args.command == "table":
            path = _table(cfg, args.trial, cfg.output)
            print(f"wrote {path}")
            return 0
        log.info("config %s", config_hash(cfg))
        rows = run(cfg)
    except ConfigurationError as exc:
        print(f"qmmse: {exc}", file=sys.stderr)
        return 2
    if cfg.output:
        emit(rows, cfg.output, cfg.format if not cfg.output.endswith(".json") else "json")
        print(f"wrote {cfg.output}")
    else:
        for r in rows:
            d = r.as_dict()
            print(f"{d['series']:>24s}  snr={d['snr_db']:6.2f}  ber={d['ber']:.4e}  "
                  f"errors={d['errors']}  bits={d['bits']}  bounds={d['mean_bounds']:.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
