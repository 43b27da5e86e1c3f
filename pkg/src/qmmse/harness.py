"""Monte Carlo experiments: uncoded BER, coded BER with IDD, and bound counts.

Every trial draws its own generator from ``(master_seed, trial)``, so the
same trial sees the same channel, data and unit-variance noise at every
SNR point and for every worker count.  Results are merged in trial order.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .coding import encode, frame_bits, load_or_generate_code
from .core import (
    ConfigurationError,
    GrayMapper,
    bits_to_bipolar,
    draw_channel,
    make_alphabet,
    quantize_phase,
    snr_to_sigma_w2,
    transmit_alphabet,
    trial_rng,
)
from .detectors import DETECTORS, compute_statistics
from .idd import IddConfig, idd_receive
from .polytope import build_polyhedron
from .precoders import (
    PRECODERS,
    BranchAndBoundConfig,
    PrecoderCache,
    build_lookup_table,
    mmse_branch_and_bound,
)

__all__ = [
    "MODES",
    "COLUMNS",
    "ExperimentConfig",
    "ResultRow",
    "load_config",
    "config_hash",
    "wilson_interval",
    "run",
    "run_uncoded",
    "run_coded",
    "run_bound_census",
    "emit",
    "read_results",
]

MODES = ("uncoded", "coded", "bounds")
COLUMNS = ("snr_db", "ber", "errors", "bits", "ci_low", "ci_high", "mean_bounds", "mean_mse",
           "seconds", "series", "trials", "config_hash")


@dataclass
class ExperimentConfig:
    """Declarative description of one experiment.

    ``trials`` counts channel blocks per SNR point.  A point stops early
    once every series has at least ``target_errors`` bit errors (``None``
    disables early stopping).
    """

    mode: str = "uncoded"
    K: int = 2
    M: int = 4
    alpha_s: int = 8
    alpha_x: int = 8
    snr_db: list = field(default_factory=lambda: [0.0, 10.0, 20.0])
    precoders: list = field(default_factory=lambda: ["branch_and_bound"])
    detectors: list = field(default_factory=lambda: ["dpa_lm"])
    code: str | None = "default"
    n_iter: int = 2
    decoder_max_iter: int = 50
    trials: int = 100
    target_errors: int | None = 200
    symbols_per_block: int = 50
    master_seed: int = 1
    E_tx: float = 1.0
    sigma_g2: float = 1.0
    bnb: dict = field(default_factory=dict)
    m_sweep: list = field(default_factory=list)
    sweep_snr_db: float = 3.0
    output: str | None = None
    format: str = "csv"
    threads: int = 1

    def __post_init__(self):
        self.snr_db = [float(v) for v in np.atleast_1d(self.snr_db)]
        self.precoders = [str(p) for p in np.atleast_1d(self.precoders)]
        self.detectors = [str(d) for d in np.atleast_1d(self.detectors)]
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.K < 1 or self.M < self.K:
            raise ConfigurationError(f"need 1 <= K <= M, got K={self.K}, M={self.M}")
        make_alphabet(self.alpha_s)
        make_alphabet(self.alpha_x, data=False)
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if self.symbols_per_block < 1:
            raise ConfigurationError("symbols_per_block must be >= 1")
        for p in self.precoders:
            if p not in PRECODERS:
                raise ConfigurationError(f"unknown precoder {p!r}; choose from {PRECODERS}")
        for d in self.detectors:
            if d not in DETECTORS:
                raise ConfigurationError(f"unknown detector {d!r}; choose from {DETECTORS}")
        if self.format not in ("csv", "json"):
            raise ConfigurationError("format must be csv or json")
        if self.n_iter < 0:
            raise ConfigurationError("n_iter must be >= 0")
        if self.mode == "coded" and self.code is None:
            raise ConfigurationError("coded runs need a code")
        try:
            BranchAndBoundConfig(**self.bnb)
        except TypeError as exc:
            raise ConfigurationError(f"bad bnb settings: {exc}") from exc

    @property
    def bnb_config(self) -> BranchAndBoundConfig:
        return BranchAndBoundConfig(**self.bnb)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path=None, overrides: dict | None = None, **flags) -> ExperimentConfig:
    """Read a YAML file, then apply `overrides` verbatim and non-``None`` `flags`."""
    data = {}
    if path is not None:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: top level must be a mapping")
    data.update(overrides or {})
    data.update({k: v for k, v in flags.items() if v is not None})
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**data)


def config_hash(cfg: ExperimentConfig) -> str:
    """Hash of everything that affects the numbers (not output or worker count)."""
    d = cfg.to_dict()
    for key in ("output", "format", "threads"):
        d.pop(key)
    blob = json.dumps(d, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def wilson_interval(errors: int, n: int, z: float = 1.959963984540054):
    if n == 0:
        return float("nan"), float("nan")
    p = errors / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class ResultRow:
    snr_db: float
    errors: int
    bits: int
    mean_bounds: float
    mean_mse: float
    seconds: float
    series: str = ""
    trials: int = 0
    config_hash: str = ""

    @property
    def ber(self) -> float:
        return self.errors / self.bits if self.bits else float("nan")

    @property
    def ci(self):
        return wilson_interval(self.errors, self.bits)

    def as_dict(self) -> dict:
        lo, hi = self.ci
        return {"snr_db": self.snr_db, "ber": self.ber, "errors": self.errors, "bits": self.bits,
                "ci_low": lo, "ci_high": hi, "mean_bounds": self.mean_bounds,
                "mean_mse": self.mean_mse, "seconds": self.seconds, "series": self.series,
                "trials": self.trials, "config_hash": self.config_hash}


@dataclass
class _Tally:
    errors: int = 0
    bits: int = 0
    bounds: float = 0.0
    solves: int = 0
    mse: float = 0.0
    mse_count: int = 0

    def add(self, other: dict) -> None:
        self.errors += int(other.get("errors", 0))
        self.bits += int(other.get("bits", 0))
        self.bounds += float(other.get("bounds", 0.0))
        self.solves += int(other.get("solves", 0))
        self.mse += float(other.get("mse", 0.0))
        self.mse_count += int(other.get("mse_count", 0))


# ---------------------------------------------------------------------------
# trials (module level so worker processes can pickle them)

def _uncoded_trial(cfg: ExperimentConfig, snr_db: float, trial: int) -> dict:
    rng = trial_rng(cfg.master_seed, trial)
    L = cfg.symbols_per_block
    H = draw_channel(cfg.K, cfg.M, rng, sigma_g2=cfg.sigma_g2).H
    s_idx = rng.integers(0, cfg.alpha_s, size=(L, cfg.K))
    w = (rng.standard_normal((L, cfg.K)) + 1j * rng.standard_normal((L, cfg.K))) / math.sqrt(2)
    sigma_w2 = snr_to_sigma_w2(snr_db, cfg.E_tx)
    S = make_alphabet(cfg.alpha_s)
    labels = GrayMapper(S).labels
    X = transmit_alphabet(cfg.alpha_x, cfg.M, cfg.E_tx).points
    out = {}
    for name in cfg.precoders:
        cache = PrecoderCache(H, sigma_w2, cfg.alpha_s, cfg.alpha_x, name, cfg.bnb_config,
                              cfg.E_tx)
        x = np.empty((L, cfg.M), dtype=complex)
        mse = 0.0
        for t in range(L):
            x_idx, _, m, _, _, _ = cache.lookup(s_idx[t])
            x[t] = X[x_idx]
            mse += m
        z = x @ H.T + math.sqrt(sigma_w2) * w
        det = quantize_phase(z, S)
        errors = int(np.sum(labels[det] != labels[s_idx]))
        solves = cache.solves if name == "branch_and_bound" else 0
        out[name] = {"errors": errors, "bits": labels.shape[1] * L * cfg.K,
                     "bounds": cache.bounds_evaluated, "solves": solves, "mse": mse,
                     "mse_count": L}
    return out


_CODE_CACHE: dict = {}


def _code(cfg):
    key = cfg.code
    if key not in _CODE_CACHE:
        _CODE_CACHE[key] = load_or_generate_code(cfg.code)
    return _CODE_CACHE[key]


def _coded_trial(cfg: ExperimentConfig, snr_db: float, trial: int) -> dict:
    code = _code(cfg)
    S = make_alphabet(cfg.alpha_s)
    mapper = GrayMapper(S)
    N = mapper.bits_per_symbol
    if code.n % N:
        raise ConfigurationError(f"codeword length {code.n} is not a multiple of {N} bits")
    T = code.n // N
    rng = trial_rng(cfg.master_seed, trial)
    H = draw_channel(cfg.K, cfg.M, rng, sigma_g2=cfg.sigma_g2).H
    msg = rng.integers(0, 2, size=(cfg.K, code.k)).astype(np.uint8)
    w = (rng.standard_normal((T, cfg.K)) + 1j * rng.standard_normal((T, cfg.K))) / math.sqrt(2)
    sigma_w2 = snr_to_sigma_w2(snr_db, cfg.E_tx)
    cw = encode(code, msg)
    s_idx = mapper.index(bits_to_bipolar(frame_bits(cw, N))).T  # (T, K)
    out = {}
    for pre in cfg.precoders:
        table = build_lookup_table(H, sigma_w2, pre, alpha_s=cfg.alpha_s, alpha_x=cfg.alpha_x,
                                   config=cfg.bnb_config, E_tx=cfg.E_tx)
        rows = table.rows(s_idx)
        z = table.x[rows] @ H.T + math.sqrt(sigma_w2) * w
        bounds = float(table.bounds.sum())
        solves = int(np.count_nonzero(table.bounds)) if pre == "branch_and_bound" else 0
        mse = float(table.mse[rows].sum())
        stats = [compute_statistics(table, H, sigma_w2, k) for k in range(cfg.K)]
        for det in cfg.detectors:
            icfg = IddConfig(det, cfg.n_iter, cfg.decoder_max_iter)
            errors = 0
            for k in range(cfg.K):
                res = idd_receive(z[:, k], stats[k], code, icfg)
                errors += int(np.sum(res.message != msg[k]))
            out[_series(cfg, pre, det)] = {"errors": errors, "bits": cfg.K * code.k,
                                          "bounds": bounds, "solves": solves, "mse": mse,
                                          "mse_count": T}
    return out


def _series(cfg, pre, det):
    if len(cfg.precoders) == 1:
        return det
    return f"{pre}/{det}"


def _bounds_trial(cfg: ExperimentConfig, snr_db: float, trial: int, M: int | None = None) -> dict:
    M = cfg.M if M is None else M
    rng = trial_rng(cfg.master_seed, trial)
    H = draw_channel(cfg.K, M, rng, sigma_g2=cfg.sigma_g2).H
    s = make_alphabet(cfg.alpha_s).points[rng.integers(0, cfg.alpha_s, size=cfg.K)]
    poly = build_polyhedron(M, cfg.alpha_x, cfg.E_tx)
    sol = mmse_branch_and_bound(H, s, snr_to_sigma_w2(snr_db, cfg.E_tx), poly, cfg.bnb_config)
    return {"branch_and_bound": {"bounds": sol.bounds_evaluated, "solves": 1, "mse": sol.mse,
                                 "mse_count": 1}}


def _run_batch(args):
    fn, cfg, snr, trials, extra = args
    return [fn(cfg, snr, t, *extra) for t in trials]


# ---------------------------------------------------------------------------
# drivers

def _sweep_point(cfg, fn, snr, pool, extra=(), use_target=True):
    tallies: dict[str, _Tally] = {}
    t0 = time.perf_counter()
    batch = max(1, cfg.threads) * 4
    done = 0
    stop = False
    while done < cfg.trials and not stop:
        idx = list(range(done, min(cfg.trials, done + batch)))
        if pool is None:
            results = _run_batch((fn, cfg, snr, idx, extra))
        else:
            chunks = [idx[i::cfg.threads] for i in range(cfg.threads)]
            parts = list(pool.map(_run_batch, [(fn, cfg, snr, c, extra) for c in chunks]))
            by_trial = {}
            for c, part in zip(chunks, parts):
                by_trial.update(zip(c, part))
            results = [by_trial[t] for t in idx]
        for res in results:
            for name, vals in res.items():
                tallies.setdefault(name, _Tally()).add(vals)
            done += 1
            if (use_target and cfg.target_errors is not None
                    and all(t.errors >= cfg.target_errors for t in tallies.values())):
                stop = True
                break
    return tallies, done, time.perf_counter() - t0


def _rows(cfg, tallies, snr, trials, seconds, label_prefix=""):
    h = config_hash(cfg)
    rows = []
    for name, t in tallies.items():
        rows.append(ResultRow(
            snr_db=float(snr), errors=t.errors, bits=t.bits,
            mean_bounds=t.bounds / t.solves if t.solves else float("nan"),
            mean_mse=t.mse / t.mse_count if t.mse_count else float("nan"),
            seconds=seconds, series=label_prefix + name, trials=trials, config_hash=h))
    return rows


def _pool(cfg):
    return ProcessPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None


def run_uncoded(cfg: ExperimentConfig) -> list[ResultRow]:
    rows = []
    pool = _pool(cfg)
    try:
        for snr in cfg.snr_db:
            tallies, n, sec = _sweep_point(cfg, _uncoded_trial, snr, pool)
            rows += _rows(cfg, tallies, snr, n, sec)
    finally:
        if pool is not None:
            pool.shutdown()
    return rows


def run_coded(cfg: ExperimentConfig) -> list[ResultRow]:
    if cfg.code is None:
        raise ConfigurationError("coded runs need a code")
    rows = []
    pool = _pool(cfg)
    try:
        for snr in cfg.snr_db:
            tallies, n, sec = _sweep_point(cfg, _coded_trial, snr, pool)
            rows += _rows(cfg, tallies, snr, n, sec)
    finally:
        if pool is not None:
            pool.shutdown()
    return rows


def run_bound_census(cfg: ExperimentConfig) -> list[ResultRow]:
    """Mean bound count per SNR and, if ``m_sweep`` is set, per antenna count."""
    rows = []
    pool = _pool(cfg)
    try:
        for snr in cfg.snr_db:
            tallies, n, sec = _sweep_point(cfg, _bounds_trial, snr, pool, use_target=False)
            rows += _rows(cfg, tallies, snr, n, sec)
            rows.append(_reference_row(cfg, snr, cfg.M))
        for M in cfg.m_sweep:
            if M < cfg.K:
                raise ConfigurationError(f"sweep value M={M} is below K={cfg.K}")
            tallies, n, sec = _sweep_point(cfg, _bounds_trial, cfg.sweep_snr_db, pool, (M,),
                                           use_target=False)
            rows += _rows(cfg, tallies, cfg.sweep_snr_db, n, sec, f"M={M}/")
            rows.append(_reference_row(cfg, cfg.sweep_snr_db, M, f"M={M}/"))
    finally:
        if pool is not None:
            pool.shutdown()
    return rows


def _reference_row(cfg, snr, M, prefix=""):
    return ResultRow(float(snr), 0, 0, float(cfg.alpha_x) ** M, float("nan"), 0.0,
                     prefix + "exhaustive", 0, config_hash(cfg))


def run(cfg: ExperimentConfig) -> list[ResultRow]:
    return {"uncoded": run_uncoded, "coded": run_coded, "bounds": run_bound_census}[cfg.mode](cfg)


# ---------------------------------------------------------------------------
# output

def emit(rows: list[ResultRow], path, fmt: str | None = None) -> Path:
    """Write rows as CSV or JSON; columns follow :data:`COLUMNS`."""
    if not rows:
        raise ValueError("no results to write")
    path = Path(path)
    fmt = fmt or ("json" if path.suffix == ".json" else "csv")
    records = [r.as_dict() for r in rows]
    try:
        if fmt == "json":
            clean = [{k: (None if isinstance(v, float) and math.isnan(v) else v)
                      for k, v in rec.items()} for rec in records]
            path.write_text(json.dumps(clean, indent=2) + "\n", encoding="utf-8")
        elif fmt == "csv":
            with open(path, "w", newline="", encoding="utf-8") as fh:
                wr = csv.DictWriter(fh, fieldnames=COLUMNS, lineterminator="\n")
                wr.writeheader()
                for rec in records:
                    wr.writerow({k: (repr(v) if isinstance(v, float) else v)
                                 for k, v in rec.items()})
        else:
            raise ConfigurationError(f"unknown output format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def read_results(path) -> list[dict]:
    """Load rows written by :func:`emit` back into dictionaries."""
    path = Path(path)
    if path.suffix == ".json":
        recs = json.loads(path.read_text(encoding="utf-8"))
        return [{k: (float("nan") if v is None else v) for k, v in r.items()} for r in recs]
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            row = {}
            for k, v in rec.items():
                if k in ("errors", "bits", "trials"):
                    row[k] = int(v)
                elif k in ("series", "config_hash"):
                    row[k] = v
                else:
                    row[k] = float(v)
            out.append(row)
    return out
