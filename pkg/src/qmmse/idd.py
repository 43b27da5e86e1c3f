"""Iterative detection and decoding for one user and one codeword."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coding import LdpcCode, frame_bits, spa_decode
from .core import ConfigurationError, DimensionError
from .detectors import DETECTORS, LLR_CLAMP, UserStatistics, detect

__all__ = ["IddConfig", "IddTrace", "IddResult", "extract_a_priori", "idd_receive"]


@dataclass(frozen=True)
class IddConfig:
    """`n_iter` counts feedback passes after the first detect and decode.

    ``n_iter = 0`` is the non-iterative receiver; ``n_iter = 2`` runs the
    detector three times and the decoder three times.
    """

    detector: str = "dpa_lm"
    n_iter: int = 2
    decoder_max_iter: int = 50
    llr_clamp: float = LLR_CLAMP
    stop_on_syndrome: bool = True

    def __post_init__(self):
        if self.detector not in DETECTORS:
            raise ConfigurationError(f"unknown detector {self.detector!r}")
        if self.n_iter < 0:
            raise ConfigurationError("n_iter must be >= 0")
        if not self.llr_clamp > 0:
            raise ConfigurationError("llr_clamp must be positive")


@dataclass(frozen=True)
class IddTrace:
    iteration: int
    mean_abs_L_e: float
    mean_abs_L: float
    decoder_iterations: int
    syndrome_ok: bool


@dataclass
class IddResult:
    message: np.ndarray
    codeword: np.ndarray
    L: np.ndarray
    L_e: np.ndarray
    trace: list[IddTrace] = field(default_factory=list)

    @property
    def syndrome_ok(self) -> bool:
        return self.trace[-1].syndrome_ok


def extract_a_priori(L, L_e, clamp: float = LLR_CLAMP) -> np.ndarray:
    """``L_a = L - L_e``, clamped to ``[-clamp, clamp]``."""
    L = np.asarray(L, dtype=float)
    L_e = np.asarray(L_e, dtype=float)
    if L.shape != L_e.shape:
        raise DimensionError(f"shape mismatch {L.shape} vs {L_e.shape}")
    return np.clip(L - L_e, -clamp, clamp)


def idd_receive(z, stats: UserStatistics, code: LdpcCode, cfg: IddConfig = IddConfig()) -> IddResult:
    """Decode one codeword from the received samples `z` of one user.

    The decoder input is the detector's extrinsic output as is: the
    detector never adds its prior back.
    """
    z = np.asarray(z, dtype=complex)
    N = stats.bits_per_symbol
    if z.ndim != 1 or z.size * N != code.n:
        raise DimensionError(f"need {code.n // N} samples for a {code.n}-bit codeword, got {z.shape}")
    L_a = np.zeros((z.size, N))
    trace = []
    for it in range(cfg.n_iter + 1):
        L_e = detect(cfg.detector, z, stats, L_a, cfg.llr_clamp).reshape(-1)
        dec = spa_decode(code, L_e, cfg.decoder_max_iter, cfg.llr_clamp)
        trace.append(IddTrace(it, float(np.mean(np.abs(L_e))), float(np.mean(np.abs(dec.L))),
                              dec.iterations_used, dec.syndrome_ok))
        if it == cfg.n_iter or (cfg.stop_on_syndrome and dec.syndrome_ok):
            break
        L_a = frame_bits(extract_a_priori(dec.L, L_e, cfg.llr_clamp), N)
    return IddResult(dec.hard_bits[code.message_slice].copy(), dec.hard_bits, dec.L, L_e, trace)
