"""Soft detectors for receivers behind a discrete (lookup-table) precoder.

Four extrinsic LLR rules are provided, all evaluated in the log domain:

* ``dpa``     exact mixture over the interfering users' symbols,
* ``gdpa``    one Gaussian per data symbol with the exact first two moments,
* ``dpa_lm``  scalar linear model ``z = h_eff s + eps + w``,
* ``awgn``    the conventional rule that ignores precoding distortion.

LLR sign convention: positive values favour bit ``+1`` (binary 0).
Exponents use ``|z - m|^2 / sigma^2`` for complex distances, matching a
circular complex Gaussian with variance ``sigma^2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfigurationError, DimensionError, GrayMapper, make_alphabet

__all__ = [
    "LLR_CLAMP",
    "DETECTORS",
    "UserStatistics",
    "LlrBlock",
    "compute_statistics",
    "conditional_error_mean",
    "prior_log_terms",
    "llr_dpa",
    "llr_gdpa",
    "llr_dpa_lm",
    "llr_awgn_baseline",
    "detect",
]

LLR_CLAMP = 50.0
DETECTORS = ("dpa", "gdpa", "dpa_lm", "awgn")

# exact mixtures above this many terms per symbol are refused by default
DPA_MAX_TERMS = 32768


@dataclass(frozen=True)
class UserStatistics:
    """Receive-side parameters of one user for a fixed channel and table.

    ``zeta[s, j]`` is the noiseless receive value ``h_k x(s)`` for the
    ``j``-th data vector whose entry ``k`` is symbol ``s``.
    """

    k: int
    alpha_s: int
    sigma_w2: float
    mean: np.ndarray        # (alpha_s, 2)
    cov: np.ndarray         # (alpha_s, 2, 2)
    h_eff: complex
    lambda2: float
    zeta: np.ndarray        # (alpha_s, alpha_s**(K-1)) complex

    @property
    def sigma_eff2(self) -> float:
        return self.lambda2 + self.sigma_w2

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.alpha_s))

    def as_arrays(self) -> dict:
        return {
            "k": np.array(self.k),
            "alpha_s": np.array(self.alpha_s),
            "sigma_w2": np.array(self.sigma_w2),
            "mean": self.mean,
            "cov": self.cov,
            "h_eff": np.array(self.h_eff),
            "lambda2": np.array(self.lambda2),
            "zeta": self.zeta,
        }

    @classmethod
    def from_arrays(cls, d: dict) -> "UserStatistics":
        return cls(int(np.real(d["k"])), int(np.real(d["alpha_s"])), float(np.real(d["sigma_w2"])),
                   np.asarray(d["mean"], dtype=float), np.asarray(d["cov"], dtype=float),
                   complex(np.asarray(d["h_eff"]).ravel()[0]),
                   float(np.real(d["lambda2"])), np.asarray(d["zeta"], dtype=complex))

    def with_noise(self, sigma_w2: float) -> "UserStatistics":
        """Same distortion statistics for a different noise variance."""
        cov = self.cov.copy()
        cov[:, 0, 0] += (sigma_w2 - self.sigma_w2) / 2
        cov[:, 1, 1] += (sigma_w2 - self.sigma_w2) / 2
        return UserStatistics(self.k, self.alpha_s, float(sigma_w2), self.mean, cov, self.h_eff,
                              self.lambda2, self.zeta)


@dataclass
class LlrBlock:
    """LLRs of one user over a block, shape (slots, bits per symbol)."""

    L_e: np.ndarray
    L_a: np.ndarray

    @property
    def L(self) -> np.ndarray:
        return self.L_e + self.L_a


def compute_statistics(table, H, sigma_w2: float, k: int) -> UserStatistics:
    """Exact moments of ``z_k`` given user `k`'s symbol, by enumeration of the table."""
    H = np.asarray(H, dtype=complex)
    K, M = H.shape
    if (K, M) != (table.K, table.M):
        raise DimensionError(f"channel {H.shape} does not match table ({table.K}, {table.M})")
    if not 0 <= k < K:
        raise DimensionError(f"user index {k} out of range for K={K}")
    n = table.alpha_s ** K
    if table.x_index.shape[0] != n or np.any(table.x_index < 0):
        raise ConfigurationError("lookup table is incomplete")
    x = table.x
    zeta_all = x @ H[k]
    s_idx = table.symbol_indices()
    order = np.argsort(s_idx[:, k], kind="stable")
    zeta = zeta_all[order].reshape(table.alpha_s, -1)

    zr = np.stack([zeta.real, zeta.imag], axis=-1)
    mean = zr.mean(axis=1)
    dev = zr - mean[:, None, :]
    cov = np.einsum("sji,sjl->sil", dev, dev) / zeta.shape[1]
    cov[:, 0, 0] += sigma_w2 / 2
    cov[:, 1, 1] += sigma_w2 / 2

    S = make_alphabet(table.alpha_s).points
    s_k = S[s_idx[:, k]]
    h_eff = complex(np.mean(np.conj(s_k) * zeta_all))
    # h Lambda_x h^H is the mean receive power
    lam = float(np.mean(np.abs(zeta_all) ** 2) - abs(h_eff) ** 2)
    return UserStatistics(int(k), table.alpha_s, float(sigma_w2), mean, cov, h_eff,
                          max(lam, 0.0), zeta)


def conditional_error_mean(stats: UserStatistics) -> np.ndarray:
    """``E{h_k x(s) - h_eff s_k | s_k = s}`` for every data symbol."""
    S = make_alphabet(stats.alpha_s).points
    return stats.zeta.mean(axis=1) - stats.h_eff * S


# ---------------------------------------------------------------------------
# priors

def _labels(alpha_s: int) -> np.ndarray:
    return GrayMapper(make_alphabet(alpha_s)).labels.astype(float)


def prior_log_terms(priors, labels) -> np.ndarray:
    """``log P(a_l)`` for every symbol and bit: ``a La - log(1 + e^{a La})``.

    `priors` has shape (T, N) and `labels` (alpha, N); the result has shape
    (T, alpha, N).
    """
    aL = labels[None, :, :] * np.asarray(priors, dtype=float)[:, None, :]
    return aL - np.logaddexp(0.0, aL)


def _extrinsic(loglik, priors, labels, clamp: float) -> np.ndarray:
    """Combine symbol log-likelihoods (T, alpha) with bit priors into L_e (T, N)."""
    T, alpha = loglik.shape
    N = labels.shape[1]
    if priors is None:
        priors = np.zeros((T, N))
    priors = np.asarray(priors, dtype=float)
    if priors.shape != (T, N):
        raise DimensionError(f"priors must have shape {(T, N)}, got {priors.shape}")
    lp = prior_log_terms(priors, labels)
    total = lp.sum(axis=2)
    out = np.empty((T, N))
    for v in range(N):
        metric = loglik + total - lp[:, :, v]
        plus = labels[:, v] > 0
        out[:, v] = (_lse(metric[:, plus], axis=1) - _lse(metric[:, ~plus], axis=1))
    return np.clip(out, -clamp, clamp)


def _lse(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(a - m), axis=axis))


def _as_slots(z):
    z = np.asarray(z, dtype=complex)
    return np.atleast_1d(z), z.ndim == 0


def _finish(out, scalar):
    return out[0] if scalar else out


# ---------------------------------------------------------------------------
# detectors

def llr_dpa(z, stats: UserStatistics, priors=None, clamp: float = LLR_CLAMP,
            allow_large: bool = False, chunk: int = 1 << 20) -> np.ndarray:
    """Exact extrinsic LLRs, mixing over every interferer configuration."""
    zs, scalar = _as_slots(z)
    terms = stats.zeta.shape[1]
    if terms > DPA_MAX_TERMS and not allow_large:
        raise ConfigurationError(
            f"exact detector needs {terms} terms per symbol; pass allow_large=True to proceed"
        )
    loglik = np.empty((zs.size, stats.alpha_s))
    step = max(1, chunk // (terms * stats.alpha_s))
    for a in range(0, zs.size, step):
        d = np.abs(zs[a:a + step, None, None] - stats.zeta[None]) ** 2
        loglik[a:a + step] = _lse(-d / stats.sigma_w2, axis=2)
    return _finish(_extrinsic(loglik, _slot_priors(priors, scalar), _labels(stats.alpha_s),
                              clamp), scalar)


def llr_gdpa(z, stats: UserStatistics, priors=None, clamp: float = LLR_CLAMP) -> np.ndarray:
    """Gaussian approximation with the exact conditional mean and covariance."""
    zs, scalar = _as_slots(z)
    zr = np.stack([zs.real, zs.imag], axis=-1)
    c = stats.cov
    det = c[:, 0, 0] * c[:, 1, 1] - c[:, 0, 1] * c[:, 1, 0]
    inv = np.empty_like(c)
    inv[:, 0, 0] = c[:, 1, 1] / det
    inv[:, 1, 1] = c[:, 0, 0] / det
    inv[:, 0, 1] = -c[:, 0, 1] / det
    inv[:, 1, 0] = -c[:, 1, 0] / det
    e = zr[:, None, :] - stats.mean[None]
    psi = -0.5 * np.einsum("tsi,sij,tsj->ts", e, inv, e)
    loglik = psi - 0.5 * np.log(det)[None]
    return _finish(_extrinsic(loglik, _slot_priors(priors, scalar), _labels(stats.alpha_s),
                              clamp), scalar)


def llr_dpa_lm(z, stats: UserStatistics, priors=None, clamp: float = LLR_CLAMP,
               h_eff: complex | None = None, sigma_eff2: float | None = None) -> np.ndarray:
    """Linear-model LLRs with effective gain and distortion-inflated noise.

    `h_eff` and `sigma_eff2` override the values stored in `stats`.
    """
    h = stats.h_eff if h_eff is None else h_eff
    s2 = stats.sigma_eff2 if sigma_eff2 is None else sigma_eff2
    if not s2 > 0:
        raise ConfigurationError("effective noise variance must be positive")
    return _scalar_model(z, h, s2, stats.alpha_s, priors, clamp)


def llr_awgn_baseline(z, sigma_w2: float, priors=None, alpha_s: int = 8,
                      clamp: float = LLR_CLAMP) -> np.ndarray:
    """Conventional rule: ``z`` is treated as ``s`` plus white noise."""
    return _scalar_model(z, 1.0, sigma_w2, alpha_s, priors, clamp)


def _scalar_model(z, h, s2, alpha_s, priors, clamp):
    zs, scalar = _as_slots(z)
    S = make_alphabet(alpha_s).points
    loglik = -np.abs(zs[:, None] - h * S[None]) ** 2 / s2
    return _finish(_extrinsic(loglik, _slot_priors(priors, scalar), _labels(alpha_s), clamp),
                   scalar)


def _slot_priors(priors, scalar):
    if priors is None:
        return None
    priors = np.asarray(priors, dtype=float)
    return priors[None] if scalar else priors


def detect(name: str, z, stats: UserStatistics, priors=None, clamp: float = LLR_CLAMP):
    """Dispatch to one of :data:`DETECTORS` by name."""
    if name == "dpa":
        return llr_dpa(z, stats, priors, clamp)
    if name == "gdpa":
        return llr_gdpa(z, stats, priors, clamp)
    if name == "dpa_lm":
        return llr_dpa_lm(z, stats, priors, clamp)
    if name == "awgn":
        return llr_awgn_baseline(z, stats.sigma_w2, priors, stats.alpha_s, clamp)
    raise ConfigurationError(f"unknown detector {name!r}; choose from {DETECTORS}")
