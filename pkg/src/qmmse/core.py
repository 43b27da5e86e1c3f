"""PSK alphabets, Gray mapping, Rayleigh channels and real-valued stacking.

Bits exchanged with the channel code live in {-1, +1}.  The binary
dictionary used for file and CLI I/O is ``c = 1 - 2 b``: binary 0 is +1,
binary 1 is -1, so a positive LLR favours binary 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConfigurationError",
    "DimensionError",
    "PskAlphabet",
    "GrayMapper",
    "ChannelRealization",
    "make_alphabet",
    "transmit_alphabet",
    "draw_channel",
    "stack_real",
    "stack_real_matrix",
    "unstack",
    "snr_to_sigma_w2",
    "quantize_phase",
    "bits_to_bipolar",
    "bipolar_to_bits",
    "trial_rng",
]


class ConfigurationError(ValueError):
    """Raised for invalid alphabet or system configuration."""


class DimensionError(ValueError):
    """Raised when array shapes do not match the operation."""


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class PskAlphabet:
    """Uniform PSK alphabet with points ``amplitude * exp(j*pi*(2i+1)/alpha)``.

    Point ``p`` of :attr:`points` corresponds to ``i = p + 1``, so the
    points are ordered by increasing phase index.
    """

    cardinality: int
    amplitude: float
    points: np.ndarray = field(repr=False, compare=False)

    @property
    def phases(self) -> np.ndarray:
        return np.angle(self.points)

    @property
    def step(self) -> float:
        """Phase spacing between neighbouring points."""
        return 2.0 * np.pi / self.cardinality

    def __len__(self) -> int:
        return self.cardinality

    def nearest(self, values) -> np.ndarray:
        """Index of the nearest point (Euclidean) for each entry of `values`.

        Exact ties are resolved towards the lowest index.
        """
        values = np.asarray(values)
        d = np.abs(values[..., None] - self.points) ** 2
        return np.argmin(d, axis=-1)


def make_alphabet(cardinality: int, amplitude: float = 1.0, data: bool = True) -> PskAlphabet:
    """Build the PSK alphabet of the given cardinality.

    Parameters
    ----------
    cardinality : int
        Number of points, ``alpha``.
    amplitude : float
        Magnitude of every point: 1 for data symbols, ``sqrt(E_tx / M)``
        for transmit symbols.
    data : bool
        Data alphabets must have a power-of-two cardinality (Gray mapped).
    """
    cardinality = int(cardinality)
    if cardinality < 2:
        raise ConfigurationError(f"alphabet cardinality must be >= 2, got {cardinality}")
    if data and not _is_power_of_two(cardinality):
        raise ConfigurationError(
            f"data alphabet cardinality must be a power of two, got {cardinality}"
        )
    if not amplitude > 0:
        raise ConfigurationError(f"amplitude must be positive, got {amplitude}")
    i = np.arange(1, cardinality + 1)
    points = amplitude * np.exp(1j * np.pi * (2 * i + 1) / cardinality)
    points.setflags(write=False)
    return PskAlphabet(cardinality, float(amplitude), points)


def transmit_alphabet(alpha_x: int, M: int, E_tx: float = 1.0) -> PskAlphabet:
    """Constant-envelope transmit alphabet with per-antenna energy ``E_tx / M``."""
    return make_alphabet(alpha_x, np.sqrt(E_tx / M), data=False)


class GrayMapper:
    """Binary-reflected Gray labelling of a data alphabet.

    The point at phase position ``p`` carries the label ``p ^ (p >> 1)``,
    written MSB first.  Labels are stored in bipolar form (+1 for binary 0).
    """

    def __init__(self, alphabet: PskAlphabet):
        n = alphabet.cardinality
        if not _is_power_of_two(n):
            raise ConfigurationError("Gray mapping needs a power-of-two alphabet")
        self.alphabet = alphabet
        self.bits_per_symbol = int(np.log2(n))
        p = np.arange(n)
        gray = p ^ (p >> 1)
        shifts = np.arange(self.bits_per_symbol - 1, -1, -1)
        binary = (gray[:, None] >> shifts) & 1
        #: bipolar label of every alphabet index, shape (alpha, N)
        self.labels = (1 - 2 * binary).astype(np.int8)
        self.labels.setflags(write=False)
        self._index_of_gray = np.argsort(gray)

    def index(self, bits) -> np.ndarray:
        """Alphabet index for bipolar bit vectors of shape (..., N)."""
        bits = np.asarray(bits)
        if bits.shape[-1] != self.bits_per_symbol:
            raise DimensionError(
                f"expected {self.bits_per_symbol} bits per symbol, got {bits.shape[-1]}"
            )
        binary = (1 - bits) // 2
        weights = 1 << np.arange(self.bits_per_symbol - 1, -1, -1)
        return self._index_of_gray[binary @ weights]

    def map(self, bits) -> np.ndarray:
        """Complex symbol(s) for bipolar bit vectors."""
        return self.alphabet.points[self.index(bits)]

    def demap_index(self, index) -> np.ndarray:
        """Bipolar labels for alphabet indices."""
        return self.labels[np.asarray(index)]

    def demap(self, symbols) -> np.ndarray:
        """Bipolar labels of the alphabet points nearest to `symbols`."""
        return self.labels[self.alphabet.nearest(symbols)]


def gray_map(bits, mapper: GrayMapper) -> np.ndarray:
    return mapper.map(bits)


def gray_demap(symbols, mapper: GrayMapper) -> np.ndarray:
    return mapper.demap(symbols)


@dataclass(frozen=True)
class ChannelRealization:
    H: np.ndarray
    sigma_w2: float = 1.0

    @property
    def K(self) -> int:
        return self.H.shape[0]

    @property
    def M(self) -> int:
        return self.H.shape[1]

    @property
    def H_r(self) -> np.ndarray:
        return stack_real_matrix(self.H)


def draw_channel(K: int, M: int, rng_seed=None, sigma_w2: float = 1.0,
                 sigma_g2: float = 1.0) -> ChannelRealization:
    """Draw an i.i.d. Rayleigh channel with CN(0, sigma_g2) entries.

    `rng_seed` may be an integer seed or a ``numpy.random.Generator``.
    """
    rng = np.random.default_rng(rng_seed)
    scale = np.sqrt(sigma_g2 / 2.0)
    H = scale * (rng.standard_normal((K, M)) + 1j * rng.standard_normal((K, M)))
    H.setflags(write=False)
    return ChannelRealization(H, float(sigma_w2))


def stack_real(v) -> np.ndarray:
    """Interleave real and imaginary parts: ``[Re v1, Im v1, Re v2, ...]``."""
    v = np.asarray(v, dtype=complex)
    out = np.empty(v.shape[:-1] + (2 * v.shape[-1],))
    out[..., 0::2] = v.real
    out[..., 1::2] = v.imag
    return out


def unstack(v_r) -> np.ndarray:
    """Inverse of :func:`stack_real`."""
    v_r = np.asarray(v_r, dtype=float)
    if v_r.shape[-1] % 2:
        raise DimensionError("stacked vector must have even length")
    return v_r[..., 0::2] + 1j * v_r[..., 1::2]


def stack_real_matrix(H) -> np.ndarray:
    """Real 2K x 2M form with ``[[Re, -Im], [Im, Re]]`` blocks per entry."""
    H = np.asarray(H, dtype=complex)
    K, M = H.shape
    H_r = np.empty((2 * K, 2 * M))
    H_r[0::2, 0::2] = H.real
    H_r[0::2, 1::2] = -H.imag
    H_r[1::2, 0::2] = H.imag
    H_r[1::2, 1::2] = H.real
    return H_r


def snr_to_sigma_w2(snr_db: float, E_tx: float = 1.0) -> float:
    """Noise variance for ``SNR = E_tx / sigma_w2``."""
    if not E_tx > 0:
        raise ConfigurationError("E_tx must be positive")
    return E_tx / 10.0 ** (snr_db / 10.0)


def quantize_phase(values, alphabet: PskAlphabet) -> np.ndarray:
    """Nearest alphabet index by phase (amplitude is ignored)."""
    values = np.asarray(values, dtype=complex)
    unit = np.exp(1j * np.angle(values)) * alphabet.amplitude
    return alphabet.nearest(unit)


def bits_to_bipolar(bits) -> np.ndarray:
    """Binary {0, 1} to bipolar {+1, -1}."""
    return (1 - 2 * np.asarray(bits, dtype=np.int8)).astype(np.int8)


def bipolar_to_bits(c) -> np.ndarray:
    return ((1 - np.asarray(c, dtype=np.int8)) // 2).astype(np.int8)


def trial_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one Monte Carlo trial.

    The stream depends only on ``(master_seed, key)``, never on the worker
    that runs it.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))
