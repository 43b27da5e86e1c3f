"""Precoders for phase-quantized constant-envelope downlinks.

ZF-P, continuous MMSE, the mapped relaxation and the exact
branch-and-bound MMSE precoder, plus per-channel lookup tables that
exploit the rotation symmetry of the problem.

Discrete MSE values are always evaluated with the closed-form optimal
receive scaling ``f' = s_r^T u / (||u||^2 + K sigma_w2)``, ``u = H_r x_r``,
restricted to ``f' >= 0``: a negative ``f'`` is not a valid receive
scaling, so such vectors get ``f' = 0`` and ``MSE = ||s||^2``.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .core import (
    ConfigurationError,
    DimensionError,
    make_alphabet,
    quantize_phase,
    stack_real,
    stack_real_matrix,
    transmit_alphabet,
)
from .polytope import Polyhedron
from .qpsolve import (
    EPS_F,
    STATUS_SINGULAR,
    SolverFailure,
    _ipm,
    _polish,
)

__all__ = [
    "PrecodeSolution",
    "BranchAndBoundConfig",
    "discrete_mse",
    "optimal_f_prime",
    "zfp_quantized",
    "mmse_continuous",
    "mmse_mapped",
    "mmse_branch_and_bound",
    "exhaustive_search",
    "PrecoderCache",
    "LookupTable",
    "build_lookup_table",
    "save_table",
    "load_table",
    "PRECODERS",
]

PRECODERS = ("branch_and_bound", "mapped", "zfp", "exhaustive")


@dataclass(frozen=True)
class PrecodeSolution:
    """Result of one precoding call.

    ``index`` holds the transmit-alphabet index per antenna for discrete
    precoders and is ``None`` for the continuous one.
    """

    x: np.ndarray
    f: float
    mse: float
    mse_lb: float
    bounds_evaluated: int = 0
    optimal: bool = False
    index: np.ndarray | None = None
    partial: bool = False
    rank_deficient: bool = False


@dataclass(frozen=True)
class BranchAndBoundConfig:
    """Tuning knobs of the tree search.

    The QP tolerances are tighter than the generic solver defaults so that
    the certified lower bounds stay well inside ``prune_margin``.
    """

    max_candidates: int = 10**6
    prune_margin: float = 1e-10
    shortcut_tol: float = 1e-10
    qp_tol: float = 1e-11
    qp_feas_tol: float = 1e-10
    qp_max_iter: int = 80


# ---------------------------------------------------------------------------
# closed forms


def optimal_f_prime(H_r, x_r_full, noise_energy: float, s_r) -> float:
    """Receive scaling minimizing the MSE of a fixed transmit vector.

    Returns ``s_r^T u / (||u||^2 + noise_energy)`` and 0 when the
    denominator vanishes.
    """
    u = np.asarray(H_r, dtype=float) @ np.asarray(x_r_full, dtype=float)
    den = float(u @ u) + noise_energy
    if den <= 0.0:
        return 0.0
    return float(np.asarray(s_r, dtype=float) @ u) / den


def discrete_mse(H, x, s, noise_energy: float):
    """MSE and receive scaling for one or many transmit vectors.

    `x` has shape (..., M).  Returns ``(mse, f)`` with matching leading
    shape.
    """
    H = np.asarray(H, dtype=complex)
    s = np.asarray(s, dtype=complex)
    u = np.asarray(x) @ H.T
    p = np.real(u @ s.conj())
    e = np.sum(np.abs(u) ** 2, axis=-1) + noise_energy
    ss = float(np.real(np.vdot(s, s)))
    pos = p > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(pos, p / e, 0.0)
        mse = np.where(pos, ss - p * p / e, ss)
    return mse, f


def _check_inputs(H, s):
    H = np.asarray(H, dtype=complex)
    s = np.asarray(s, dtype=complex)
    if H.ndim != 2 or s.shape != (H.shape[0],):
        raise DimensionError(f"H is {H.shape}, s is {s.shape}")
    return H, s


def zfp_quantized(H, s, alpha_x: int, sigma_w2: float = 0.0, E_tx: float = 1.0) -> PrecodeSolution:
    """Zero-forcing precoder followed by entrywise phase quantization."""
    H, s = _check_inputs(H, s)
    K, M = H.shape
    X = transmit_alphabet(alpha_x, M, E_tx)
    rank_deficient = np.linalg.matrix_rank(H) < K
    if rank_deficient:
        x_c = np.linalg.pinv(H) @ s
    else:
        x_c = H.conj().T @ np.linalg.solve(H @ H.conj().T, s)
    idx = quantize_phase(x_c, X)
    x = X.points[idx]
    mse, f = discrete_mse(H, x, s, K * sigma_w2)
    return PrecodeSolution(x, float(f), float(mse), -np.inf, 0, False, idx,
                           rank_deficient=bool(rank_deficient))


def mmse_continuous(H, s, sigma_w2: float, E_tx: float = 1.0) -> PrecodeSolution:
    """Unquantized MMSE precoder meeting the energy constraint with equality."""
    H, s = _check_inputs(H, s)
    if not E_tx > 0:
        raise ConfigurationError("E_tx must be positive")
    if not np.any(s):
        raise ConfigurationError("the all-zero data vector has no MMSE precoder")
    K, M = H.shape
    reg = max(K * sigma_w2 / E_tx, 1e-12 if sigma_w2 == 0 else 0.0)
    g = np.linalg.solve(H.conj().T @ H + reg * np.eye(M), H.conj().T @ s)
    f = float(np.linalg.norm(g) / np.sqrt(E_tx))
    x = g / f
    mse = float(np.linalg.norm(f * (H @ x) - s) ** 2 + f * f * K * sigma_w2)
    return PrecodeSolution(x, f, mse, mse, 0, True)


# ---------------------------------------------------------------------------
# node evaluation kernel


def _hull_rows(n_free: int, alpha_x: int, bval: float):
    """Row-sparse ``[A', -b'; 0, -1]`` for `n_free` unfixed antennas."""
    n = 2 * n_free + 1
    m = alpha_x * n_free + 1
    phi = 2.0 * np.pi * np.arange(1, alpha_x + 1) / alpha_x
    gidx = np.zeros((m, 3), dtype=np.int64)
    gval = np.zeros((m, 3))
    r = 0
    for i in range(alpha_x):
        for a in range(n_free):
            gidx[r] = (2 * a, 2 * a + 1, n - 1)
            gval[r] = (np.cos(phi[i]), -np.sin(phi[i]), -bval)
            r += 1
    gidx[-1, 0] = n - 1
    gval[-1, 0] = -1.0
    h = np.zeros(m)
    h[-1] = -EPS_F
    return gidx, gval, h


@njit(cache=True)
def _solve_nodes(Gram, hts, ss, noise, prefixes, Xr, gidx, gval, h, tol, feas_tol,
                 max_iter, out_lb, out_ub, out_idx):
    """Lower and upper bound for every fixed prefix at one tree level.

    ``prefixes`` holds transmit indices (L x d).  ``out_idx`` receives the
    complete mapped vector (prefix plus mapped suffix) per node.
    """
    L, d = prefixes.shape
    M = Gram.shape[0] // 2
    nf = M - d
    n = 2 * nf + 1
    m = gidx.shape[0]
    ax = Xr.shape[0]
    P = np.empty((n, n))
    q = np.empty(n)
    y = np.empty(n)
    s = np.empty(m)
    z = np.empty(m)
    yp = np.empty(n)
    xfix = np.empty(2 * d)
    xfull = np.empty(2 * M)
    for node in range(L):
        for a in range(d):
            xfix[2 * a] = Xr[prefixes[node, a], 0]
            xfix[2 * a + 1] = Xr[prefixes[node, a], 1]
        # quadratic form of the subproblem
        for i in range(n - 1):
            for j in range(n - 1):
                P[i, j] = 2.0 * Gram[2 * d + i, 2 * d + j]
            v = 0.0
            for j in range(2 * d):
                v += Gram[2 * d + i, j] * xfix[j]
            P[i, n - 1] = 2.0 * v
            P[n - 1, i] = 2.0 * v
            q[i] = -2.0 * hts[2 * d + i]
        cc = 0.0
        cs = 0.0
        for i in range(2 * d):
            v = 0.0
            for j in range(2 * d):
                v += Gram[i, j] * xfix[j]
            cc += v * xfix[i]
            cs += hts[i] * xfix[i]
        P[n - 1, n - 1] = 2.0 * (cc + noise)
        q[n - 1] = -2.0 * cs

        status, iters, gap = _ipm(P, q, gidx, gval, h, ss, tol, feas_tol, max_iter, y, s, z)
        if status == STATUS_SINGULAR:
            out_lb[node] = -np.inf
            out_ub[node] = np.inf
            for a in range(M):
                out_idx[node, a] = 0
            continue
        polished = _polish(P, q, gidx, gval, h, s, z, yp)
        if polished:
            for i in range(n):
                y[i] = yp[i]
        obj = ss
        for i in range(n):
            v = 0.0
            for j in range(n):
                v += P[i, j] * y[j]
            obj += 0.5 * v * y[i] + q[i] * y[i]
        out_lb[node] = obj if polished else obj - gap

        # map the relaxed suffix to the nearest alphabet point per antenna
        for a in range(d):
            out_idx[node, a] = prefixes[node, a]
            xfull[2 * a] = xfix[2 * a]
            xfull[2 * a + 1] = xfix[2 * a + 1]
        f = y[n - 1]
        for a in range(nf):
            re = y[2 * a] / f
            im = y[2 * a + 1] / f
            best = 0
            bd = np.inf
            for p in range(ax):
                dr = re - Xr[p, 0]
                di = im - Xr[p, 1]
                dist = dr * dr + di * di
                if dist < bd:
                    bd = dist
                    best = p
            out_idx[node, d + a] = best
            xfull[2 * (d + a)] = Xr[best, 0]
            xfull[2 * (d + a) + 1] = Xr[best, 1]
        uu = noise
        su = 0.0
        for i in range(2 * M):
            v = 0.0
            for j in range(2 * M):
                v += Gram[i, j] * xfull[j]
            uu += v * xfull[i]
            su += hts[i] * xfull[i]
        out_ub[node] = ss - su * su / uu if su > 0.0 else ss


class _Search:
    """Per-(H, s) data shared by every node of one tree search."""

    def __init__(self, H, s, sigma_w2, polyhedron: Polyhedron, cfg: BranchAndBoundConfig):
        H, s = _check_inputs(H, s)
        K, M = H.shape
        if polyhedron.M != M:
            raise DimensionError(f"polyhedron is for M={polyhedron.M}, channel has M={M}")
        self.H, self.s, self.K, self.M = H, s, K, M
        self.alpha_x = polyhedron.alpha_x
        self.X = transmit_alphabet(polyhedron.alpha_x, M, polyhedron.E_tx)
        self.Xr = np.column_stack([self.X.points.real, self.X.points.imag])
        H_r = stack_real_matrix(H)
        s_r = stack_real(s)
        self.Gram = H_r.T @ H_r
        self.hts = H_r.T @ s_r
        self.ss = float(s_r @ s_r)
        self.noise = K * float(sigma_w2)
        self.bval = polyhedron.offset
        self.cfg = cfg
        self._rows = {}

    def nodes(self, prefixes):
        prefixes = np.ascontiguousarray(prefixes, dtype=np.int64)
        L, d = prefixes.shape
        nf = self.M - d
        if nf not in self._rows:
            self._rows[nf] = _hull_rows(nf, self.alpha_x, self.bval)
        gidx, gval, h = self._rows[nf]
        lb = np.empty(L)
        ub = np.empty(L)
        idx = np.empty((L, self.M), dtype=np.int64)
        c = self.cfg
        _solve_nodes(self.Gram, self.hts, self.ss, self.noise, prefixes, self.Xr, gidx, gval, h,
                     c.qp_tol, c.qp_feas_tol, c.qp_max_iter, lb, ub, idx)
        return lb, ub, idx

    def evaluate(self, idx):
        return discrete_mse(self.H, self.X.points[idx], self.s, self.noise)

    def solution(self, idx, lb, bounds, optimal, partial=False):
        x = self.X.points[idx]
        mse, f = discrete_mse(self.H, x, self.s, self.noise)
        return PrecodeSolution(x, float(f), float(mse), float(min(lb, mse)), int(bounds),
                               bool(optimal), np.asarray(idx, dtype=np.int64), partial)


def mmse_mapped(H, s, sigma_w2: float, polyhedron: Polyhedron,
                config: BranchAndBoundConfig | None = None) -> PrecodeSolution:
    """Relaxed QP over the hull, then nearest-point mapping per antenna."""
    search = _Search(H, s, sigma_w2, polyhedron, config or BranchAndBoundConfig())
    lb, ub, idx = search.nodes(np.zeros((1, 0), dtype=np.int64))
    if not np.isfinite(ub[0]):
        raise SolverFailure("relaxed problem could not be solved")
    c = search.cfg
    optimal = ub[0] - lb[0] <= c.shortcut_tol * (1.0 + abs(ub[0]))
    return search.solution(idx[0], lb[0], 1, optimal)


def _expand(prefixes, alpha_x):
    L, d = prefixes.shape
    out = np.empty((L * alpha_x, d + 1), dtype=np.int64)
    out[:, :d] = np.repeat(prefixes, alpha_x, axis=0)
    out[:, d] = np.tile(np.arange(alpha_x), L)
    return out


def mmse_branch_and_bound(H, s, sigma_w2: float, polyhedron: Polyhedron,
                          config: BranchAndBoundConfig | None = None) -> PrecodeSolution:
    """Exact discrete MMSE precoder by breadth-first branch-and-bound.

    Antennas are fixed in natural order.  At every level all surviving
    prefixes are bounded, the incumbent is updated from the mapped
    suffixes, and prefixes whose lower bound is not below the incumbent
    (minus ``prune_margin``) are dropped.  Full vectors at the last level
    are scored in closed form.  ``bounds_evaluated`` counts every QP,
    including the initial relaxation.
    """
    cfg = config or BranchAndBoundConfig()
    search = _Search(H, s, sigma_w2, polyhedron, cfg)
    M, ax = search.M, search.alpha_x
    lb0, ub0, idx0 = search.nodes(np.zeros((1, 0), dtype=np.int64))
    if not np.isfinite(ub0[0]):
        raise SolverFailure("relaxed problem could not be solved")
    g, best = float(ub0[0]), idx0[0].copy()
    root_lb = float(lb0[0])
    bounds = 1
    if g - root_lb <= cfg.shortcut_tol * (1.0 + abs(g)):
        return search.solution(best, root_lb, bounds, True)

    level = np.arange(ax, dtype=np.int64)[:, None]
    for d in range(1, M):
        if level.shape[0] > cfg.max_candidates:
            return search.solution(best, root_lb, bounds, False, partial=True)
        lb, ub, idx = search.nodes(level)
        bounds += level.shape[0]
        j = int(np.argmin(ub))
        if ub[j] < g:
            g, best = float(ub[j]), idx[j].copy()
        level = _expand(level[lb < g - cfg.prune_margin], ax)
        if level.shape[0] == 0:
            break
    if level.shape[0] > cfg.max_candidates:
        return search.solution(best, root_lb, bounds, False, partial=True)
    if level.shape[0]:
        mse, _ = search.evaluate(level)
        j = int(np.argmin(mse))
        if mse[j] < g:
            g, best = float(mse[j]), level[j].copy()
    return search.solution(best, root_lb, bounds, True)


def exhaustive_search(H, s, sigma_w2: float, alpha_x: int, E_tx: float = 1.0,
                      max_candidates: int = 1 << 22, chunk: int = 1 << 16) -> PrecodeSolution:
    """Minimum discrete MSE over all ``alpha_x^M`` transmit vectors.

    Ties go to the lexicographically smallest index vector.
    """
    H, s = _check_inputs(H, s)
    K, M = H.shape
    total = alpha_x ** M
    if total > max_candidates:
        raise ConfigurationError(f"{total} candidates exceed the limit {max_candidates}")
    X = transmit_alphabet(alpha_x, M, E_tx)
    weights = alpha_x ** np.arange(M - 1, -1, -1)
    best_mse, best_flat = np.inf, 0
    for start in range(0, total, chunk):
        flat = np.arange(start, min(total, start + chunk))
        idx = (flat[:, None] // weights) % alpha_x
        mse, _ = discrete_mse(H, X.points[idx], s, K * sigma_w2)
        j = int(np.argmin(mse))
        if mse[j] < best_mse:
            best_mse, best_flat = float(mse[j]), int(flat[j])
    idx = (best_flat // weights) % alpha_x
    x = X.points[idx]
    mse, f = discrete_mse(H, x, s, K * sigma_w2)
    return PrecodeSolution(x, float(f), float(mse), float(mse), int(total), True, idx)


# ---------------------------------------------------------------------------
# lookup tables


def _channel_hash(H) -> str:
    H = np.ascontiguousarray(np.asarray(H, dtype=complex))
    return hashlib.sha256(H.tobytes()).hexdigest()[:16]


class PrecoderCache:
    """Memoized discrete precoder for one channel, using rotation symmetry.

    Rotating every data symbol by ``2 pi / g`` with ``g = gcd(alpha_s,
    alpha_x)`` rotates the optimal transmit vector by the same angle, which
    is again a point of ``X^M``.  Only one representative per rotation
    orbit is solved; the others are obtained by shifting transmit indices.
    With ``alpha_x = alpha_s`` the representatives are exactly the data
    vectors whose first symbol has index 0.
    """

    def __init__(self, H, sigma_w2: float, alpha_s: int, alpha_x: int,
                 precoder: str = "branch_and_bound", config: BranchAndBoundConfig | None = None,
                 E_tx: float = 1.0, enforce_symmetry: bool = True):
        if precoder not in PRECODERS:
            raise ConfigurationError(f"unknown precoder {precoder!r}; choose from {PRECODERS}")
        self.H = np.asarray(H, dtype=complex)
        self.K, self.M = self.H.shape
        self.sigma_w2 = float(sigma_w2)
        self.alpha_s, self.alpha_x = int(alpha_s), int(alpha_x)
        self.S = make_alphabet(alpha_s)
        self.precoder = precoder
        self.config = config or BranchAndBoundConfig()
        self.E_tx = float(E_tx)
        self.order = math.gcd(self.alpha_s, self.alpha_x) if enforce_symmetry else 1
        self._shift_s = self.alpha_s // self.order
        self._shift_x = self.alpha_x // self.order
        self._solved: dict[tuple, PrecodeSolution] = {}
        self._poly = None
        if precoder in ("branch_and_bound", "mapped"):
            from .polytope import build_polyhedron

            self._poly = build_polyhedron(self.M, self.alpha_x, self.E_tx)

    @property
    def solves(self) -> int:
        return len(self._solved)

    @property
    def bounds_evaluated(self) -> int:
        """Total bound evaluations over all solves so far."""
        return sum(sol.bounds_evaluated for sol in self._solved.values())

    def _solve(self, s_idx) -> PrecodeSolution:
        s = self.S.points[np.asarray(s_idx)]
        if self.precoder == "branch_and_bound":
            return mmse_branch_and_bound(self.H, s, self.sigma_w2, self._poly, self.config)
        if self.precoder == "mapped":
            return mmse_mapped(self.H, s, self.sigma_w2, self._poly, self.config)
        if self.precoder == "zfp":
            return zfp_quantized(self.H, s, self.alpha_x, self.sigma_w2, self.E_tx)
        return exhaustive_search(self.H, s, self.sigma_w2, self.alpha_x, self.E_tx)

    def canonical(self, s_idx):
        """Representative of the rotation orbit and the number of steps."""
        s_idx = np.asarray(s_idx, dtype=np.int64)
        j = int(s_idx[0]) // self._shift_s
        return tuple(int(v) for v in (s_idx - j * self._shift_s) % self.alpha_s), j

    def lookup(self, s_idx):
        """``(x_index, f, mse, mse_lb, bounds, rotated)`` for data indices `s_idx`."""
        if len(s_idx) != self.K:
            raise DimensionError(f"expected {self.K} data indices")
        key, j = self.canonical(s_idx)
        sol = self._solved.get(key)
        if sol is None:
            sol = self._solve(key)
            self._solved[key] = sol
        x_idx = (sol.index + j * self._shift_x) % self.alpha_x
        return x_idx, sol.f, sol.mse, sol.mse_lb, sol.bounds_evaluated, j != 0

    def __call__(self, s_idx) -> PrecodeSolution:
        x_idx, f, mse, mse_lb, bounds, _ = self.lookup(s_idx)
        X = transmit_alphabet(self.alpha_x, self.M, self.E_tx)
        return PrecodeSolution(X.points[x_idx], f, mse, mse_lb, bounds, True, x_idx)


@dataclass
class LookupTable:
    """Precoded vector for every data vector in ``S^K``.

    Row ``r`` belongs to the data indices ``np.unravel_index(r, (alpha_s,)*K)``,
    first user most significant.
    """

    K: int
    M: int
    alpha_s: int
    alpha_x: int
    sigma_w2: float
    x_index: np.ndarray
    f: np.ndarray
    mse: np.ndarray
    mse_lb: np.ndarray
    bounds: np.ndarray
    channel_hash: str = ""
    precoder: str = "branch_and_bound"
    symmetry_order: int = 1
    E_tx: float = 1.0
    H: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        n = self.alpha_s ** self.K
        if self.x_index.shape != (n, self.M):
            raise DimensionError(f"table needs {n} x {self.M} entries, got {self.x_index.shape}")

    def __len__(self) -> int:
        return self.x_index.shape[0]

    @property
    def transmit_alphabet(self):
        return transmit_alphabet(self.alpha_x, self.M, self.E_tx)

    @property
    def x(self) -> np.ndarray:
        return self.transmit_alphabet.points[self.x_index]

    def symbol_indices(self) -> np.ndarray:
        """Data indices of every row, shape (alpha_s^K, K)."""
        grid = np.indices((self.alpha_s,) * self.K).reshape(self.K, -1)
        return grid.T

    def data_vectors(self) -> np.ndarray:
        return make_alphabet(self.alpha_s).points[self.symbol_indices()]

    def row(self, s_idx) -> int:
        return int(np.ravel_multi_index(tuple(np.asarray(s_idx).T), (self.alpha_s,) * self.K))

    def rows(self, s_idx) -> np.ndarray:
        """Row numbers for an array of data indices, shape (..., K)."""
        s_idx = np.asarray(s_idx)
        return np.ravel_multi_index(tuple(np.moveaxis(s_idx, -1, 0)), (self.alpha_s,) * self.K)


def build_lookup_table(H, sigma_w2: float, precoder: str = "branch_and_bound", *,
                       alpha_s: int, alpha_x: int, config: BranchAndBoundConfig | None = None,
                       E_tx: float = 1.0, max_entries: int = 4096,
                       enforce_symmetry: bool = True) -> LookupTable:
    """Precode every data vector of ``S^K`` for channel `H`."""
    H = np.asarray(H, dtype=complex)
    K, M = H.shape
    n = alpha_s ** K
    if n > max_entries:
        raise ConfigurationError(f"table of {n} entries exceeds the budget of {max_entries}")
    cache = PrecoderCache(H, sigma_w2, alpha_s, alpha_x, precoder, config, E_tx, enforce_symmetry)
    x_index = np.empty((n, M), dtype=np.int64)
    f = np.empty(n)
    mse = np.empty(n)
    mse_lb = np.empty(n)
    bounds = np.zeros(n, dtype=np.int64)
    for r, s_idx in enumerate(itertools.product(range(alpha_s), repeat=K)):
        xi, fr, m, lb, b, rotated = cache.lookup(s_idx)
        x_index[r], f[r], mse[r], mse_lb[r] = xi, fr, m, lb
        bounds[r] = 0 if rotated else b
    return LookupTable(K, M, alpha_s, alpha_x, float(sigma_w2), x_index, f, mse, mse_lb,
                       bounds, _channel_hash(H), precoder, cache.order, E_tx, H.copy())


# ---------------------------------------------------------------------------
# serialization

_TABLE_VERSION = 1


def save_table(table: LookupTable, path, fmt: str | None = None, stats=None) -> None:
    """Write `table` as CSV or ``.npz``; optional per-user statistics are appended."""
    from pathlib import Path

    path = Path(path)
    fmt = fmt or ("npz" if path.suffix == ".npz" else "csv")
    if fmt == "npz":
        arrays = dict(version=_TABLE_VERSION, K=table.K, M=table.M, alpha_s=table.alpha_s,
                      alpha_x=table.alpha_x, sigma_w2=table.sigma_w2, E_tx=table.E_tx,
                      channel_hash=table.channel_hash, precoder=table.precoder,
                      symmetry_order=table.symmetry_order, x_index=table.x_index, f=table.f,
                      mse=table.mse, mse_lb=table.mse_lb, bounds=table.bounds)
        if table.H is not None:
            arrays["H"] = table.H
        for k, st in enumerate(stats or []):
            for name, val in st.as_arrays().items():
                arrays[f"stats{k}_{name}"] = val
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)
        return
    if fmt != "csv":
        raise ConfigurationError(f"unknown table format {fmt!r}")
    lines = [f"# qmmse lookup table v{_TABLE_VERSION}"]
    for key in ("K", "M", "alpha_s", "alpha_x", "sigma_w2", "E_tx", "channel_hash", "precoder",
                "symmetry_order"):
        lines.append(f"# {key}={getattr(table, key)!r}" if isinstance(getattr(table, key), float)
                     else f"# {key}={getattr(table, key)}")
    if table.H is not None:
        lines.append("# H=" + " ".join(f"{float(v.real)!r},{float(v.imag)!r}" for v in table.H.ravel()))
    cols = [f"s{k + 1}" for k in range(table.K)]
    for m in range(table.M):
        cols += [f"x{m + 1}_re", f"x{m + 1}_im"]
    lines.append(",".join(cols + ["x_index", "f", "mse", "mse_lb", "bounds"]))
    x = table.x
    for r, s_idx in enumerate(table.symbol_indices()):
        vals = [str(int(v)) for v in s_idx]
        for v in x[r]:
            vals += [repr(float(v.real)), repr(float(v.imag))]
        vals.append(" ".join(str(int(v)) for v in table.x_index[r]))
        vals += [repr(float(table.f[r])), repr(float(table.mse[r])), repr(float(table.mse_lb[r])),
                 str(int(table.bounds[r]))]
        lines.append(",".join(vals))
    for k, st in enumerate(stats or []):
        lines.append(f"# statistics user={k}")
        for name, val in st.as_arrays().items():
            flat = np.asarray(val).ravel()
            if np.iscomplexobj(flat):
                body = " ".join(f"{float(v.real)!r},{float(v.imag)!r}" for v in flat)
                lines.append(f"# {name}:complex:{np.shape(val)}={body}")
            else:
                body = " ".join(repr(float(v)) for v in flat)
                lines.append(f"# {name}:real:{np.shape(val)}={body}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_table(path):
    """Read a table written by :func:`save_table`.

    Returns ``(table, stats)`` where `stats` maps user index to a dict of
    arrays (empty when none were stored).
    """
    from pathlib import Path

    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path, allow_pickle=False) as z:
            d = {k: z[k] for k in z.files}
        stats: dict[int, dict] = {}
        for key, val in d.items():
            if key.startswith("stats"):
                user, name = key[5:].split("_", 1)
                stats.setdefault(int(user), {})[name] = val
        table = LookupTable(int(d["K"]), int(d["M"]), int(d["alpha_s"]), int(d["alpha_x"]),
                            float(d["sigma_w2"]), d["x_index"], d["f"], d["mse"], d["mse_lb"],
                            d["bounds"], str(d["channel_hash"]), str(d["precoder"]),
                            int(d["symmetry_order"]), float(d["E_tx"]), d.get("H"))
        return table, stats
    header: dict[str, str] = {}
    stats = {}
    rows = []
    user = None
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("# statistics user="):
            user = int(line.split("=", 1)[1])
            stats[user] = {}
        elif line.startswith("# ") and "=" in line and user is not None:
            lhs, body = line[2:].split("=", 1)
            name, kind, shape = lhs.split(":", 2)
            shape = tuple(int(v) for v in shape.strip("()").split(",") if v.strip())
            if kind == "complex":
                vals = np.array([complex(*map(float, p.split(","))) for p in body.split()])
            else:
                vals = np.array([float(v) for v in body.split()])
            stats[user][name] = vals.reshape(shape)
        elif line.startswith("# ") and "=" in line:
            k, v = line[2:].split("=", 1)
            header[k] = v
        elif line.startswith("#") or line.startswith("s1,"):
            continue
        elif line:
            rows.append(line.split(","))
    K, M = int(header["K"]), int(header["M"])
    x_index = np.array([[int(v) for v in r[K + 2 * M].split()] for r in rows], dtype=np.int64)
    col = K + 2 * M + 1
    f = np.array([float(r[col]) for r in rows])
    mse = np.array([float(r[col + 1]) for r in rows])
    mse_lb = np.array([float(r[col + 2]) for r in rows])
    bounds = np.array([int(r[col + 3]) for r in rows], dtype=np.int64)
    H = None
    if "H" in header:
        H = np.array([complex(*map(float, p.split(","))) for p in header["H"].split()]).reshape(K, M)
    table = LookupTable(K, M, int(header["alpha_s"]), int(header["alpha_x"]),
                        float(header["sigma_w2"]), x_index, f, mse, mse_lb, bounds,
                        header["channel_hash"], header["precoder"], int(header["symmetry_order"]),
                        float(header["E_tx"]), H)
    return table, stats
