"""Systematic LDPC codes: PEG construction, alist I/O, encoding and SPA decoding.

Bits are handled in binary form (0/1) at the encoder and as LLRs at the
decoder, where a positive LLR favours binary 0 (bipolar +1).  Codewords
are laid out as ``[parity | message]``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from numba import njit

from .core import ConfigurationError, DimensionError

__all__ = [
    "AlistError",
    "LdpcCode",
    "DecoderResult",
    "peg_construct",
    "read_alist",
    "write_alist",
    "load_or_generate_code",
    "encode",
    "spa_decode",
    "syndrome",
    "frame_bits",
    "deframe",
    "has_four_cycles",
    "DEFAULT_CODE",
]

DEFAULT_CODE = "peg_486_243.alist"
DEFAULT_SEED = 486


class AlistError(ValueError):
    """Malformed or inconsistent alist file."""


def _gf2_rref(A):
    """Reduced row echelon form over GF(2); returns (R, pivot columns)."""
    R = (np.asarray(A) & 1).astype(np.uint8)
    m, n = R.shape
    pivots = []
    row = 0
    for col in range(n):
        if row == m:
            break
        hits = np.nonzero(R[row:, col])[0]
        if hits.size == 0:
            continue
        p = row + hits[0]
        if p != row:
            R[[row, p]] = R[[p, row]]
        others = np.nonzero(R[:, col])[0]
        others = others[others != row]
        R[others] ^= R[row]
        pivots.append(col)
        row += 1
    return R, pivots


@dataclass(frozen=True)
class LdpcCode:
    """Binary LDPC code with parity-check matrix ``H = [H_p | H_m]``.

    ``H_p`` (the first ``m`` columns) must be invertible over GF(2) so that
    the parity bits of a message ``u`` are ``A u`` with ``A = H_p^{-1} H_m``.
    """

    H: np.ndarray
    A: np.ndarray = field(repr=False)
    name: str = ""

    @classmethod
    def from_parity_check(cls, H, name: str = "", permute: bool = True) -> "LdpcCode":
        H = (np.asarray(H) & 1).astype(np.uint8)
        m, n = H.shape
        R, piv = _gf2_rref(H)
        if len(piv) < m:
            raise ConfigurationError(f"parity-check matrix has rank {len(piv)} < {m} rows")
        if piv != list(range(m)):
            if not permute:
                raise ConfigurationError("first m columns of H are not invertible")
            # move a set of independent columns to the parity block
            rest = [c for c in range(n) if c not in set(piv)]
            H = H[:, piv + rest]
            R, piv = _gf2_rref(H)
        A = R[:, m:].copy()
        H.setflags(write=False)
        A.setflags(write=False)
        return cls(H, A, name)

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @property
    def m(self) -> int:
        return self.H.shape[0]

    @property
    def k(self) -> int:
        return self.n - self.m

    @property
    def rate(self) -> float:
        return self.k / self.n

    @property
    def generator(self) -> np.ndarray:
        """Systematic generator ``[A^T | I]``; row ``i`` encodes ``e_i``."""
        return np.hstack([self.A.T, np.eye(self.k, dtype=np.uint8)])

    @property
    def column_degrees(self) -> np.ndarray:
        return self.H.sum(axis=0).astype(int)

    @property
    def row_degrees(self) -> np.ndarray:
        return self.H.sum(axis=1).astype(int)

    @property
    def message_slice(self) -> slice:
        return slice(self.m, self.n)

    def graph(self):
        """Edge arrays for the decoder: check CSR and variable CSR."""
        g = getattr(self, "_graph", None)
        if g is None:
            rows, cols = np.nonzero(self.H)
            c_ptr = np.zeros(self.m + 1, dtype=np.int64)
            np.add.at(c_ptr, rows + 1, 1)
            c_ptr = np.cumsum(c_ptr)
            c_var = cols.astype(np.int64)
            order = np.argsort(cols, kind="stable")
            v_ptr = np.zeros(self.n + 1, dtype=np.int64)
            np.add.at(v_ptr, cols + 1, 1)
            v_ptr = np.cumsum(v_ptr)
            v_edge = order.astype(np.int64)
            g = (c_ptr, c_var, v_ptr, v_edge)
            object.__setattr__(self, "_graph", g)
        return g


# ---------------------------------------------------------------------------
# construction

def peg_construct(n: int, m: int, dv: int = 3, dc: int | None = None, seed: int = DEFAULT_SEED):
    """Progressive-edge-growth parity-check matrix with column degree `dv`.

    Check nodes are filled up to degree `dc` (``n * dv / m`` by default), so
    the result is regular when that ratio is an integer.  Each new edge of a
    variable node goes to a check outside the current depth-limited tree of
    that node when possible, otherwise to the deepest one; ties are broken
    by lowest check degree and then at random.
    """
    if dc is None:
        if (n * dv) % m:
            raise ConfigurationError("n * dv must be divisible by m for a regular code")
        dc = n * dv // m
    rng = np.random.default_rng(seed)
    var_adj = [[] for _ in range(n)]
    chk_adj = [[] for _ in range(m)]
    deg = np.zeros(m, dtype=int)

    for j in range(n):
        for e in range(dv):
            open_ = deg < dc
            open_[var_adj[j]] = False
            if e == 0:
                cand = np.nonzero(open_)[0]
            else:
                depth = _bfs_depths(j, var_adj, chk_adj, m)
                unreached = open_ & (depth < 0)
                if unreached.any():
                    cand = np.nonzero(unreached)[0]
                else:
                    far = depth[open_].max()
                    cand = np.nonzero(open_ & (depth == far))[0]
            cand = cand[deg[cand] == deg[cand].min()]
            c = int(rng.choice(cand))
            var_adj[j].append(c)
            chk_adj[c].append(j)
            deg[c] += 1
    H = np.zeros((m, n), dtype=np.uint8)
    for j, cs in enumerate(var_adj):
        H[cs, j] = 1
    return H


def _bfs_depths(j, var_adj, chk_adj, m):
    depth = np.full(m, -1)
    seen_v = {j}
    q = deque()
    for c in var_adj[j]:
        depth[c] = 0
        q.append(c)
    while q:
        c = q.popleft()
        for v in chk_adj[c]:
            if v in seen_v:
                continue
            seen_v.add(v)
            for c2 in var_adj[v]:
                if depth[c2] < 0:
                    depth[c2] = depth[c] + 1
                    q.append(c2)
    return depth


def has_four_cycles(H) -> bool:
    H = np.asarray(H, dtype=np.int64)
    overlap = H.T @ H
    np.fill_diagonal(overlap, 0)
    return bool(overlap.max() > 1)


# ---------------------------------------------------------------------------
# alist

def write_alist(H, path) -> None:
    H = np.asarray(H, dtype=np.uint8)
    m, n = H.shape
    cols = [np.nonzero(H[:, j])[0] + 1 for j in range(n)]
    rows = [np.nonzero(H[i])[0] + 1 for i in range(m)]
    mc = max(len(c) for c in cols)
    mr = max(len(r) for r in rows)
    out = [f"{n} {m}", f"{mc} {mr}",
           " ".join(str(len(c)) for c in cols), " ".join(str(len(r)) for r in rows)]
    out += [" ".join(str(v) for v in np.pad(c, (0, mc - len(c)))) for c in cols]
    out += [" ".join(str(v) for v in np.pad(r, (0, mr - len(r)))) for r in rows]
    Path(path).write_text("\n".join(out) + "\n", encoding="ascii")


def read_alist(source) -> np.ndarray:
    """Parse alist text (a path or the text itself) into a dense 0/1 matrix."""
    text = Path(source).read_text() if not isinstance(source, str) or "\n" not in source \
        else source
    try:
        tok = [int(t) for t in text.split()]
        n, m, mc, mr = tok[:4]
        pos = 4
        cdeg = tok[pos:pos + n]
        pos += n
        rdeg = tok[pos:pos + m]
        pos += m
        H = np.zeros((m, n), dtype=np.uint8)
        for j in range(n):
            entries = tok[pos:pos + mc]
            pos += mc
            nz = [v for v in entries if v]
            if len(nz) != cdeg[j]:
                raise AlistError(f"column {j + 1}: degree {cdeg[j]} but {len(nz)} entries")
            H[np.array(nz, dtype=int) - 1, j] = 1
        for i in range(m):
            entries = tok[pos:pos + mr]
            pos += mr
            nz = sorted(v for v in entries if v)
            if len(nz) != rdeg[i] or nz != list(np.nonzero(H[i])[0] + 1):
                raise AlistError(f"row {i + 1} disagrees with the column lists")
    except (ValueError, IndexError) as exc:
        raise AlistError(f"malformed alist: {exc}") from exc
    if pos != len(tok):
        raise AlistError("trailing data after alist body")
    return H


def load_or_generate_code(spec=None) -> LdpcCode:
    """Return an :class:`LdpcCode`.

    `spec` may be ``None`` (the packaged rate-1/2 PEG code with 486 bits),
    a path to an alist file, or a dict of :func:`peg_construct` arguments.
    """
    if spec is None or spec == "default":
        ref = resources.files("qmmse").joinpath("data", DEFAULT_CODE)
        if ref.is_file():
            return LdpcCode.from_parity_check(read_alist(ref.read_text()), DEFAULT_CODE)
        return LdpcCode.from_parity_check(peg_construct(486, 243), "peg(486, 243)")
    if isinstance(spec, dict):
        params = dict(spec)
        H = peg_construct(int(params.pop("n")), int(params.pop("m")), **params)
        return LdpcCode.from_parity_check(H, f"peg({spec})")
    path = Path(spec)
    return LdpcCode.from_parity_check(read_alist(path), path.name)


# ---------------------------------------------------------------------------
# encoding

def encode(code: LdpcCode, message) -> np.ndarray:
    """Binary codeword ``[parity | message]`` for binary `message` bits."""
    u = np.asarray(message)
    if u.shape[-1] != code.k:
        raise DimensionError(f"message must have {code.k} bits, got {u.shape[-1]}")
    u = (u & 1).astype(np.uint8)
    p = (u.astype(np.int64) @ code.A.T.astype(np.int64)) & 1
    return np.concatenate([p.astype(np.uint8), u], axis=-1)


def syndrome(code: LdpcCode, bits) -> np.ndarray:
    return ((np.asarray(bits, dtype=np.int64) @ code.H.T.astype(np.int64)) & 1).astype(np.uint8)


# ---------------------------------------------------------------------------
# decoding

@dataclass
class DecoderResult:
    L: np.ndarray
    hard_bits: np.ndarray
    iterations_used: int
    syndrome_ok: bool


_TANH_LIMIT = 1.0 - 1e-15


@njit(cache=True)
def _spa(llr, c_ptr, c_var, v_ptr, v_edge, max_iter, L, hard):
    n = llr.size
    m = c_ptr.size - 1
    E = c_var.size
    q = np.empty(E)
    r = np.zeros(E)
    t = np.empty(E)
    for e in range(E):
        q[e] = llr[c_var[e]]
    it = 0
    ok = False
    while it < max_iter:
        it += 1
        for c in range(m):
            a, b = c_ptr[c], c_ptr[c + 1]
            for e in range(a, b):
                t[e] = np.tanh(0.5 * q[e])
            # product of all other edges via prefix/suffix sweep
            acc = 1.0
            for e in range(a, b):
                r[e] = acc
                acc *= t[e]
            acc = 1.0
            for e in range(b - 1, a - 1, -1):
                p = r[e] * acc
                acc *= t[e]
                if p > _TANH_LIMIT:
                    p = _TANH_LIMIT
                elif p < -_TANH_LIMIT:
                    p = -_TANH_LIMIT
                r[e] = 2.0 * np.arctanh(p)
        for v in range(n):
            tot = llr[v]
            for i in range(v_ptr[v], v_ptr[v + 1]):
                tot += r[v_edge[i]]
            L[v] = tot
            hard[v] = 1 if tot < 0 else 0
            for i in range(v_ptr[v], v_ptr[v + 1]):
                e = v_edge[i]
                q[e] = tot - r[e]
        ok = True
        for c in range(m):
            par = 0
            for e in range(c_ptr[c], c_ptr[c + 1]):
                par ^= hard[c_var[e]]
            if par:
                ok = False
                break
        if ok:
            break
    return it, ok


def spa_decode(code: LdpcCode, channel_llrs, max_iter: int = 50,
               clamp: float = 50.0) -> DecoderResult:
    """Flooding sum-product decoding with early stop on a zero syndrome.

    The returned ``L`` is the a-posteriori LLR: channel value plus every
    incoming check message.
    """
    llr = np.asarray(channel_llrs, dtype=float)
    if llr.shape != (code.n,):
        raise DimensionError(f"expected {code.n} LLRs, got shape {llr.shape}")
    if np.isnan(llr).any():
        raise ValueError("channel LLRs contain NaN")
    llr = np.clip(llr, -clamp, clamp)
    L = np.empty(code.n)
    hard = np.empty(code.n, dtype=np.uint8)
    it, ok = _spa(llr, *code.graph(), int(max_iter), L, hard)
    return DecoderResult(L, hard, int(it), bool(ok))


# ---------------------------------------------------------------------------
# framing

def frame_bits(codeword, N: int) -> np.ndarray:
    """Split a codeword into consecutive groups of `N` bits, shape (n / N, N)."""
    c = np.asarray(codeword)
    if N < 1 or c.shape[-1] % N:
        raise DimensionError(f"{c.shape[-1]} bits cannot be split into groups of {N}")
    return c.reshape(c.shape[:-1] + (c.shape[-1] // N, N))


def deframe(groups) -> np.ndarray:
    g = np.asarray(groups)
    return g.reshape(g.shape[:-2] + (-1,))
