"""Convex quadratic programs over the f-scaled hull of X^M.

Every problem solved here has the form::

    minimize    y^T Q y + c^T y + const
    subject to  R y <= 0,   f >= eps_f

where ``y = [x_{r,f}; f]`` stacks the scaled precoder and the receive
scaling.  The objective value equals the MSE of the relaxed problem.

The solver is a primal-dual interior-point method with Mehrotra's
predictor-corrector, followed by an optional active-set polish that
returns the exact KKT point when the active constraints are identified
correctly.  Constraint rows are stored in a padded row-sparse layout so
that the hull rows (three nonzeros each) cost O(1) to accumulate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import DimensionError

__all__ = [
    "EPS_F",
    "SolverFailure",
    "QpProblem",
    "QpSolution",
    "assemble_full_qp",
    "assemble_subproblem_qp",
    "joint_hessian",
    "joint_convexity_margin",
    "partial_hessian",
    "solve",
]

EPS_F = 1e-8

STATUS_OPTIMAL = 0
STATUS_MAX_ITER = 1
STATUS_INFEASIBLE = 2
STATUS_SINGULAR = 3
_STATUS_NAMES = {STATUS_OPTIMAL: "optimal", STATUS_MAX_ITER: "max_iter",
                 STATUS_INFEASIBLE: "infeasible"}


class SolverFailure(RuntimeError):
    """The KKT system could not be factorized even after regularization."""


@dataclass(frozen=True)
class QpProblem:
    """``min y^T Q y + c^T y + const`` s.t. ``R y <= 0`` and ``y[-1] >= eps_f``."""

    Q: np.ndarray
    c: np.ndarray
    R: np.ndarray
    const: float = 0.0
    eps_f: float = EPS_F

    def __post_init__(self):
        n = self.Q.shape[0]
        if self.Q.shape != (n, n) or self.c.shape != (n,) or self.R.shape[1] != n:
            raise DimensionError(
                f"inconsistent QP shapes Q{self.Q.shape} c{self.c.shape} R{self.R.shape}"
            )

    @property
    def dim(self) -> int:
        return self.Q.shape[0]

    def objective(self, y) -> float:
        y = np.asarray(y, dtype=float)
        return float(y @ self.Q @ y + self.c @ y + self.const)

    def max_violation(self, y) -> float:
        y = np.asarray(y, dtype=float)
        v = self.eps_f - y[-1]
        if self.R.shape[0]:
            v = max(v, float(np.max(self.R @ y)))
        return float(v)


@dataclass(frozen=True)
class QpSolution:
    x_f: np.ndarray
    f: float
    objective: float
    status: str
    iterations: int
    gap: float
    polished: bool
    y: np.ndarray
    dual: np.ndarray

    @property
    def lower_bound(self) -> float:
        """Certified lower bound on the optimum (exact when polished)."""
        return self.objective if self.polished else self.objective - self.gap

    @property
    def x_r(self) -> np.ndarray:
        """Unscaled relaxed precoder ``x_{r,f} / f``."""
        return self.x_f / self.f


def assemble_full_qp(H_r, s_r, noise_energy: float, R=None, eps_f: float = EPS_F) -> QpProblem:
    """Relaxed full problem over ``[x_{r,f}; f]``.

    ``Q = diag(H_r^T H_r, noise_energy)``, ``c = -2 [H_r^T s_r; 0]``.
    Without `R` only the positivity of ``f`` is imposed.
    """
    H_r = np.asarray(H_r, dtype=float)
    s_r = np.asarray(s_r, dtype=float)
    if H_r.shape[0] != s_r.shape[0]:
        raise DimensionError("H_r and s_r row counts differ")
    n = H_r.shape[1] + 1
    Q = np.zeros((n, n))
    Q[:-1, :-1] = H_r.T @ H_r
    Q[-1, -1] = noise_energy
    c = np.zeros(n)
    c[:-1] = -2.0 * H_r.T @ s_r
    R = np.zeros((0, n)) if R is None else np.asarray(R, dtype=float)
    return QpProblem(Q, c, R, float(s_r @ s_r), eps_f)


def assemble_subproblem_qp(H_r_prime, H_r_fixed, x_r_fixed, s_r, noise_energy: float,
                           R_prime=None, eps_f: float = EPS_F) -> QpProblem:
    """Subproblem with the first ``d`` antennas fixed to `x_r_fixed`.

    The objective is ``||H' x' + f' c_fix - s_r||^2 + f'^2 noise_energy``
    with ``c_fix = H_fixed x_fixed``.
    """
    Hp = np.asarray(H_r_prime, dtype=float)
    s_r = np.asarray(s_r, dtype=float)
    x_fix = np.asarray(x_r_fixed, dtype=float)
    Hf = np.asarray(H_r_fixed, dtype=float).reshape(s_r.shape[0], x_fix.shape[0])
    cfix = Hf @ x_fix
    n = Hp.shape[1] + 1
    Q = np.empty((n, n))
    Q[:-1, :-1] = Hp.T @ Hp
    Q[:-1, -1] = Q[-1, :-1] = Hp.T @ cfix
    Q[-1, -1] = cfix @ cfix + noise_energy
    c = -2.0 * np.concatenate([Hp.T @ s_r, [cfix @ s_r]])
    R = np.zeros((0, n)) if R_prime is None else np.asarray(R_prime, dtype=float)
    return QpProblem(Q, c, R, float(s_r @ s_r), eps_f)


def joint_hessian(H_r, s_r, noise_energy: float, x_r, f: float) -> np.ndarray:
    """Hessian of ``J(x_r, f) = ||f H_r x_r - s_r||^2 + f^2 noise_energy`` at a point.

    This is the cost before the substitution ``x_{r,f} = f x_r``; it is not
    jointly convex in general.
    """
    H_r = np.asarray(H_r, dtype=float)
    x_r = np.asarray(x_r, dtype=float)
    G = H_r.T @ H_r
    n = G.shape[0]
    out = np.empty((n + 1, n + 1))
    out[:n, :n] = 2.0 * f * f * G
    out[:n, n] = out[n, :n] = 4.0 * f * G @ x_r - 2.0 * H_r.T @ np.asarray(s_r, dtype=float)
    out[n, n] = 2.0 * x_r @ G @ x_r + 2.0 * noise_energy
    return out


def joint_convexity_margin(H_r, s_r, noise_energy: float, x_r, f: float,
                           printed: bool = False) -> float:
    """Slack of the Schur-complement test ``eps >= eta^T Gamma^{-1} eta``.

    Negative values certify that the Hessian of the unsubstituted cost has
    a negative eigenvalue.  Requires ``H_r^T H_r`` to be invertible
    (``K >= M``).  With ``printed=True`` the rearranged inequality is
    evaluated in the form where the projection term is not divided by
    ``f^2``; both coincide at ``f = 1``.
    """
    H_r = np.asarray(H_r, dtype=float)
    s_r = np.asarray(s_r, dtype=float)
    x_r = np.asarray(x_r, dtype=float)
    G = H_r.T @ H_r
    Hs = H_r.T @ s_r
    proj = float(Hs @ np.linalg.solve(G, Hs))
    quad = float(x_r @ G @ x_r)
    lin = float(x_r @ Hs)
    scale = 2.0 if printed else 2.0 / (f * f)
    return 8.0 / f * lin - 6.0 * quad - scale * proj + 2.0 * noise_energy


def partial_hessian(H_r_prime, H_r_fixed, x_r_fixed, noise_energy: float) -> np.ndarray:
    """Hessian of the substituted subproblem cost in ``[x'_{r,f}; f']`` (constant)."""
    Hp = np.asarray(H_r_prime, dtype=float)
    x_fix = np.asarray(x_r_fixed, dtype=float)
    cfix = np.asarray(H_r_fixed, dtype=float).reshape(Hp.shape[0], x_fix.shape[0]) @ x_fix
    n = Hp.shape[1]
    out = np.empty((n + 1, n + 1))
    out[:n, :n] = 2.0 * Hp.T @ Hp
    out[:n, n] = out[n, :n] = 2.0 * Hp.T @ cfix
    out[n, n] = 2.0 * cfix @ cfix + 2.0 * noise_energy
    return out


def _row_sparse(R, n):
    """Padded row-sparse form of ``[R; -e_f]`` with ``h = [0; -eps]`` rows."""
    m = R.shape[0] + 1
    nnz = np.count_nonzero(R, axis=1) if R.shape[0] else np.zeros(0, int)
    width = max(1, int(nnz.max()) if nnz.size else 1)
    gidx = np.zeros((m, width), dtype=np.int64)
    gval = np.zeros((m, width))
    for r in range(R.shape[0]):
        cols = np.flatnonzero(R[r])
        gidx[r, :cols.size] = cols
        gval[r, :cols.size] = R[r, cols]
    gidx[-1, 0] = n - 1
    gval[-1, 0] = -1.0
    return gidx, gval


def solve(problem: QpProblem, tol: float = 1e-8, max_iter: int = 100,
          feas_tol: float = 1e-9, polish: bool = True) -> QpSolution:
    """Solve `problem` to relative duality gap `tol`.

    Raises
    ------
    SolverFailure
        If the Newton system stays singular after regularization.
    """
    n = problem.dim
    gidx, gval = _row_sparse(problem.R, n)
    h = np.zeros(gidx.shape[0])
    h[-1] = -problem.eps_f
    P = 2.0 * problem.Q
    y = np.empty(n)
    s = np.empty(gidx.shape[0])
    z = np.empty(gidx.shape[0])
    status, iters, gap = _ipm(P, problem.c, gidx, gval, h, problem.const, tol, feas_tol,
                              max_iter, y, s, z)
    if status == STATUS_SINGULAR:
        raise SolverFailure("interior-point Newton system is singular")
    polished = False
    if polish:
        yp = np.empty(n)
        if _polish(P, problem.c, gidx, gval, h, s, z, yp):
            y = yp
            polished = True
    obj = problem.objective(y)
    if polished:
        gap = 0.0
    return QpSolution(y[:-1].copy(), float(y[-1]), obj, _STATUS_NAMES[status], int(iters),
                      float(gap), polished, y, z)


# ---------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def _cholesky(K, n):
    for j in range(n):
        d = K[j, j]
        for k in range(j):
            d -= K[j, k] * K[j, k]
        if not d > 0.0:
            return False
        d = np.sqrt(d)
        K[j, j] = d
        for i in range(j + 1, n):
            v = K[i, j]
            for k in range(j):
                v -= K[i, k] * K[j, k]
            K[i, j] = v / d
    return True


@njit(cache=True)
def _chol_solve(L, b, n, out):
    for i in range(n):
        v = b[i]
        for k in range(i):
            v -= L[i, k] * out[k]
        out[i] = v / L[i, i]
    for i in range(n - 1, -1, -1):
        v = out[i]
        for k in range(i + 1, n):
            v -= L[k, i] * out[k]
        out[i] = v / L[i, i]


@njit(cache=True)
def _gmul(gidx, gval, y, out):
    m, w = gidx.shape
    for r in range(m):
        v = 0.0
        for a in range(w):
            v += gval[r, a] * y[gidx[r, a]]
        out[r] = v


@njit(cache=True)
def _gtmul(gidx, gval, u, out):
    m, w = gidx.shape
    out[:] = 0.0
    for r in range(m):
        for a in range(w):
            out[gidx[r, a]] += gval[r, a] * u[r]


@njit(cache=True)
def _max_step(v, dv):
    a = 1.0
    for i in range(v.shape[0]):
        if dv[i] < 0.0:
            t = -v[i] / dv[i]
            if t < a:
                a = t
    return a


@njit(cache=True)
def _norm(v):
    return np.sqrt(np.sum(v * v))


@njit(cache=True)
def _factor(P, gidx, gval, wts, n, L, reg):
    m, w = gidx.shape
    L[:, :] = P
    for r in range(m):
        wr = wts[r]
        for a in range(w):
            ia = gidx[r, a]
            va = wr * gval[r, a]
            if va == 0.0:
                continue
            for b in range(w):
                L[ia, gidx[r, b]] += va * gval[r, b]
    if reg > 0.0:
        for i in range(n):
            L[i, i] += reg
    return _cholesky(L, n)


@njit(cache=True)
def _ipm(P, q, gidx, gval, h, const, tol, feas_tol, max_iter, y, s, z):
    """Mehrotra predictor-corrector; returns (status, iterations, gap)."""
    n = P.shape[0]
    m = gidx.shape[0]
    L = np.empty((n, n))
    rd = np.empty(n)
    rp = np.empty(m)
    gy = np.empty(m)
    tmp_m = np.empty(m)
    tmp_n = np.empty(n)
    rhs = np.empty(n)
    dy = np.empty(n)
    ds = np.empty(m)
    dz = np.empty(m)
    rc = np.empty(m)
    wts = np.ones(m)

    scale = 0.0
    for i in range(n):
        scale = max(scale, abs(P[i, i]))
    scale = max(scale, 1.0)

    # initial point: minimize 1/2 y'Py + q'y + 1/2 ||Gy - h||^2
    ok = False
    reg = 0.0
    for attempt in range(8):
        if _factor(P, gidx, gval, wts, n, L, reg):
            ok = True
            break
        reg = scale * 1e-14 * 100.0 ** attempt
    if not ok:
        return STATUS_SINGULAR, 0, np.inf
    _gtmul(gidx, gval, h, tmp_n)
    for i in range(n):
        rhs[i] = -q[i] + tmp_n[i]
    _chol_solve(L, rhs, n, y)
    _gmul(gidx, gval, y, gy)
    for r in range(m):
        rp[r] = gy[r] - h[r]
    amin = np.inf
    for r in range(m):
        amin = min(amin, -rp[r])
    for r in range(m):
        s[r] = -rp[r]
        z[r] = rp[r]
    if amin <= 0.0:
        for r in range(m):
            s[r] += 1.0 - amin
    zmin = np.inf
    for r in range(m):
        zmin = min(zmin, z[r])
    if zmin <= 0.0:
        for r in range(m):
            z[r] += 1.0 - zmin

    qn = max(1.0, _norm(q))
    hn = max(1.0, _norm(h))
    status = STATUS_MAX_ITER
    gap = np.inf
    it = 0
    for it in range(max_iter + 1):
        # residuals
        for i in range(n):
            v = q[i]
            for j in range(n):
                v += P[i, j] * y[j]
            rd[i] = v
        _gtmul(gidx, gval, z, tmp_n)
        for i in range(n):
            rd[i] += tmp_n[i]
        _gmul(gidx, gval, y, gy)
        for r in range(m):
            rp[r] = gy[r] + s[r] - h[r]
        gap = 0.0
        for r in range(m):
            gap += s[r] * z[r]
        pobj = const
        for i in range(n):
            v = 0.0
            for j in range(n):
                v += P[i, j] * y[j]
            pobj += 0.5 * v * y[i] + q[i] * y[i]
        if (_norm(rd) <= feas_tol * qn and _norm(rp) <= feas_tol * hn
                and gap <= tol * max(1.0, abs(pobj))):
            status = STATUS_OPTIMAL
            break
        if it == max_iter:
            break
        mu = gap / m

        for r in range(m):
            wts[r] = z[r] / s[r]
        ok = False
        reg = 0.0
        for attempt in range(8):
            if _factor(P, gidx, gval, wts, n, L, reg):
                ok = True
                break
            reg = scale * 1e-14 * 100.0 ** attempt
        if not ok:
            # numerical stall near the solution; keep the current iterate
            return STATUS_MAX_ITER, it, gap

        # predictor
        for r in range(m):
            rc[r] = s[r] * z[r]
        _newton(L, gidx, gval, rd, rp, rc, s, z, n, m, rhs, tmp_m, tmp_n, dy, ds, dz)
        a_aff = min(_max_step(s, ds), _max_step(z, dz))
        mu_aff = 0.0
        for r in range(m):
            mu_aff += (s[r] + a_aff * ds[r]) * (z[r] + a_aff * dz[r])
        mu_aff /= m
        sigma = (mu_aff / mu) ** 3

        # corrector
        for r in range(m):
            rc[r] = s[r] * z[r] + ds[r] * dz[r] - sigma * mu
        _newton(L, gidx, gval, rd, rp, rc, s, z, n, m, rhs, tmp_m, tmp_n, dy, ds, dz)
        a = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(z, dz)))
        for i in range(n):
            y[i] += a * dy[i]
        for r in range(m):
            s[r] += a * ds[r]
            z[r] += a * dz[r]
    return status, it, gap


@njit(cache=True)
def _newton(L, gidx, gval, rd, rp, rc, s, z, n, m, rhs, tmp_m, tmp_n, dy, ds, dz):
    # (P + G'WG) dy = -rd + G' S^-1 (rc - Z rp)
    for r in range(m):
        tmp_m[r] = (rc[r] - z[r] * rp[r]) / s[r]
    _gtmul(gidx, gval, tmp_m, tmp_n)
    for i in range(n):
        rhs[i] = -rd[i] + tmp_n[i]
    _chol_solve(L, rhs, n, dy)
    _gmul(gidx, gval, dy, ds)
    for r in range(m):
        ds[r] = -rp[r] - ds[r]
        dz[r] = (-rc[r] - z[r] * ds[r]) / s[r]


@njit(cache=True)
def _lu_solve(A, b, N):
    """Gaussian elimination with partial pivoting; returns (ok, x)."""
    x = b.copy()
    amax = 0.0
    for i in range(N):
        for j in range(N):
            amax = max(amax, abs(A[i, j]))
    thresh = 1e-13 * max(amax, 1e-300)
    for k in range(N):
        p = k
        for i in range(k + 1, N):
            if abs(A[i, k]) > abs(A[p, k]):
                p = i
        if abs(A[p, k]) <= thresh:
            return False, x
        if p != k:
            for j in range(N):
                t = A[k, j]
                A[k, j] = A[p, j]
                A[p, j] = t
            t = x[k]
            x[k] = x[p]
            x[p] = t
        for i in range(k + 1, N):
            f = A[i, k] / A[k, k]
            if f != 0.0:
                for j in range(k, N):
                    A[i, j] -= f * A[k, j]
                x[i] -= f * x[k]
    for i in range(N - 1, -1, -1):
        v = x[i]
        for j in range(i + 1, N):
            v -= A[i, j] * x[j]
        x[i] = v / A[i, i]
    return True, x


@njit(cache=True)
def _polish(P, q, gidx, gval, h, s, z, y_out):
    """Solve the equality-constrained QP on the guessed active set.

    Returns True only if the result satisfies every KKT condition, in
    which case `y_out` holds the exact optimizer.
    """
    n = P.shape[0]
    m, w = gidx.shape
    na = 0
    for r in range(m):
        if s[r] < z[r]:
            na += 1
    if na > n:
        return False
    act = np.empty(na, dtype=np.int64)
    k = 0
    for r in range(m):
        if s[r] < z[r]:
            act[k] = r
            k += 1
    N = n + na
    A = np.zeros((N, N))
    b = np.zeros(N)
    for i in range(n):
        for j in range(n):
            A[i, j] = P[i, j]
        b[i] = -q[i]
    for k in range(na):
        r = act[k]
        for a in range(w):
            c = gidx[r, a]
            A[n + k, c] += gval[r, a]
            A[c, n + k] += gval[r, a]
        b[n + k] = h[r]
    ok, sol = _lu_solve(A, b, N)
    if not ok:
        return False
    lam_scale = 1.0
    for k in range(na):
        lam_scale = max(lam_scale, abs(sol[n + k]))
    for k in range(na):
        if sol[n + k] < -1e-10 * lam_scale:
            return False
    for i in range(n):
        y_out[i] = sol[i]
    ymax = 1.0
    for i in range(n):
        ymax = max(ymax, abs(y_out[i]))
    for r in range(m):
        v = -h[r]
        for a in range(w):
            v += gval[r, a] * y_out[gidx[r, a]]
        if v > 1e-12 * ymax:
            return False
    return True
