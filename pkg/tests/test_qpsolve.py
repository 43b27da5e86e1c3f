import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qmmse.core import draw_channel, make_alphabet, stack_real, stack_real_matrix, transmit_alphabet
from qmmse.polytope import build_polyhedron, subproblem_columns
from qmmse.qpsolve import (
    EPS_F,
    QpProblem,
    assemble_full_qp,
    assemble_subproblem_qp,
    joint_convexity_margin,
    joint_hessian,
    partial_hessian,
    solve,
)

cvxopt = pytest.importorskip("cvxopt")
cvxopt.solvers.options.update(show_progress=False, abstol=1e-12, reltol=1e-12, feastol=1e-12,
                              maxiters=200)

FIXTURES = Path(__file__).parent / "fixtures"


def _instance(seed, K=2, M=3, alpha=8, snr_db=5.0, d=0):
    rng = np.random.default_rng(seed)
    H = draw_channel(K, M, rng).H
    s = make_alphabet(8).points[rng.integers(0, 8, K)]
    noise = K * 10 ** (-snr_db / 10)
    Hr, sr = stack_real_matrix(H), stack_real(s)
    P = build_polyhedron(M, alpha)
    if d == 0:
        return assemble_full_qp(Hr, sr, noise, P.R)
    X = transmit_alphabet(alpha, M)
    x_fix = stack_real(X.points[rng.integers(0, alpha, d)])
    _, _, Rp = subproblem_columns(P, d)
    return assemble_subproblem_qp(Hr[:, 2 * d:], Hr[:, :2 * d], x_fix, sr, noise, Rp)


def _cvxopt_value(prob: QpProblem):
    n = prob.dim
    G = np.vstack([prob.R, -np.eye(n)[-1:]])
    h = np.concatenate([np.zeros(prob.R.shape[0]), [-prob.eps_f]])
    sol = cvxopt.solvers.qp(cvxopt.matrix(2 * prob.Q), cvxopt.matrix(prob.c),
                            cvxopt.matrix(G), cvxopt.matrix(h))
    y = np.array(sol["x"]).ravel()
    return prob.objective(y)


def test_full_qp_layout():
    prob = _instance(0)
    n = prob.dim
    assert np.all(prob.Q[-1, :-1] == 0)
    assert prob.Q[-1, -1] == pytest.approx(2 * 10 ** -0.5)
    assert prob.c[-1] == 0.0
    np.testing.assert_allclose(prob.Q, prob.Q.T)
    assert n == 7


def test_zero_channel_gives_trivial_bound():
    H = np.zeros((2, 2))
    prob = assemble_full_qp(H, np.array([1.0, 0.0]), 1.0, build_polyhedron(1, 4).R)
    sol = solve(prob)
    assert sol.objective == pytest.approx(1.0, abs=1e-8)
    # objective 1 + f^2 pins f only to ~sqrt(tolerance)
    assert EPS_F * (1 - 1e-9) <= sol.f <= 1e-4


@pytest.mark.parametrize("d", [0, 1, 2])
def test_matches_cvxopt(d):
    worst = 0.0
    for seed in range(40):
        prob = _instance(seed, K=2, M=4, d=d, snr_db=[-5.0, 5.0, 15.0][seed % 3])
        ours = solve(prob, tol=1e-11, feas_tol=1e-10)
        ref = _cvxopt_value(prob)
        worst = max(worst, abs(ours.objective - ref) / (1 + abs(ref)))
        assert ours.lower_bound <= ref + 1e-9
        assert prob.max_violation(ours.y) <= 1e-8
    assert worst < 1e-7


def test_subproblem_with_nothing_fixed_equals_full():
    rng = np.random.default_rng(3)
    H = draw_channel(2, 3, rng).H
    Hr, sr = stack_real_matrix(H), stack_real(make_alphabet(4).points[[0, 1]])
    P = build_polyhedron(3, 4)
    full = assemble_full_qp(Hr, sr, 0.3, P.R)
    sub = assemble_subproblem_qp(Hr, Hr[:, :0], np.zeros(0), sr, 0.3, P.R)
    np.testing.assert_allclose(full.Q, sub.Q)
    np.testing.assert_allclose(full.c, sub.c)


@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(2, 5))
def test_partial_hessian_is_psd(seed, K, M):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(0, M))
    H = draw_channel(K, M, rng).H
    Hr = stack_real_matrix(H)
    X = transmit_alphabet(8, M)
    x_fix = stack_real(X.points[rng.integers(0, 8, d)])
    Hes = partial_hessian(Hr[:, 2 * d:], Hr[:, :2 * d], x_fix, K * rng.uniform(1e-3, 10))
    assert np.linalg.eigvalsh(Hes).min() >= -1e-8 * max(1.0, np.abs(Hes).max())


@given(st.integers(0, 2**32 - 1))
def test_projection_eigenvalues(seed):
    rng = np.random.default_rng(seed)
    Hp = stack_real_matrix(draw_channel(3, 2, rng).H)
    Pm = Hp @ np.linalg.solve(Hp.T @ Hp, Hp.T)
    ev = np.linalg.eigvalsh((Pm + Pm.T) / 2)
    assert np.all(np.minimum(np.abs(ev), np.abs(ev - 1)) < 1e-9)


def test_committed_fixture_is_not_jointly_convex():
    fx = json.loads((FIXTURES / "joint_nonconvex.json").read_text())
    H = np.array(fx["H_re"]) + 1j * np.array(fx["H_im"])
    s = np.array(fx["s_re"]) + 1j * np.array(fx["s_im"])
    x = np.array(fx["x_re"]) + 1j * np.array(fx["x_im"])
    Hr, sr, xr = stack_real_matrix(H), stack_real(s), stack_real(x)
    args = (Hr, sr, fx["noise_energy"], xr, fx["f"])
    assert joint_convexity_margin(*args) < 0
    assert joint_convexity_margin(*args, printed=True) < 0
    assert np.linalg.eigvalsh(joint_hessian(*args)).min() < 0


def test_margin_agrees_with_hessian_sign(rng):
    for _ in range(200):
        H = draw_channel(2, 2, rng).H
        Hr = stack_real_matrix(H)
        sr = stack_real(make_alphabet(4).points[rng.integers(0, 4, 2)])
        xr = rng.standard_normal(4) * 0.5
        f = rng.uniform(0.2, 3.0)
        margin = joint_convexity_margin(Hr, sr, 0.2, xr, f)
        lam = np.linalg.eigvalsh(joint_hessian(Hr, sr, 0.2, xr, f)).min()
        if abs(margin) > 1e-6:
            assert (margin >= 0) == (lam >= -1e-9)
