import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qmmse.core import (
    ConfigurationError,
    draw_channel,
    make_alphabet,
    stack_real,
    stack_real_matrix,
    transmit_alphabet,
)
from qmmse.detectors import compute_statistics, conditional_error_mean
from qmmse.polytope import build_polyhedron
from qmmse.precoders import (
    BranchAndBoundConfig,
    PrecoderCache,
    build_lookup_table,
    discrete_mse,
    exhaustive_search,
    load_table,
    mmse_branch_and_bound,
    mmse_continuous,
    mmse_mapped,
    optimal_f_prime,
    save_table,
    zfp_quantized,
)


def _draw(rng, K, M, alpha_s=8):
    H = draw_channel(K, M, rng).H
    s = make_alphabet(alpha_s).points[rng.integers(0, alpha_s, K)]
    return H, s


# closed forms -------------------------------------------------------------

def test_f_prime_examples():
    Hr = stack_real_matrix(np.array([[1.0 + 0j]]))
    x = stack_real([1.0])
    s = stack_real([1.0])
    assert optimal_f_prime(Hr, x, 0.0, s) == pytest.approx(1.0)
    assert optimal_f_prime(Hr, x, 1.0, s) == pytest.approx(0.5)


def test_f_prime_matches_grid_minimum(rng):
    H, s = _draw(rng, 2, 3)
    x = transmit_alphabet(8, 3).points[rng.integers(0, 8, 3)]
    mse, f = discrete_mse(H, x, s, 0.4)
    grid = np.linspace(0, 3 * max(f, 0.1), 20001)
    vals = [np.linalg.norm(g * (H @ x) - s) ** 2 + g * g * 0.4 for g in grid]
    assert mse == pytest.approx(min(vals), abs=1e-6)


def test_negative_correlation_gets_zero_scaling():
    H = np.eye(1, dtype=complex)
    mse, f = discrete_mse(H, np.array([-1.0 + 0j]), np.array([1.0 + 0j]), 0.1)
    assert f == 0.0 and mse == pytest.approx(1.0)


def test_zfp_identity_channel():
    S = make_alphabet(8)
    for p in range(8):
        sol = zfp_quantized(np.eye(1, dtype=complex), S.points[[p]], 8)
        np.testing.assert_array_equal(sol.index, [p])
        np.testing.assert_allclose(sol.x, S.points[[p]])


def test_zfp_rank_deficient_flag():
    H = np.array([[1, 1j], [1, 1j]], dtype=complex)
    sol = zfp_quantized(H, make_alphabet(4).points[[0, 1]], 4)
    assert sol.rank_deficient


def test_mmse_continuous_scalar():
    sol = mmse_continuous(np.eye(1, dtype=complex), np.array([1.0 + 0j]), 1.0)
    assert sol.f == pytest.approx(0.5)
    np.testing.assert_allclose(sol.x, [1.0])


def test_mmse_continuous_energy(rng):
    for _ in range(100):
        K, M = int(rng.integers(1, 4)), int(rng.integers(3, 9))
        H, s = _draw(rng, K, M)
        sol = mmse_continuous(H, s, 10 ** rng.uniform(-2, 1))
        assert np.linalg.norm(sol.x) ** 2 == pytest.approx(1.0, abs=1e-8)


def test_mmse_continuous_rejects_zero_data():
    with pytest.raises(ConfigurationError):
        mmse_continuous(np.eye(2, dtype=complex), np.zeros(2, dtype=complex), 1.0)


# discrete precoders -------------------------------------------------------

def test_bnb_equals_exhaustive_qpsk(rng):
    P = build_polyhedron(3, 4)
    for _ in range(100):
        H, s = _draw(rng, 2, 3, alpha_s=4)
        sig = 10 ** -0.5
        bb = mmse_branch_and_bound(H, s, sig, P)
        ex = exhaustive_search(H, s, sig, 4)
        assert bb.mse == pytest.approx(ex.mse, rel=1e-9, abs=1e-12)
        assert bb.mse_lb <= ex.mse + 1e-9
        assert bb.optimal
        assert bb.bounds_evaluated >= 1


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1), st.sampled_from([-5.0, 5.0, 15.0]),
       st.sampled_from([(2, 3, 8), (1, 4, 4), (3, 3, 4)]))
def test_bnb_sandwich_and_dominance(seed, snr_db, dims):
    K, M, alpha = dims
    rng = np.random.default_rng(seed)
    H, s = _draw(rng, K, M)
    sig = 10 ** (-snr_db / 10)
    P = build_polyhedron(M, alpha)
    bb = mmse_branch_and_bound(H, s, sig, P)
    ex = exhaustive_search(H, s, sig, alpha)
    mp = mmse_mapped(H, s, sig, P)
    zf = zfp_quantized(H, s, alpha, sig)
    tol = 1e-9 * (1 + ex.mse)
    assert bb.mse_lb <= ex.mse + tol
    assert abs(bb.mse - ex.mse) <= tol
    assert bb.mse <= mp.mse + tol
    assert bb.mse <= zf.mse + tol
    # the mapped vector's MSE is an upper bound with the same root relaxation
    assert mp.mse_lb == pytest.approx(bb.mse_lb, abs=1e-12)
    recomputed, _ = discrete_mse(H, bb.x, s, K * sig)
    assert recomputed == pytest.approx(bb.mse, rel=1e-12)


def test_mapped_beats_zfp_on_average(rng):
    P = build_polyhedron(4, 8)
    diff = []
    for _ in range(200):
        H, s = _draw(rng, 2, 4)
        diff.append(zfp_quantized(H, s, 8, 0.1).mse - mmse_mapped(H, s, 0.1, P).mse)
    assert np.mean(diff) > 0


def test_bnb_shortcut_counts_one_bound():
    # single antenna, single user: the relaxation is tight at a vertex
    H = np.array([[1.0 + 0j]])
    s = make_alphabet(8).points[[2]]
    sol = mmse_branch_and_bound(H, s, 0.1, build_polyhedron(1, 8))
    assert sol.bounds_evaluated == 1
    np.testing.assert_array_equal(sol.index, [2])


def test_bounds_grow_with_snr(rng):
    P = build_polyhedron(4, 8)
    low, high = [], []
    for _ in range(200):
        H, s = _draw(rng, 2, 4)
        low.append(mmse_branch_and_bound(H, s, 10.0, P).bounds_evaluated)
        high.append(mmse_branch_and_bound(H, s, 10 ** -1.5, P).bounds_evaluated)
    assert np.mean(low) < np.mean(high)


def test_candidate_limit_gives_partial_result(rng):
    H, s = _draw(rng, 3, 8)
    cfg = BranchAndBoundConfig(max_candidates=1)
    sol = mmse_branch_and_bound(H, s, 1e-3, build_polyhedron(8, 8), cfg)
    if sol.bounds_evaluated > 1:
        assert sol.partial and not sol.optimal


def test_exhaustive_limit():
    with pytest.raises(ConfigurationError):
        exhaustive_search(np.ones((1, 8), dtype=complex), np.ones(1, dtype=complex), 1.0, 8,
                          max_candidates=1000)


# lookup tables ------------------------------------------------------------

def test_table_symmetry_matches_direct_solves(rng):
    H = draw_channel(2, 3, rng).H
    a = build_lookup_table(H, 0.2, alpha_s=4, alpha_x=4)
    b = build_lookup_table(H, 0.2, alpha_s=4, alpha_x=4, enforce_symmetry=False)
    np.testing.assert_allclose(a.mse, b.mse, rtol=1e-9)
    assert a.symmetry_order == 4
    assert np.count_nonzero(a.bounds) == 4  # one solve per rotation orbit


def test_mixed_cardinalities_use_gcd(rng):
    H = draw_channel(2, 3, rng).H
    t = build_lookup_table(H, 0.2, alpha_s=8, alpha_x=4)
    ref = build_lookup_table(H, 0.2, alpha_s=8, alpha_x=4, enforce_symmetry=False)
    assert t.symmetry_order == 4
    np.testing.assert_allclose(t.mse, ref.mse, rtol=1e-9)


def test_table_row_order():
    H = draw_channel(2, 2, 0).H
    t = build_lookup_table(H, 0.1, "zfp", alpha_s=4, alpha_x=4)
    idx = t.symbol_indices()
    np.testing.assert_array_equal(idx[:5], [[0, 0], [0, 1], [0, 2], [0, 3], [1, 0]])
    assert t.row([1, 0]) == 4
    np.testing.assert_array_equal(t.rows(idx), np.arange(16))


def test_table_size_budget():
    with pytest.raises(ConfigurationError):
        build_lookup_table(np.ones((5, 5), dtype=complex), 1.0, alpha_s=8, alpha_x=8)


def test_cache_counts_solves(rng):
    H = draw_channel(2, 3, rng).H
    cache = PrecoderCache(H, 0.1, 8, 8)
    for s_idx in itertools.product(range(8), repeat=2):
        cache(s_idx)
    assert cache.solves == 8


def test_zero_mean_error_exact():
    H = draw_channel(2, 2, 7).H
    t = build_lookup_table(H, 0.05, alpha_s=4, alpha_x=4)
    for k in range(2):
        st_k = compute_statistics(t, H, 0.05, k)
        assert np.abs(conditional_error_mean(st_k)).max() < 1e-9


@pytest.mark.parametrize("suffix", [".csv", ".npz"])
def test_table_round_trip(tmp_path, suffix):
    H = draw_channel(2, 2, 3).H
    t = build_lookup_table(H, 0.1, alpha_s=4, alpha_x=4)
    stats = [compute_statistics(t, H, 0.1, k) for k in range(2)]
    path = tmp_path / f"table{suffix}"
    save_table(t, path, stats=stats)
    t2, st2 = load_table(path)
    np.testing.assert_array_equal(t2.x_index, t.x_index)
    np.testing.assert_array_equal(t2.f, t.f)
    np.testing.assert_array_equal(t2.mse, t.mse)
    np.testing.assert_array_equal(t2.H, t.H)
    assert t2.channel_hash == t.channel_hash
    np.testing.assert_array_equal(st2[1]["cov"], stats[1].cov)
    assert complex(np.asarray(st2[0]["h_eff"]).ravel()[0]) == stats[0].h_eff
