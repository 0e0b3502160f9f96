import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radiomap.posteval import (
    NormalizationError,
    canonical_scaling,
    disaggregate_full,
    full_spectrum_locations,
    match_permutation,
    nae_map,
    nae_psd,
    nae_slf,
    permutation_costs,
    reconstruct_map,
    refine_slf,
    tps_eval,
    tps_fit,
)
from radiomap.sampling import random_fiber_mask
from radiomap.tensor_core import Ll1Factors, ll1_synthesize, unfold

from oracles import tps_dense


def brute_force_perm(c_true, c_hat):
    cost = permutation_costs(c_true, c_hat)
    R = cost.shape[0]
    return min(itertools.permutations(range(R)), key=lambda p: cost[np.arange(R), list(p)].sum())


# matching and metrics

def test_identity_permutation(rng):
    C = rng.random((10, 4))
    np.testing.assert_array_equal(match_permutation(C, C), np.arange(4))


def test_swap_with_scales_is_undone(rng):
    C = rng.random((10, 2))
    C_hat = C[:, [1, 0]] * [3.0, 0.5]
    perm = match_permutation(C, C_hat)
    np.testing.assert_array_equal(perm, [1, 0])
    assert nae_psd(C, C_hat[:, perm]) == pytest.approx(0.0, abs=1e-15)


def test_recover_random_permutation(rng):
    for _ in range(20):
        R = int(rng.integers(2, 7))
        C = rng.random((12, R))
        perm = rng.permutation(R)
        C_hat = C[:, perm] * rng.uniform(0.1, 10, R)
        found = match_permutation(C, C_hat)
        np.testing.assert_array_equal(C_hat[:, found], C_hat[:, np.argsort(perm)])
        assert tuple(found) == brute_force_perm(C, C_hat)
        np.testing.assert_array_equal(found, match_permutation(C, C_hat, method="assignment"))


def test_large_R_uses_assignment(rng):
    C = rng.random((30, 10))
    perm = rng.permutation(10)
    found = match_permutation(C, C[:, perm])
    np.testing.assert_array_equal(perm[found], np.arange(10))


def test_zero_column_rejected(rng):
    C = rng.random((5, 2))
    Z = C.copy()
    Z[:, 1] = 0
    with pytest.raises(NormalizationError):
        match_permutation(C, Z)
    with pytest.raises(NormalizationError):
        nae_map(np.zeros((2, 2, 2)), np.ones((2, 2, 2)))


def test_nae_examples(rng):
    C = rng.random((8, 3))
    assert nae_psd(C, C) == 0.0
    assert nae_psd(C, 2 * C) == pytest.approx(0.0, abs=1e-15)
    assert nae_psd(np.array([[1.0], [0.0]]), np.array([[0.5], [0.5]])) == pytest.approx(1.0)
    x = rng.random((4, 5, 3))
    assert nae_map(x, 2 * x) == pytest.approx(1.0)
    S = [rng.random((4, 5)) for _ in range(2)]
    assert nae_slf(S, [3 * s for s in S]) == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), R=st.integers(1, 6))
def test_matching_invariance(seed, R):
    g = np.random.default_rng(seed)
    C = g.random((9, R)) + 0.01
    perm = g.permutation(R)
    lam = g.uniform(0.01, 100, R)
    C_hat = C[:, perm] * lam
    found = match_permutation(C, C_hat)
    assert nae_psd(C, C_hat[:, found]) <= 1e-15
    assert tuple(found) == brute_force_perm(C, C_hat)
    cost = permutation_costs(C, C_hat)
    other = match_permutation(C, C_hat, method="assignment")
    assert cost[np.arange(R), found].sum() == pytest.approx(cost[np.arange(R), other].sum(), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_nae_ranges(seed):
    g = np.random.default_rng(seed)
    a, b = g.standard_normal((6, 3)), g.standard_normal((6, 3))
    assert 0 <= nae_psd(a, b) <= 2 + 1e-12
    assert nae_map(g.random((2, 3, 4)), g.random((2, 3, 4))) >= 0


def test_canonical_scaling_preserves_product(rng):
    S, C = rng.standard_normal((20, 3)), rng.standard_normal((6, 3))
    S2, C2, scales = canonical_scaling(S, C)
    np.testing.assert_allclose(S2 @ C2.T, S @ C.T, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(np.abs(C2).sum(axis=0), 1.0)
    assert np.all(C2.sum(axis=0) >= 0)


# SLF refinement

def test_refine_exact_rows(rng):
    S, C = rng.random((30, 3)), rng.random((8, 3))
    np.testing.assert_allclose(refine_slf(S @ C.T, C), S, atol=1e-10)


def test_refine_single_emitter_projection(rng):
    c = rng.random((7, 1))
    X = rng.random((5, 7))
    expect = X @ c[:, 0] / np.sum(c**2)
    np.testing.assert_allclose(refine_slf(X, c)[:, 0], expect, rtol=1e-12)


def test_refine_noisy_rows_vs_lstsq(rng):
    C = rng.random((9, 3))
    X = rng.random((12, 9))
    ref = np.linalg.lstsq(C, X.T, rcond=None)[0].T
    assert np.linalg.norm(refine_slf(X, C) - ref) <= 1e-8 * np.linalg.norm(ref)


def test_refine_rank_deficient():
    C = np.ones((5, 2))
    with pytest.raises(np.linalg.LinAlgError):
        refine_slf(np.ones((3, 5)), C)


# thin-plate splines

def test_tps_reproduces_affine(rng):
    pts = rng.uniform(0, 10, (25, 2))
    vals = 2 + 3 * pts[:, 0] - pts[:, 1]
    m = tps_fit(pts, vals)
    assert np.max(np.abs(m.kernel_weights)) < 1e-8
    np.testing.assert_allclose(m.affine, [2, 3, -1], atol=1e-8)
    grid = tps_eval(m, (11, 11))
    ii, jj = np.meshgrid(np.arange(11), np.arange(11), indexing="ij")
    np.testing.assert_allclose(grid, 2 + 3 * ii - jj, atol=1e-8)


def test_tps_interpolates_nodes_and_side_conditions(rng):
    pts = rng.uniform(0, 20, (30, 2))
    vals = np.sin(pts[:, 0] / 3) + np.cos(pts[:, 1] / 5)
    m = tps_fit(pts, vals, smoothing=0.0)
    assert np.max(np.abs(m(pts) - vals)) <= 1e-6 * np.max(np.abs(vals))
    w = m.kernel_weights
    assert abs(w.sum()) < 1e-8
    np.testing.assert_allclose(w @ m.nodes, 0, atol=1e-8)


@pytest.mark.parametrize("smoothing", [0.0, 1e-3, 0.5])
def test_tps_midpoints_match_dense_oracle(rng, smoothing):
    pts = rng.uniform(0, 10, (15, 2))
    vals = rng.standard_normal(15)
    m = tps_fit(pts, vals, smoothing)
    mids = (pts[:-1] + pts[1:]) / 2
    np.testing.assert_allclose(m(mids), tps_dense(pts, vals, smoothing, mids), atol=1e-8, rtol=1e-8)


def test_tps_duplicates_are_averaged():
    pts = np.array([[0, 0], [1, 0], [0, 1], [0, 0]], float)
    m = tps_fit(pts, [1.0, 2.0, 3.0, 3.0])
    assert m([[0, 0]])[0] == pytest.approx(2.0)


def test_tps_rejects_collinear_and_bad_input():
    with pytest.raises(ValueError):
        tps_fit([[0, 0], [1, 1], [2, 2]], [1, 2, 3])
    with pytest.raises(ValueError):
        tps_fit([[0, 0], [1, 0]], [1, 2])
    with pytest.raises(ValueError):
        tps_fit([[0, 0], [1, 0], [0, 1]], [1, 2, 3], smoothing=-1)


# reconstruction

def test_reconstruct_truth(rng):
    f = Ll1Factors.random((6, 5, 4), 2, 3, rng)
    x = reconstruct_map(f.slfs(), f.C)
    assert np.max(np.abs(x - ll1_synthesize(f))) < 1e-10


def test_reconstruct_unit_spectrum():
    x = reconstruct_map([np.ones((3, 2))], np.array([[1.0], [0.0], [0.0]]))
    np.testing.assert_array_equal(x[:, :, 0], 1.0)
    assert not x[:, :, 1:].any()


def test_reconstruct_entrywise(rng):
    S = [rng.random((4, 3)) for _ in range(2)]
    C = rng.random((5, 2))
    x = reconstruct_map(S, C)
    for i, j, k in itertools.product(range(4), range(3), range(5)):
        assert x[i, j, k] == pytest.approx(S[0][i, j] * C[k, 0] + S[1][i, j] * C[k, 1], abs=1e-12)


# full pipeline

def exact_problem(rng, dims=(12, 11, 6)):
    g = np.random.default_rng(rng.integers(1 << 30))
    A = [g.random((dims[0], 2)) for _ in range(2)]
    B = [g.random((dims[1], 2)) for _ in range(2)]
    return Ll1Factors(A, B, g.random((dims[2], 2)))


def test_disaggregate_exact_full_observation(rng):
    f = exact_problem(rng)
    x = ll1_synthesize(f)
    # estimated factors equal the truth up to permutation and scaling
    est = Ll1Factors([f.A[1] * 2, f.A[0]], [f.B[1], f.B[0] * -1], f.C[:, [1, 0]] * [0.5, -1])
    out = disaggregate_full(est, x, np.ones(x.shape), c_true=f.C, smoothing=0.0)
    assert out.refined_locations == 12 * 11
    S_true = f.slfs()
    assert nae_slf(S_true, out.slfs_hat) < 1e-10
    assert nae_map(x, out.map_hat) < 1e-10
    np.testing.assert_array_equal(out.permutation, [1, 0])
    x3 = unfold(out.map_hat, 3)
    S = np.column_stack([s.ravel(order="F") for s in out.slfs_hat])
    assert np.linalg.norm(x3 - S @ out.psd_hat.T) <= 1e-10 * np.linalg.norm(x3)


def test_disaggregate_falls_back_without_full_spectra(rng):
    f = exact_problem(rng)
    x = ll1_synthesize(f)
    mask = random_fiber_mask(x.shape, 3, 0).weights  # q < K, so no full spectrum
    assert not full_spectrum_locations(mask).any()
    out = disaggregate_full(f, x * mask, mask, c_true=f.C)
    assert out.refined_locations == 0
    for a, b in zip(out.slfs_hat, out.raw_slfs):
        np.testing.assert_array_equal(a, b)
    assert nae_map(x, out.map_hat) < 1e-12


def test_disaggregate_without_reference_keeps_order(rng):
    f = exact_problem(rng)
    x = ll1_synthesize(f)
    out = disaggregate_full(f, x, np.ones(x.shape), refine=False)
    np.testing.assert_array_equal(out.permutation, [0, 1])
