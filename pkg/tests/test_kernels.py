import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from rkhsplan.kernels import (KernelConfig, WeightedSampleSet, kernel_matrix, laplace_kernel,
                              median_heuristic, mmd_sq, mmd_to_dirac, mmd_to_dirac_batch,
                              weighted_laplace_energy)


def brute_mmd(A, wa, B, wb, sigma):
    """Double sums with plain loops, no vectorization."""
    def k(x, y):
        return math.exp(-sum(abs(p - q) for p, q in zip(x, y)) / sigma)

    aa = sum(wa[i] * wa[j] * k(A[i], A[j]) for i in range(len(A)) for j in range(len(A)))
    ab = sum(wa[i] * wb[j] * k(A[i], B[j]) for i in range(len(A)) for j in range(len(B)))
    bb = sum(wb[i] * wb[j] * k(B[i], B[j]) for i in range(len(B)) for j in range(len(B)))
    return aa - 2 * ab + bb


def test_laplace_identical_points_give_one():
    assert laplace_kernel([0.3, -2.0], [0.3, -2.0], KernelConfig(0.7)) == 1.0


def test_laplace_unit_scaled_distance():
    sigma = 2.5
    assert laplace_kernel([0.0], [sigma], KernelConfig(sigma)) == pytest.approx(math.exp(-1), abs=1e-15)


def test_laplace_l1_hand_value():
    assert laplace_kernel([1, 2], [2, 4], KernelConfig(3.0)) == pytest.approx(math.exp(-1), abs=1e-15)


@pytest.mark.parametrize("sigma", [0.0, -1.0, float("nan"), float("inf")])
def test_bad_bandwidth_rejected(sigma):
    with pytest.raises(ValueError):
        KernelConfig(sigma)


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        laplace_kernel([1.0, 2.0], [1.0], KernelConfig(1.0))
    with pytest.raises(ValueError):
        kernel_matrix(np.zeros((2, 3)), np.zeros((2, 2)), KernelConfig(1.0))


def test_kernel_matrix_empty_set_rejected():
    with pytest.raises(ValueError):
        kernel_matrix(np.zeros((0, 2)), np.zeros((1, 2)), KernelConfig(1.0))


def test_kernel_matrix_single_sample():
    np.testing.assert_array_equal(kernel_matrix([[4.0, 1.0]], [[4.0, 1.0]], KernelConfig(1.0)), [[1.0]])


def test_kernel_matrix_entrywise_hand_values():
    s = 1.7
    K = kernel_matrix([[0.0], [s]], [[0.0]], KernelConfig(s))
    np.testing.assert_allclose(K, [[1.0], [math.exp(-1)]], atol=1e-15)


def test_kernel_matrix_symmetric_unit_diagonal():
    X = np.random.default_rng(3).normal(size=(12, 4))
    K = kernel_matrix(X, X, KernelConfig(1.3))
    np.testing.assert_array_equal(K, K.T)
    np.testing.assert_array_equal(np.diag(K), np.ones(12))


def test_mmd_identical_sets_zero():
    A = WeightedSampleSet([[0.0, 1.0], [2.0, 3.0]], [0.25, 0.75])
    assert mmd_sq(A, A, KernelConfig(0.9)) == 0.0


def test_mmd_two_diracs_hand_value():
    s = 0.8
    A = WeightedSampleSet([[0.0]], [1.0])
    B = WeightedSampleSet([[s]], [1.0])
    assert mmd_sq(A, B, KernelConfig(s)) == pytest.approx(2 * (1 - math.exp(-1)), abs=1e-14)
    assert 2 * (1 - math.exp(-1)) == pytest.approx(1.264241, abs=1e-6)


def test_mmd_duplicate_samples_collapse():
    A = WeightedSampleSet([[0.0], [0.0]], [0.5, 0.5])
    B = WeightedSampleSet([[0.0]], [1.0])
    assert mmd_sq(A, B, KernelConfig(1.0)) == 0.0


def test_weighted_set_validation():
    with pytest.raises(ValueError):
        WeightedSampleSet([[0.0], [1.0]], [0.5, 0.6])
    with pytest.raises(ValueError):
        WeightedSampleSet([[0.0], [1.0]], [1.0])
    assert WeightedSampleSet.uniform([[1.0], [2.0], [3.0], [4.0]]).weights.tolist() == [0.25] * 4


def test_mmd_dimension_mismatch():
    with pytest.raises(ValueError):
        mmd_sq(WeightedSampleSet([[0.0]], [1.0]), WeightedSampleSet([[0.0, 1.0]], [1.0]),
               KernelConfig(1.0))


def test_dirac_all_zero_residuals():
    assert mmd_to_dirac([0.0, 0.0, 0.0], [0.2, 0.5, 0.3], KernelConfig(0.4)) == 0.0


def test_dirac_single_residual_hand_value():
    # K(r, r) - 2 exp(-r / sigma) + 1 = 1 - 2 * 0.5 + 1
    s = 1.9
    assert mmd_to_dirac([s * math.log(2)], [1.0], KernelConfig(s)) == pytest.approx(1.0, abs=1e-14)


def test_dirac_zero_weight_sample_invisible():
    s = 0.6
    assert mmd_to_dirac([0.0, s], [1.0, 0.0], KernelConfig(s)) == pytest.approx(0.0, abs=1e-15)


def test_dirac_rejects_negative_residual_and_bad_weights():
    with pytest.raises(ValueError):
        mmd_to_dirac([0.1, -0.2], [0.5, 0.5], KernelConfig(1.0))
    with pytest.raises(ValueError):
        mmd_to_dirac([0.1, 0.2], [0.5, 0.6], KernelConfig(1.0))


def test_dirac_matches_generic_mmd_against_zero_set():
    rng = np.random.default_rng(11)
    for n in (1, 3, 7, 40, 200):
        r = np.abs(rng.normal(size=n)) * (rng.random(n) < 0.6)
        w = rng.random(n)
        w /= w.sum()
        cfg = KernelConfig(0.7)
        generic = mmd_sq(WeightedSampleSet(r[:, None], w),
                         WeightedSampleSet.uniform(np.zeros((n, 1))), cfg)
        assert mmd_to_dirac(r, w, cfg) == pytest.approx(generic, abs=1e-12)


def test_sorted_energy_matches_dense_sum():
    rng = np.random.default_rng(5)
    x = rng.exponential(size=300)
    w = rng.normal(size=300)
    dense = w @ np.exp(-np.abs(x[:, None] - x[None, :]) / 0.3) @ w
    assert weighted_laplace_energy(x, w, 0.3) == pytest.approx(dense, rel=1e-11)


def test_batch_matches_scalar():
    rng = np.random.default_rng(2)
    R = np.abs(rng.normal(size=(6, 9))) * (rng.random((6, 9)) < 0.5)
    R[0] = 0.0
    w = rng.random(9)
    w /= w.sum()
    batch = mmd_to_dirac_batch(R, w, 1.1)
    assert batch[0] == 0.0
    for i in range(6):
        assert batch[i] == pytest.approx(mmd_to_dirac(R[i], w, KernelConfig(1.1)), abs=1e-13)


def test_median_heuristic_values():
    assert median_heuristic([[0.0], [1.0], [3.0]]) == 2.0
    assert median_heuristic([[2.0, 2.0], [2.0, 2.0]]) == 1.0


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, st.integers(1, 6), elements=st.floats(-50, 50)),
       st.floats(0.05, 20.0), st.data())
def test_kernel_symmetric_and_bounded(a, sigma, data):
    b = data.draw(hnp.arrays(np.float64, a.shape, elements=st.floats(-50, 50)))
    cfg = KernelConfig(sigma)
    kab, kba = laplace_kernel(a, b, cfg), laplace_kernel(b, a, cfg)
    assert kab == kba
    assert 0.0 <= kab <= 1.0
    if np.array_equal(a, b):
        assert kab == 1.0
    elif np.abs(a - b).sum() / sigma > 1e-15:
        assert kab < 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 3), st.floats(0.1, 5.0),
       st.integers(0, 2**31 - 1))
def test_mmd_matches_brute_force(na, nb, dim, sigma, seed):
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(na, dim)), rng.normal(size=(nb, dim))
    wa, wb = rng.random(na) + 0.01, rng.random(nb) + 0.01
    wa, wb = wa / wa.sum(), wb / wb.sum()
    val = mmd_sq(WeightedSampleSet(A, wa), WeightedSampleSet(B, wb), KernelConfig(sigma))
    ref = brute_mmd(A.tolist(), wa.tolist(), B.tolist(), wb.tolist(), sigma)
    assert val == pytest.approx(max(ref, 0.0), abs=1e-12)
    assert val >= 0.0


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, st.integers(1, 30), elements=st.floats(0, 10)), st.floats(0.1, 5))
def test_dirac_nonnegative(r, sigma):
    w = np.full(r.size, 1.0 / r.size)
    assert mmd_to_dirac(r, w, KernelConfig(sigma)) >= 0.0
