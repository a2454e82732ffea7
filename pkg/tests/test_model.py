import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from secure_cbf import InvalidInputError, LtiSystem, SensorSubset
from secure_cbf.model import (
    is_r_sparse_observable,
    kernel_basis,
    kernel_included,
    matrix_from_json,
    matrix_to_json,
    max_sparse_observability,
    numerical_rank,
    observability_matrix,
    orthonormalize,
    vehicle_continuous,
    zoh_discretize,
)

from conftest import random_system


def taylor_expm(M, terms=40):
    out, term = np.eye(len(M)), np.eye(len(M))
    for k in range(1, terms):
        term = term @ M / k
        out = out + term
    return out


def test_zoh_matches_taylor_series(rng):
    for _ in range(20):
        n, m = rng.integers(1, 5), rng.integers(1, 3)
        Ac, Bc = rng.normal(size=(n, n)), rng.normal(size=(n, m))
        dt = rng.uniform(0.01, 0.3)
        A, B = zoh_discretize(Ac, Bc, dt)
        aug = np.zeros((n + m, n + m))
        aug[:n, :n], aug[:n, n:] = Ac, Bc
        E = taylor_expm(aug * dt)
        assert np.allclose(A, E[:n, :n], atol=1e-12)
        assert np.allclose(B, E[:n, n:], atol=1e-12)


def test_zoh_damped_double_integrator_closed_form():
    dt, a = 0.01, 0.2
    Ac, Bc, _ = vehicle_continuous()
    A, B = zoh_discretize(Ac, Bc, dt)
    e = math.exp(-a * dt)
    blk_A = np.array([[1.0, (1 - e) / a], [0.0, e]])
    blk_B = np.array([(dt - (1 - e) / a) / a, (1 - e) / a])
    assert np.allclose(A[:2, :2], blk_A, atol=1e-14)
    assert np.allclose(A[2:, 2:], blk_A, atol=1e-14)
    assert np.allclose(B[:2, 0], blk_B, atol=1e-14)
    assert np.allclose(B[2:, 1], blk_B, atol=1e-14)
    assert np.allclose(A[:2, 2:], 0) and np.allclose(B[:2, 1], 0)


def test_zoh_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        zoh_discretize(np.eye(2), np.ones((2, 1)), 0.0)
    with pytest.raises(InvalidInputError):
        zoh_discretize(np.eye(2), np.ones((3, 1)), 0.1)
    with pytest.raises(InvalidInputError):
        zoh_discretize([[np.nan]], [[1.0]], 0.1)


def test_system_validation_and_immutability():
    sys = LtiSystem(np.eye(2), np.ones((2, 1)), np.eye(2))
    assert (sys.n, sys.m, sys.p) == (2, 1, 2)
    with pytest.raises(ValueError):
        sys.A[0, 0] = 3.0
    with pytest.raises(InvalidInputError):
        LtiSystem(np.ones((2, 3)), np.ones((2, 1)), np.eye(2))
    with pytest.raises(InvalidInputError):
        LtiSystem(np.eye(2), np.ones((3, 1)), np.eye(2))
    with pytest.raises(InvalidInputError):
        LtiSystem(np.eye(2), np.ones((2, 1)), np.ones((1, 3)))
    scalar = LtiSystem(2.0, 1.0, 1.0)
    assert (scalar.n, scalar.m, scalar.p) == (1, 1, 1)


def test_sensor_subset():
    g = SensorSubset([1, 3, 5], p=8)
    assert list(g) == [1, 3, 5] and g.zero_based == [0, 2, 4] and 3 in g
    assert g == SensorSubset((1, 3, 5)) and hash(g) == hash(SensorSubset([1, 3, 5]))
    assert SensorSubset([1, 2]) < SensorSubset([1, 3])
    for bad in ([], [2, 1], [1, 1], [0, 2]):
        with pytest.raises(InvalidInputError):
            SensorSubset(bad)
    with pytest.raises(InvalidInputError):
        SensorSubset([9], p=8)
    with pytest.raises(AttributeError):
        g.indices = (1,)


def test_all_subsets_lexicographic(vehicle):
    subsets = list(vehicle.all_subsets(6))
    assert len(subsets) == math.comb(8, 6)
    assert subsets == sorted(subsets)
    assert subsets[0] == SensorSubset([1, 2, 3, 4, 5, 6])


def test_observability_matrix_layout():
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    C = np.array([[1.0, 0.0], [0.0, 1.0]])
    sys = LtiSystem(A, np.ones((2, 1)), C)
    O = observability_matrix(sys, SensorSubset([1, 2]), 3)
    expected = np.array([[1, 0], [1, 1], [1, 2], [0, 1], [0, 1], [0, 1]], dtype=float)
    assert np.array_equal(O, expected)
    with pytest.raises(InvalidInputError):
        observability_matrix(sys, SensorSubset([1]), 0)


def test_rank_and_kernel_against_constructed_ranks(rng):
    for _ in range(50):
        n = rng.integers(2, 7)
        r = rng.integers(0, n + 1)
        M = rng.normal(size=(n + 2, r)) @ rng.normal(size=(r, n))
        assert numerical_rank(M) == r
        K = kernel_basis(M)
        assert K.dim == n - r
        assert np.allclose(M @ K.vectors, 0, atol=1e-9)
        assert np.allclose(K.vectors.T @ K.vectors, np.eye(n - r), atol=1e-10)


def test_rank_edge_cases():
    assert numerical_rank(np.zeros((3, 3))) == 0
    assert kernel_basis(np.zeros((0, 3))).dim == 3
    assert numerical_rank(np.diag([1.0, 1e-12])) == 1
    assert orthonormalize(np.zeros((3, 0))).dim == 0
    assert orthonormalize(np.array([[1.0, 2.0], [0.0, 0.0]])).dim == 1


def test_kernel_included():
    M1 = np.array([[1.0, 0.0, 0.0]])
    M2 = np.array([[2.0, 0.0, 0.0]])
    M3 = np.array([[0.0, 1.0, 0.0]])
    assert kernel_included(M1, M2)
    assert not kernel_included(M1, M3)
    assert kernel_included(np.eye(3), M3)  # trivial kernel is inside everything
    with pytest.raises(InvalidInputError):
        kernel_included(M1, np.eye(2))


def test_vehicle_sparse_observability(vehicle):
    assert is_r_sparse_observable(vehicle, 0)
    assert is_r_sparse_observable(vehicle, 1)
    assert not is_r_sparse_observable(vehicle, 2)
    assert max_sparse_observability(vehicle) == 1
    # independent oracle: sensors 3..8 never see the first position
    O = observability_matrix(vehicle, SensorSubset(range(3, 9)), 4)
    assert np.linalg.matrix_rank(O) == 3
    with pytest.raises(InvalidInputError):
        is_r_sparse_observable(vehicle, 8)


def test_unobservable_system_reports_minus_one():
    sys = LtiSystem(np.eye(2), np.ones((2, 1)), np.array([[1.0, 0.0], [2.0, 0.0]]))
    assert max_sparse_observability(sys) == -1


def test_matrix_json_round_trip(rng):
    M = rng.normal(size=(3, 5))
    obj = matrix_to_json(M)
    assert obj["rows"] == 3 and obj["cols"] == 5 and len(obj["data"]) == 15
    assert np.array_equal(matrix_from_json(obj), M)
    assert np.array_equal(matrix_from_json(M.tolist()), M)
    with pytest.raises(InvalidInputError):
        matrix_from_json({"rows": 2, "cols": 2, "data": [1, 2, 3]})
    with pytest.raises(InvalidInputError):
        matrix_from_json([[1, 2], [3]])
    with pytest.raises(InvalidInputError):
        matrix_from_json("nope")


# Cayley-Hamilton closure: stacking beyond n rows adds nothing


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 4), p=st.integers(1, 3), extra=st.integers(1, 4),
       sparse=st.sampled_from([0.0, 0.4]))
def test_cayley_hamilton_closure(seed, n, p, extra, sparse):
    rng = np.random.default_rng(seed)
    sys = random_system(rng, n, 1, p, sparse)
    gamma = SensorSubset(range(1, p + 1))
    On = observability_matrix(sys, gamma, n)
    Om = observability_matrix(sys, gamma, n + extra)
    assert numerical_rank(On) == numerical_rank(Om)
    assert kernel_included(On, Om) and kernel_included(Om, On)


# Kernel monotonicity: more sensors or more depth can only shrink the kernel


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 4), p=st.integers(2, 4), depth=st.integers(1, 5),
       sparse=st.sampled_from([0.0, 0.4]))
def test_kernel_monotonicity(seed, n, p, depth, sparse):
    rng = np.random.default_rng(seed)
    sys = random_system(rng, n, 1, p, sparse)
    full = SensorSubset(range(1, p + 1))
    sub = SensorSubset(sorted(rng.choice(np.arange(1, p + 1), size=p - 1, replace=False)))
    O_sub = observability_matrix(sys, sub, depth)
    O_full = observability_matrix(sys, full, depth)
    O_deeper = observability_matrix(sys, full, depth + 1)
    assert kernel_included(O_full, O_sub)  # ker(O_full) inside ker(O_sub)
    assert kernel_included(O_deeper, O_full)
    assert kernel_basis(O_full).dim <= kernel_basis(O_sub).dim
