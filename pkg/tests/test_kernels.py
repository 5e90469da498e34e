"""Ordered-exponential kernel against a plain scipy reference."""

import numpy as np
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from folirec import _transport_py, backend_name
from folirec.kernels import ordered_exp_product


def _reference(omegas, dts):
    out = np.eye(omegas.shape[1])
    for w, dt in zip(omegas, dts):
        out = expm(-w * dt) @ out
    return out


def test_empty_input_is_identity():
    for k in (1, 2, 3):
        p = ordered_exp_product(np.zeros((0, k, k)), np.zeros(0))
        assert np.array_equal(p, np.eye(k))


def test_zero_generators_give_identity():
    p = ordered_exp_product(np.zeros((7, 2, 2)), np.full(7, 0.3))
    assert np.allclose(p, np.eye(2), atol=1e-15)


def test_scalar_constant_matches_closed_form():
    c = 0.37
    dts = np.full(40, 1.3 / 40)
    omegas = np.full((40, 1, 1), c)
    p = ordered_exp_product(omegas, dts)
    assert abs(p[0, 0] - np.exp(-c * 1.3)) <= 1e-14


def test_two_by_two_matches_scipy_reference():
    rng = np.random.default_rng(5)
    omegas = rng.standard_normal((25, 2, 2))
    dts = rng.uniform(-0.2, 0.2, size=25)
    p = ordered_exp_product(omegas, dts)
    assert np.allclose(p, _reference(omegas, dts), atol=1e-13)


def test_repeated_eigenvalue_branch():
    # nilpotent generator: exp(-tN) = I - tN with no series truncation
    n = np.array([[0.0, 1.0], [0.0, 0.0]])
    p = ordered_exp_product(n[None], np.array([0.6]))
    assert np.allclose(p, np.eye(2) - 0.6 * n, atol=1e-15)


def test_three_by_three_falls_back_to_scipy():
    rng = np.random.default_rng(6)
    omegas = rng.standard_normal((12, 3, 3)) * 0.5
    dts = rng.uniform(0.0, 0.3, size=12)
    p = ordered_exp_product(omegas, dts)
    assert np.allclose(p, _reference(omegas, dts), atol=1e-13)


def test_split_product_composes():
    rng = np.random.default_rng(7)
    omegas = rng.standard_normal((30, 2, 2)) * 0.4
    dts = rng.uniform(0.0, 0.2, size=30)
    full = ordered_exp_product(omegas, dts)
    head = ordered_exp_product(omegas[:13], dts[:13])
    tail = ordered_exp_product(omegas[13:], dts[13:])
    assert np.allclose(tail @ head, full, atol=5e-13)


def test_backends_agree():
    rng = np.random.default_rng(8)
    omegas = rng.standard_normal((20, 2, 2))
    dts = rng.uniform(-0.3, 0.3, size=20)
    fast = ordered_exp_product(omegas, dts)
    ref = _transport_py.ordered_exp_product(omegas, dts)
    assert backend_name() in ("compiled", "numpy")
    assert np.allclose(fast, ref, atol=1e-13)


@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
@settings(deadline=None, max_examples=30)
def test_determinant_tracks_trace(seed, n):
    rng = np.random.default_rng(seed)
    omegas = rng.uniform(-1.0, 1.0, size=(n, 2, 2))
    dts = rng.uniform(-0.5, 0.5, size=n)
    p = ordered_exp_product(omegas, dts)
    expected = np.exp(-np.sum(np.trace(omegas, axis1=1, axis2=2) * dts))
    assert np.isclose(np.linalg.det(p), expected, rtol=1e-10, atol=1e-12)
