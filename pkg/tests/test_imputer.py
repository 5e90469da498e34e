"""Synthetic manifolds, mask foliations, connection fitting, imputation."""

import numpy as np
import pytest

from folirec.errors import InvalidArgumentError
from folirec.imputer import (Dataset, LearnedConnection, Mask,
                             build_mask_foliations, curvature_norm,
                             diversity_report, fit_connection, impute,
                             make_dataset)

MASK4 = Mask(np.array([True, True, False, False]))


def _flat_connection(data, mask=MASK4):
    probe = fit_connection(data, mask, 0.0, 1, seed=0)
    return LearnedConnection(np.zeros_like(probe.coeffs), 0.0, {}, mask,
                             probe.bounds)


# -------------------------------------------------------------------- masks


def test_mask_validation():
    with pytest.raises(InvalidArgumentError):
        Mask(np.array([True, True]))
    with pytest.raises(InvalidArgumentError):
        Mask(np.array([False, False]))
    with pytest.raises(InvalidArgumentError):
        Mask(np.array([[True], [False]]))


def test_mask_foliation_split():
    f1, f2 = build_mask_foliations(Mask(np.array([True, False, False])))
    assert list(f1) == [1, 2]
    assert list(f2) == [0]
    f1, f2 = build_mask_foliations(Mask(np.array([True, False, True, False])))
    assert list(f1) == [1, 3]
    assert list(f2) == [0, 2]


# ----------------------------------------------------------------- datasets


def test_plane_dataset_membership():
    data = make_dataset("plane", 100, 5, 0.0, seed=3)
    centered = data.samples - data.samples.mean(axis=0)
    sigma = np.linalg.svd(centered, compute_uv=False)
    assert np.max(sigma[2:]) <= 1e-12 * sigma[0]
    assert data.manifold_dim == 2
    assert "plane" in data.generator_tag


def test_curved_dataset_is_a_quadratic_graph():
    data = make_dataset("curved_surface", 200, 8, 0.0, seed=4)
    t = data.samples[:, :2]
    design = np.column_stack([np.ones(len(t)), t[:, 0], t[:, 1],
                              t[:, 0] ** 2, t[:, 0] * t[:, 1], t[:, 1] ** 2])
    for j in range(2, 8):
        sol, *_ = np.linalg.lstsq(design, data.samples[:, j], rcond=None)
        assert np.max(np.abs(design @ sol - data.samples[:, j])) <= 1e-10


def test_noise_level_shows_up_as_surface_residual():
    for seed in range(20):
        clean = make_dataset("plane", 100, 3, 0.0, seed)
        noisy = make_dataset("plane", 100, 3, 0.05, seed)
        center = clean.samples.mean(axis=0)
        vt = np.linalg.svd(clean.samples - center, full_matrices=False)[2]
        residual = np.abs((noisy.samples - center) @ vt[2])
        assert 0.03 <= residual.mean() <= 0.07


def test_dataset_validation():
    with pytest.raises(InvalidArgumentError):
        make_dataset("plane", 5, 4, 0.0, 0)
    with pytest.raises(InvalidArgumentError):
        make_dataset("plane", 20, 2, 0.0, 0)
    with pytest.raises(InvalidArgumentError):
        make_dataset("torus", 20, 4, 0.0, 0)
    with pytest.raises(InvalidArgumentError):
        Dataset(np.zeros((4, 3)), 2, "short")


# ------------------------------------------------------------------ fitting


def test_fit_is_deterministic():
    data = make_dataset("plane", 30, 4, 0.02, seed=1)
    a = fit_connection(data, MASK4, 0.5, 3, seed=9)
    b = fit_connection(data, MASK4, 0.5, 3, seed=9)
    assert np.array_equal(a.coeffs, b.coeffs)
    assert a.fit_report["loss_trace"] == b.fit_report["loss_trace"]


def test_fit_improves_on_zero_connection_baseline():
    data = make_dataset("plane", 60, 4, 0.02, seed=11)
    conn = fit_connection(data, MASK4, 0.0, 10, seed=5)
    trace = conn.fit_report["loss_trace"]
    assert trace[-1] <= trace[0]
    assert all(b <= a for a, b in zip(trace, trace[1:]))


def test_huge_lambda_flattens_the_fit():
    data = make_dataset("plane", 60, 4, 0.02, seed=11)
    conn = fit_connection(data, MASK4, 1e6, 30, seed=5)
    assert curvature_norm(conn) <= 1e-3


def test_fit_validation():
    data = make_dataset("plane", 30, 4, 0.0, seed=1)
    with pytest.raises(InvalidArgumentError):
        fit_connection(data, MASK4, -1.0, 5, seed=0)
    with pytest.raises(InvalidArgumentError):
        fit_connection(data, MASK4, 0.0, 0, seed=0)
    with pytest.raises(InvalidArgumentError):
        fit_connection(data, Mask(np.array([True, False])), 0.0, 5, seed=0)


# ---------------------------------------------------------------- imputation


def test_flat_connection_gives_identical_paths():
    data = make_dataset("plane", 60, 4, 0.0, seed=11)
    conn = _flat_connection(data)
    outputs = impute(conn, data, data.samples[3].copy(), paths=8, seed=0)
    _, spread = diversity_report(outputs)
    assert spread == 0.0


def test_planted_curvature_spreads_paths():
    data = make_dataset("curved_surface", 80, 4, 0.0, seed=21)
    conn = _flat_connection(data)
    coeffs = np.zeros_like(conn.coeffs)
    rot1 = np.zeros((4, 4))
    rot1[2, 3], rot1[3, 2] = 1.0, -1.0
    rot2 = np.zeros((4, 4))
    rot2[1, 2], rot2[2, 1] = 1.0, -1.0
    coeffs[0, 0] = rot1
    coeffs[1, 0] = rot2
    curved = LearnedConnection(coeffs, 0.0, {}, MASK4, conn.bounds)
    outputs = impute(curved, data, data.samples[5].copy(), paths=8, seed=0)
    _, spread = diversity_report(outputs)
    assert spread > 1e-3


def test_observed_coordinates_are_imposed_bitwise():
    data = make_dataset("curved_surface", 40, 4, 0.01, seed=2)
    conn = _flat_connection(data)
    x_obs = data.samples[0].copy()
    x_obs[:2] += 0.123
    for out in impute(conn, data, x_obs, paths=5, seed=3):
        assert out[0] == x_obs[0] and out[1] == x_obs[1]


def test_leave_one_out_recovery_on_flat_plane():
    data = make_dataset("plane", 60, 4, 0.0, seed=11)
    held = data.samples[7].copy()
    rest = Dataset(np.delete(data.samples, 7, axis=0), 2, "loo")
    conn = _flat_connection(rest)
    for out in impute(conn, rest, held.copy(), paths=4, seed=1):
        assert np.linalg.norm(out[2:] - held[2:]) <= 1e-9


def test_impute_validation():
    data = make_dataset("plane", 30, 4, 0.0, seed=1)
    conn = _flat_connection(data)
    with pytest.raises(InvalidArgumentError):
        impute(conn, data, data.samples[0], paths=0, seed=0)
    with pytest.raises(InvalidArgumentError):
        impute(conn, data, np.zeros(5), paths=2, seed=0)


# ---------------------------------------------------------------- diversity


def test_diversity_report_formulas():
    mean, spread = diversity_report([np.array([1.0, 2.0, 3.0])])
    assert spread == 0.0
    assert np.array_equal(mean, [1.0, 2.0, 3.0])

    pair = [np.array([0.0, 0.0, 1.0]), np.array([0.0, 2.0, 1.0])]
    _, spread = diversity_report(pair)
    assert abs(spread - 2.0) <= 1e-15


def test_diversity_is_permutation_invariant():
    rng = np.random.default_rng(6)
    outs = [rng.standard_normal(4) for _ in range(6)]
    _, s1 = diversity_report(outs)
    _, s2 = diversity_report(outs[::-1])
    order = rng.permutation(6)
    _, s3 = diversity_report([outs[i] for i in order])
    assert abs(s1 - s2) <= 1e-15
    assert abs(s1 - s3) <= 1e-15
    with pytest.raises(InvalidArgumentError):
        diversity_report([])
