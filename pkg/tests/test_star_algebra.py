"""Section products, associators, the associativity criterion, division."""

import numpy as np
import pytest

from folirec.connection import (Chart, ConnectionField, GridPath, AffineField,
                                build_field, random_polynomial_coeffs)
from folirec.errors import (InvalidArgumentError, NoDivisionError,
                            OutOfDomainError)
from folirec.star_algebra import (CriterionVerdict, SectionSample,
                                  StarContext, associator, canonical_path,
                                  criterion_verdict, divide, moufang_residual,
                                  star, tensor_transport)

CHART = Chart((0.0, 0.0), (1.0, 1.0), 128)
BASE = (0.2, 0.3)


def _diag_coeffs(seed=0, scale=0.4):
    c = random_polynomial_coeffs(2, 2, seed=seed, scale=scale)
    c[..., 0, 1] = 0.0
    c[..., 1, 0] = 0.0
    return c


def _dual_ctx(coeffs):
    f1, f2 = build_field(CHART, 2, "dual_pair", ("polynomial", coeffs))
    return StarContext(f1, f2, BASE, steps_per_unit=16)


def _flat_ctx(res=16):
    chart = Chart((0.0, 0.0), (1.0, 1.0), res)
    return StarContext(build_field(chart, 2, "flat"),
                       build_field(chart, 2, "flat"), BASE)


def _sweep(ctx, n, seed):
    rng = np.random.default_rng(seed)
    norms = np.empty(n)
    for i in range(n):
        secs = [SectionSample(rng.uniform(0.05, 0.95, size=2),
                              rng.standard_normal((2, 2))) for _ in range(3)]
        target = rng.uniform(0.05, 0.95, size=2)
        norms[i] = associator(ctx, *secs, target=target)[1]
    return norms


# ------------------------------------------------------------------- types


def test_section_sample_validation():
    with pytest.raises(InvalidArgumentError):
        SectionSample((0.1, 0.1), np.zeros((2, 3)))
    with pytest.raises(InvalidArgumentError):
        SectionSample((0.1, 0.1), np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_context_validation():
    f = build_field(CHART, 2, "flat")
    other = build_field(Chart((0, 0), (2, 2), 128), 2, "flat")
    with pytest.raises(InvalidArgumentError):
        StarContext(f, other, BASE)
    with pytest.raises(InvalidArgumentError):
        StarContext(f, build_field(CHART, 3, "flat"), BASE)
    with pytest.raises(InvalidArgumentError):
        StarContext(f, f, BASE, fiber_model="right")
    with pytest.raises(InvalidArgumentError):
        StarContext(f, f, BASE, canonical_path_convention="axis2_then_axis1")
    with pytest.raises(OutOfDomainError):
        StarContext(f, f, (2.0, 2.0))
    chart3 = Chart((0, 0, 0), (1, 1, 1), 5)
    g = build_field(chart3, 2, "flat")
    with pytest.raises(InvalidArgumentError):
        StarContext(g, g, (0.5, 0.5, 0.5))


def test_canonical_path_axis_order():
    ctx = _flat_ctx()
    path = canonical_path(ctx, (0.1, 0.2), (0.8, 0.6))
    assert [axis for axis, _ in path.segments] == [0, 1]
    assert np.allclose(path.end, (0.8, 0.6))


# ---------------------------------------------------------------- transport


def test_tensor_transport_models():
    chart = Chart((0.0, 0.0), (1.0, 1.0), 16)
    w = np.stack([np.diag([0.5, -0.3]), np.zeros((2, 2))])
    f1 = build_field(chart, 2, "constant", w)
    f2 = build_field(chart, 2, "constant", 2.0 * w)
    sec = SectionSample((0.1, 0.4), np.array([[1.0, 2.0], [0.0, 1.0]]))
    leg = GridPath((0.1, 0.4), [(0, 0.5)])
    q1 = np.diag(np.exp(-0.5 * np.array([0.5, -0.3])))
    q2 = np.diag(np.exp(-1.0 * np.array([0.5, -0.3])))

    hom = StarContext(f1, f2, BASE, fiber_model="hom")
    out = tensor_transport(hom, sec, leg)
    assert np.allclose(out.value, q1 @ sec.value @ q2.T, atol=1e-12)
    assert np.allclose(out.base_point, leg.end)

    left = StarContext(f1, f2, BASE, fiber_model="left")
    out = tensor_transport(left, sec, leg)
    assert np.allclose(out.value, q1 @ q2 @ sec.value, atol=1e-12)


# --------------------------------------------------------------------- star


def test_star_flat_identity_and_constants():
    ctx = _flat_ctx()
    eye = SectionSample((0.1, 0.8), np.eye(2))
    out = star(ctx, eye, SectionSample((0.7, 0.2), np.eye(2)), (0.5, 0.5))
    assert np.array_equal(out.value, np.eye(2))
    assert np.allclose(out.base_point, (0.5, 0.5))

    rng = np.random.default_rng(2)
    a = SectionSample(rng.uniform(0.1, 0.9, 2), rng.standard_normal((2, 2)))
    b = SectionSample(rng.uniform(0.1, 0.9, 2), rng.standard_normal((2, 2)))
    out = star(ctx, a, b, (0.4, 0.6))
    assert np.allclose(out.value, a.value @ b.value, atol=1e-14)


def test_star_rejects_outside_points():
    ctx = _flat_ctx()
    a = SectionSample((0.5, 0.5), np.eye(2))
    with pytest.raises(OutOfDomainError):
        star(ctx, a, a, (1.5, 0.5))
    with pytest.raises(OutOfDomainError):
        star(ctx, SectionSample((-0.5, 0.5), np.eye(2)), a, (0.5, 0.5))


def test_two_path_star_agrees_for_flat_dual_fields():
    # commuting constant generators: each field is flat, the pair is dual,
    # and staircase order cannot matter beyond roundoff
    chart = Chart((0.0, 0.0), (1.0, 1.0), 128)
    w = np.stack([np.diag([0.4, -0.1]), np.diag([-0.2, 0.3])])
    f1 = build_field(chart, 2, "constant", w)
    f2 = ConnectionField(chart, 2, -np.swapaxes(f1.omega, -1, -2))
    ctx = StarContext(f1, f2, BASE, steps_per_unit=16)

    rng = np.random.default_rng(8)
    a = SectionSample(rng.uniform(0.1, 0.9, 2), rng.standard_normal((2, 2)))
    b = SectionSample(rng.uniform(0.1, 0.9, 2), rng.standard_normal((2, 2)))
    target = np.array([0.75, 0.55])

    def via(order):
        def staircase(start, end):
            d = np.asarray(end) - np.asarray(start)
            legs = [(ax, d[ax]) for ax in order]
            return GridPath(tuple(start), legs)
        pa = tensor_transport(ctx, a, staircase(a.base_point, target))
        pb = tensor_transport(ctx, b, staircase(b.base_point, target))
        return pa.value @ pb.value

    assert np.linalg.norm(via((0, 1)) - via((1, 0))) <= 1e-8


# --------------------------------------------------------------- associator


def test_associator_flat_is_zero():
    ctx = _flat_ctx()
    rng = np.random.default_rng(3)
    secs = [SectionSample(rng.uniform(0.1, 0.9, 2),
                          rng.standard_normal((2, 2))) for _ in range(3)]
    _, norm = associator(ctx, *secs, target=(0.5, 0.5))
    assert norm <= 1e-12


def test_associator_vanishes_on_dual_pairs():
    assert _sweep(_dual_ctx(_diag_coeffs()), 100, seed=0).max() <= 1e-7
    full = random_polynomial_coeffs(2, 2, seed=7, scale=0.4)
    assert _sweep(_dual_ctx(full), 20, seed=0).max() <= 1e-7


def test_associator_detects_curvature_mismatch():
    full = random_polynomial_coeffs(2, 2, seed=7, scale=0.4)
    f1, _ = build_field(CHART, 2, "dual_pair", ("polynomial", full))
    mis = ConnectionField(CHART, 2, f1.omega.copy())
    ctx = StarContext(f1, mis, BASE, steps_per_unit=16)
    norms = _sweep(ctx, 100, seed=1)
    assert np.median(norms) >= 1e-3


def test_associator_detects_planted_duality_defect():
    full = random_polynomial_coeffs(2, 2, seed=7, scale=0.4)
    f1, f2 = build_field(CHART, 2, "dual_pair", ("polynomial", full))
    om2 = f2.omega.copy()
    om2[1, ..., 0, 1] += 1e-2
    ctx = StarContext(f1, ConnectionField(CHART, 2, om2), BASE,
                      steps_per_unit=16)
    assert _sweep(ctx, 100, seed=2).max() >= 1e-4


# ---------------------------------------------------------------- criterion


def _symmetric_gamma(chart, seed=4):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(chart.resolution + (2, 2, 2))
    return 0.5 * (g + np.swapaxes(g, -1, -2))


def test_criterion_verdict_associative_branch():
    ctx = _dual_ctx(_diag_coeffs())
    gamma = _symmetric_gamma(CHART)
    verdict = criterion_verdict(ctx, AffineField(CHART, gamma),
                                AffineField(CHART, gamma), tol=1e-12)
    assert isinstance(verdict, CriterionVerdict)
    assert verdict.torsion_norm1 == 0.0
    assert verdict.torsion_norm2 == 0.0
    assert verdict.curvature_duality_defect <= 1e-12
    assert verdict.associative


def test_criterion_verdict_torsion_branch():
    ctx = _dual_ctx(_diag_coeffs())
    gamma = _symmetric_gamma(CHART)
    bumped = gamma.copy()
    bumped[..., 0, 0, 1] += 0.1
    bumped[..., 0, 1, 0] -= 0.1
    verdict = criterion_verdict(ctx, AffineField(CHART, bumped),
                                AffineField(CHART, gamma), tol=1e-6)
    assert abs(verdict.torsion_norm1 - 0.2) <= 1e-15
    assert verdict.torsion_norm2 == 0.0
    assert not verdict.associative


def test_criterion_verdict_planted_duality_break():
    eps = 1e-2
    f1, f2 = build_field(CHART, 2, "dual_pair",
                         ("polynomial", _diag_coeffs()))
    om2 = f2.omega.copy()
    om2[0, 64, 64, 0, 0] += eps
    ctx = StarContext(f1, ConnectionField(CHART, 2, om2), BASE,
                      steps_per_unit=16)
    gamma = _symmetric_gamma(CHART)
    verdict = criterion_verdict(ctx, AffineField(CHART, gamma),
                                AffineField(CHART, gamma), tol=1e-6)
    assert verdict.curvature_duality_defect >= eps / 2
    assert not verdict.associative


def test_criterion_verdict_rejects_foreign_chart():
    ctx = _flat_ctx(res=16)
    other = Chart((0, 0), (2, 2), 16)
    gamma = np.zeros((16, 16, 2, 2, 2))
    with pytest.raises(InvalidArgumentError):
        criterion_verdict(ctx, AffineField(other, gamma),
                          AffineField(other, gamma), tol=1e-6)


# ------------------------------------------------------------------ moufang


def test_geometric_moufang_small_on_dual_large_on_mismatch():
    full = random_polynomial_coeffs(2, 2, seed=7, scale=0.4)
    ctx = _dual_ctx(full)
    f1 = ctx.field1
    mis_ctx = StarContext(f1, ConnectionField(CHART, 2, f1.omega.copy()),
                          BASE, steps_per_unit=16)
    rng = np.random.default_rng(5)
    secs = [SectionSample(rng.uniform(0.1, 0.9, size=2),
                          rng.standard_normal((2, 2))) for _ in range(3)]
    tgt = np.array([0.7, 0.6])
    assert moufang_residual(ctx, *secs, target=tgt) <= 1e-12
    assert moufang_residual(mis_ctx, *secs, target=tgt) >= 0.1
    with pytest.raises(InvalidArgumentError):
        moufang_residual(ctx, secs[0], secs[1], None, target=tgt)


# ----------------------------------------------------------------- division


def test_divide_by_identity_and_flat_roundtrip():
    ctx = _flat_ctx()
    rng = np.random.default_rng(6)
    b = SectionSample(rng.uniform(0.1, 0.9, 2), rng.standard_normal((2, 2)))
    eye = SectionSample((0.4, 0.4), np.eye(2))
    out = divide(ctx, eye, b, "left", (0.5, 0.5))
    assert np.allclose(out.section.value, b.value, atol=1e-14)
    assert out.residual <= 1e-12

    a = SectionSample(rng.uniform(0.1, 0.9, 2),
                      rng.standard_normal((2, 2)) + 3 * np.eye(2))
    left = divide(ctx, a, b, "left", (0.5, 0.5))
    assert np.linalg.norm(a.value @ left.section.value - b.value) <= 1e-12
    right = divide(ctx, a, b, "right", (0.5, 0.5))
    assert np.linalg.norm(right.section.value @ a.value - b.value) <= 1e-12


def test_divide_star_consistency_on_curved_context():
    full = random_polynomial_coeffs(2, 2, seed=7, scale=0.4)
    ctx = _dual_ctx(full)
    rng = np.random.default_rng(5)
    for _ in range(3):
        rng.standard_normal((2, 2))  # burn to decorrelate from moufang test
    a = SectionSample(rng.uniform(0.1, 0.9, 2),
                      rng.standard_normal((2, 2)) + 3 * np.eye(2))
    b = SectionSample(rng.uniform(0.1, 0.9, 2), rng.standard_normal((2, 2)))
    tgt = (0.7, 0.6)
    res = divide(ctx, a, b, "left", tgt)
    assert res.residual <= 1e-10
    back = star(ctx, a, res.section, tgt)
    b_at_target = tensor_transport(
        ctx, b, GridPath.canonical(b.base_point, ctx.base_point).concat(
            GridPath.canonical(ctx.base_point, np.asarray(tgt))))
    assert np.linalg.norm(back.value - b_at_target.value) <= 1e-10


def test_divide_singular_operand_fails():
    ctx = _flat_ctx()
    a = SectionSample((0.3, 0.3), np.array([[1.0, 0.0], [0.0, 0.0]]))
    b = SectionSample((0.6, 0.6), np.eye(2))
    with pytest.raises(NoDivisionError):
        divide(ctx, a, b, "left", (0.5, 0.5))
    with pytest.raises(InvalidArgumentError):
        divide(ctx, a, b, "up", (0.5, 0.5))
