"""Transport-corrected products of matrix-valued sections over a 2-axis
chart, with associator and Moufang diagnostics and quasigroup division.

A section value is a k x k matrix riding on the tensor bundle whose two
factors carry field1 and field2. Moving a value along a path transports
both factors and acts on the matrix block; the product of two sections at
a common target is plain matrix multiplication of the moved values.
"""

from dataclasses import dataclass, field

import numpy as np

from .connection import ConnectionField, GridPath, curvature, torsion, transport_path
from .errors import InvalidArgumentError, NoDivisionError


@dataclass
class SectionSample:
    """A fiber value pinned at one chart point."""

    base_point: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        self.base_point = np.asarray(self.base_point, dtype=np.float64)
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.value.ndim != 2 or self.value.shape[0] != self.value.shape[1]:
            raise InvalidArgumentError("section value must be a square matrix")
        if not (np.all(np.isfinite(self.base_point)) and np.all(np.isfinite(self.value))):
            raise InvalidArgumentError("section sample must be finite")


@dataclass
class StarContext:
    """Two connection fields over one shared 2-axis chart.

    Axis 0 is the leaf direction tied to field1, axis 1 the one tied to
    field2. fiber_model picks how a path's two transport operators act on
    a section value: "hom" treats the value as a map between the factor
    bundles (value -> Q1 @ value @ Q2.T), "left" stacks both operators on
    the left (value -> Q1 @ Q2 @ value).
    """

    field1: ConnectionField
    field2: ConnectionField
    base_point: np.ndarray
    fiber_model: str = "hom"
    steps_per_unit: int = 64
    canonical_path_convention: str = field(default="axis1_then_axis2")

    def __post_init__(self):
        if self.field1.chart != self.field2.chart:
            raise InvalidArgumentError("fields must share one chart")
        if self.field1.fiber_dim != self.field2.fiber_dim:
            raise InvalidArgumentError("fields must share the fiber dimension")
        if self.field1.chart.dim != 2:
            raise InvalidArgumentError("star products need a 2-axis chart")
        if self.fiber_model not in ("hom", "left"):
            raise InvalidArgumentError(f"unknown fiber_model {self.fiber_model!r}")
        if self.canonical_path_convention != "axis1_then_axis2":
            raise InvalidArgumentError("only the axis1_then_axis2 convention exists")
        self.base_point = np.asarray(self.base_point, dtype=np.float64)
        self.field1.chart.require_inside(self.base_point)

    @property
    def chart(self):
        return self.field1.chart

    @property
    def fiber_dim(self):
        return self.field1.fiber_dim


def canonical_path(ctx, start, end):
    """Axis-0 leg then axis-1 leg, the context's fixed grid-path shape."""
    return GridPath.canonical(start, end)


def tensor_transport(ctx, section, path, steps_per_unit=None):
    """Move a section value along a path, acting on both tensor factors."""
    spu = ctx.steps_per_unit if steps_per_unit is None else steps_per_unit
    q1 = transport_path(ctx.field1, path, steps_per_unit=spu)
    q2 = transport_path(ctx.field2, path, steps_per_unit=spu)
    if ctx.fiber_model == "hom":
        moved = q1 @ section.value @ q2.T
    else:
        moved = q1 @ q2 @ section.value
    return SectionSample(np.asarray(path.end, dtype=np.float64), moved)


def _route(ctx, start, end):
    """The grid path star products move along: through the context base.

    Anchoring every leg at the base point makes the transport factors of
    a nested product telescope leg by leg, so when transport acts by
    conjugation nothing depends on where the operands were sampled or how
    a triple product is parenthesized. Direct start-to-end canonical paths
    would leave a rectangle holonomy behind between the two bracketings.
    """
    start = np.asarray(start, dtype=np.float64)
    end = np.asarray(end, dtype=np.float64)
    if np.array_equal(start, end):
        return GridPath.canonical(start, end)
    inbound = GridPath.canonical(start, ctx.base_point)
    outbound = GridPath.canonical(ctx.base_point, end)
    return inbound.concat(outbound)


def star(ctx, a, b, target, steps_per_unit=None):
    """Product of two sections at a target point.

    Both operands ride base-anchored grid paths to the target first, then
    multiply as matrices. The result is based at the target.
    """
    target = np.asarray(target, dtype=np.float64)
    ctx.chart.require_inside(target)
    ctx.chart.require_inside(a.base_point)
    ctx.chart.require_inside(b.base_point)
    pa = tensor_transport(ctx, a, _route(ctx, a.base_point, target), steps_per_unit)
    pb = tensor_transport(ctx, b, _route(ctx, b.base_point, target), steps_per_unit)
    return SectionSample(target, pa.value @ pb.value)


def associator(ctx, a, b, c, target, steps_per_unit=None):
    """(a*b)*c - a*(b*c) at the target; returns (matrix, Frobenius norm).

    Inner products materialize at the context base point before the outer
    product moves them on, matching the base-anchored path convention.
    """
    target = np.asarray(target, dtype=np.float64)
    ab = star(ctx, a, b, ctx.base_point, steps_per_unit)
    lhs = star(ctx, ab, c, target, steps_per_unit)
    bc = star(ctx, b, c, ctx.base_point, steps_per_unit)
    rhs = star(ctx, a, bc, target, steps_per_unit)
    diff = lhs.value - rhs.value
    return diff, float(np.linalg.norm(diff))


@dataclass(frozen=True)
class CriterionVerdict:
    torsion_norm1: float
    torsion_norm2: float
    curvature_duality_defect: float
    tolerance: float
    associative: bool


def criterion_verdict(ctx, affine1, affine2, tol):
    """Check the associativity conditions: leafwise torsion of both affine
    fields and the curvature sum of the context's two gauge fields."""
    if affine1.chart != ctx.chart or affine2.chart != ctx.chart:
        raise InvalidArgumentError("affine fields must live on the context chart")
    t1 = float(np.max(np.abs(torsion(affine1))))
    t2 = float(np.max(np.abs(torsion(affine2))))
    f_sum = curvature(ctx.field1) + curvature(ctx.field2)
    if all(r >= 3 for r in ctx.chart.resolution):
        f_sum = f_sum[1:-1, 1:-1]
    defect = float(np.max(np.abs(f_sum)))
    ok = t1 <= tol and t2 <= tol and defect <= tol
    return CriterionVerdict(t1, t2, defect, tol, ok)


def _table_moufang_fraction(table):
    table = np.asarray(table)
    if table.ndim != 2 or table.shape[0] != table.shape[1]:
        raise InvalidArgumentError("multiplication table must be square")
    if not np.issubdtype(table.dtype, np.integer):
        raise InvalidArgumentError("multiplication table must hold integers")
    n = table.shape[0]
    if table.min() < 0 or table.max() >= n:
        raise InvalidArgumentError("table entries must index table rows")
    x = np.arange(n)[:, None, None]
    y = np.arange(n)[None, :, None]
    z = np.arange(n)[None, None, :]
    lhs = table[x, table[y, table[x, z]]]
    rhs = table[table[table[x, y], x], z]
    return float(np.mean(lhs != rhs))


def moufang_residual(table_or_ctx, a=None, b=None, c=None, target=None,
                     steps_per_unit=None):
    """Moufang-law defect, in one of two modes.

    Given a finite multiplication table: the fraction of triples (x, y, z)
    violating x(y(xz)) = ((xy)x)z. Given a StarContext plus three sections
    and a target: the Frobenius norm of (a*b)*(c*a) - (a*(b*c))*a with
    inner products materialized at the context base point.
    """
    if isinstance(table_or_ctx, StarContext):
        ctx = table_or_ctx
        if any(v is None for v in (a, b, c, target)):
            raise InvalidArgumentError("geometric mode needs a, b, c and target")
        target = np.asarray(target, dtype=np.float64)
        q = ctx.base_point
        ab = star(ctx, a, b, q, steps_per_unit)
        ca = star(ctx, c, a, q, steps_per_unit)
        lhs = star(ctx, ab, ca, target, steps_per_unit)
        bc = star(ctx, b, c, q, steps_per_unit)
        abc = star(ctx, a, bc, q, steps_per_unit)
        rhs = star(ctx, abc, a, target, steps_per_unit)
        return float(np.linalg.norm(lhs.value - rhs.value))
    if a is not None or b is not None or c is not None or target is not None:
        raise InvalidArgumentError("table mode takes no extra arguments")
    return _table_moufang_fraction(table_or_ctx)


@dataclass(frozen=True)
class DivisionResult:
    section: SectionSample
    residual: float


def divide(ctx, a, b, side, target, steps_per_unit=None, tol=1e-12):
    """Solve a*x = b (side="left") or y*a = b (side="right") at the target.

    Fails with NoDivisionError when the moved operand is singular beyond
    tol, since then no unique solution exists in this fiber.
    """
    if side not in ("left", "right"):
        raise InvalidArgumentError(f"side must be left or right, got {side!r}")
    target = np.asarray(target, dtype=np.float64)
    ctx.chart.require_inside(target)
    pa = tensor_transport(ctx, a, _route(ctx, a.base_point, target), steps_per_unit)
    pb = tensor_transport(ctx, b, _route(ctx, b.base_point, target), steps_per_unit)
    smin = np.linalg.svd(pa.value, compute_uv=False)[-1]
    if smin <= tol:
        raise NoDivisionError(
            f"operand transport is singular at the target (sigma_min={smin:.3e})")
    if side == "left":
        x = np.linalg.solve(pa.value, pb.value)
        residual = float(np.linalg.norm(pa.value @ x - pb.value))
    else:
        x = np.linalg.solve(pa.value.T, pb.value.T).T
        residual = float(np.linalg.norm(x @ pa.value - pb.value))
    return DivisionResult(SectionSample(target, x), residual)
