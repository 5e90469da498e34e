"""Grid-sampled connection fields on a flat chart.

A ConnectionField stores one k x k matrix field per chart axis, sampled on
the chart nodes and interpolated multilinearly in between. Parallel
transport solves dP/dt = -omega(direction) P with midpoint sampling, so a
path is a product of exp(-omega(x_mid) * dt) factors (second order in the
substep). The sign convention is fixed and recorded in serialized form as
"minus_omega".
"""

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from . import kernels
from .errors import InvalidArgumentError, OutOfDomainError

SIGN_CONVENTION = "minus_omega"

_DOMAIN_TOL = 1e-9


@dataclass(frozen=True)
class Chart:
    """Axis-aligned box with a regular node grid, any dimension >= 1."""

    mins: tuple
    maxs: tuple
    resolution: tuple

    def __init__(self, mins, maxs, resolution):
        mins = tuple(float(v) for v in np.atleast_1d(mins))
        maxs = tuple(float(v) for v in np.atleast_1d(maxs))
        if len(mins) != len(maxs) or not mins:
            raise InvalidArgumentError("mins and maxs must have equal positive length")
        if any(hi <= lo for lo, hi in zip(mins, maxs)):
            raise InvalidArgumentError("chart must have positive extent on every axis")
        if np.isscalar(resolution):
            resolution = (int(resolution),) * len(mins)
        else:
            resolution = tuple(int(r) for r in resolution)
        if len(resolution) != len(mins) or any(r < 2 for r in resolution):
            raise InvalidArgumentError("resolution must be >= 2 nodes per axis")
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)
        object.__setattr__(self, "resolution", resolution)

    @property
    def dim(self):
        return len(self.mins)

    @property
    def spacing(self):
        return tuple((hi - lo) / (r - 1)
                     for lo, hi, r in zip(self.mins, self.maxs, self.resolution))

    def axis_nodes(self, axis):
        return np.linspace(self.mins[axis], self.maxs[axis], self.resolution[axis])

    def node_grid(self):
        """Coordinates of every node, shape (*resolution, dim)."""
        axes = [self.axis_nodes(j) for j in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def contains(self, points, tol=_DOMAIN_TOL):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        lo = np.asarray(self.mins) - tol
        hi = np.asarray(self.maxs) + tol
        return np.all((points >= lo) & (points <= hi), axis=1)

    def require_inside(self, points, what="point"):
        ok = self.contains(points)
        if not ok.all():
            bad = np.atleast_2d(points)[~ok][0]
            raise OutOfDomainError(f"{what} {bad.tolist()} leaves the chart")

    def interpolate(self, grid, points):
        """Multilinear interpolation of a node-sampled array.

        grid has shape (*resolution, ...); points is (n, dim). Returns an
        (n, ...) array. Points are clamped to the chart box, so call
        require_inside first when silent clamping would hide a bug.
        """
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        m = self.dim
        idx = []
        frac = []
        for j in range(m):
            h = self.spacing[j]
            u = (points[:, j] - self.mins[j]) / h
            i0 = np.clip(np.floor(u).astype(np.intp), 0, self.resolution[j] - 2)
            idx.append(i0)
            frac.append(np.clip(u - i0, 0.0, 1.0))
        out = None
        for corner in range(1 << m):
            w = np.ones(len(points))
            sel = []
            for j in range(m):
                if corner >> j & 1:
                    w = w * frac[j]
                    sel.append(idx[j] + 1)
                else:
                    w = w * (1.0 - frac[j])
                    sel.append(idx[j])
            vals = grid[tuple(sel)]
            term = w.reshape((len(points),) + (1,) * (vals.ndim - 1)) * vals
            out = term if out is None else out + term
        return out

    def to_json(self):
        return {"mins": list(self.mins), "maxs": list(self.maxs),
                "resolution": list(self.resolution)}

    @classmethod
    def from_json(cls, data):
        return cls(data["mins"], data["maxs"], data["resolution"])


class GridPath:
    """Axis-aligned path: a start point and (axis, signed length) segments."""

    def __init__(self, start, segments):
        self.start = np.asarray(start, dtype=np.float64).copy()
        self.segments = [(int(axis), float(length)) for axis, length in segments]
        for axis, length in self.segments:
            if axis < 0 or axis >= len(self.start):
                raise InvalidArgumentError(f"segment axis {axis} out of range")
            if not math.isfinite(length):
                raise InvalidArgumentError("segment length must be finite")

    def waypoints(self):
        pts = [self.start.copy()]
        for axis, length in self.segments:
            nxt = pts[-1].copy()
            nxt[axis] += length
            pts.append(nxt)
        return np.array(pts)

    @property
    def end(self):
        return self.waypoints()[-1]

    def reverse(self):
        """Same trace walked backwards."""
        return GridPath(self.end, [(a, -l) for a, l in reversed(self.segments)])

    def concat(self, other):
        if not np.allclose(self.end, other.start, atol=1e-12):
            raise InvalidArgumentError("paths do not meet for concatenation")
        return GridPath(self.start, self.segments + other.segments)

    @classmethod
    def canonical(cls, start, end):
        """Axis-ordered staircase from start to end (axis 0 first)."""
        start = np.asarray(start, dtype=np.float64)
        end = np.asarray(end, dtype=np.float64)
        segments = [(axis, float(end[axis] - start[axis])) for axis in range(len(start))]
        return cls(start, segments)


@dataclass
class ConnectionField:
    """Per-axis k x k connection samples omega[axis] on the chart nodes."""

    chart: Chart
    fiber_dim: int
    omega: np.ndarray  # (dim, *resolution, k, k)

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=np.float64)
        k = int(self.fiber_dim)
        want = (self.chart.dim,) + self.chart.resolution + (k, k)
        if self.omega.shape != want:
            raise InvalidArgumentError(
                f"omega grid shape {self.omega.shape} does not match chart/fiber {want}")

    def omega_at(self, axis, points):
        """Interpolated omega_axis at the given chart points, (n, k, k)."""
        return self.chart.interpolate(self.omega[axis], points)

    def to_json(self):
        return {
            "chart": self.chart.to_json(),
            "fiber_dim": int(self.fiber_dim),
            "sign_convention": SIGN_CONVENTION,
            "omega": np.ravel(self.omega, order="C").tolist(),
        }

    @classmethod
    def from_json(cls, data):
        chart = Chart.from_json(data["chart"])
        k = int(data["fiber_dim"])
        if data.get("sign_convention") != SIGN_CONVENTION:
            raise InvalidArgumentError(
                f"unsupported sign convention {data.get('sign_convention')!r}")
        shape = (chart.dim,) + chart.resolution + (k, k)
        omega = np.asarray(data["omega"], dtype=np.float64).reshape(shape)
        return cls(chart, k, omega)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass
class AffineField:
    """Christoffel-symbol grid gamma[..., k, i, j] = Gamma^k_ij on chart nodes."""

    chart: Chart
    gamma: np.ndarray  # (*resolution, dim, dim, dim)

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        m = self.chart.dim
        want = self.chart.resolution + (m, m, m)
        if self.gamma.shape != want:
            raise InvalidArgumentError(
                f"gamma grid shape {self.gamma.shape} does not match chart {want}")

    def gamma_at(self, points):
        return self.chart.interpolate(self.gamma, points)


def monomial_exponents(dim, degree=2):
    """Exponent tuples of the monomial basis 1, x_i, x_i x_j up to degree."""
    exps = [tuple([0] * dim)]
    if degree >= 1:
        for i in range(dim):
            e = [0] * dim
            e[i] = 1
            exps.append(tuple(e))
    if degree >= 2:
        for i in range(dim):
            for j in range(i, dim):
                e = [0] * dim
                e[i] += 1
                e[j] += 1
                exps.append(tuple(e))
    return exps


def monomial_values(points, exps):
    """Evaluate monomials at points; shape (n, len(exps))."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    cols = []
    for e in exps:
        col = np.ones(len(points))
        for j, p in enumerate(e):
            if p:
                col = col * points[:, j] ** p
        cols.append(col)
    return np.column_stack(cols)


def polynomial_omega_grid(chart, k, coeffs):
    """Sample a degree<=2 polynomial connection on the chart nodes.

    coeffs: (dim, n_mono, k, k) in the monomial_exponents basis order.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    exps = monomial_exponents(chart.dim)
    if coeffs.shape != (chart.dim, len(exps), k, k):
        raise InvalidArgumentError(
            f"polynomial coeffs must have shape {(chart.dim, len(exps), k, k)}")
    nodes = chart.node_grid().reshape(-1, chart.dim)
    mono = monomial_values(nodes, exps)  # (N, n_mono)
    grids = np.einsum("nm,jmab->jnab", mono, coeffs)
    return grids.reshape((chart.dim,) + chart.resolution + (k, k))


def random_polynomial_coeffs(dim, k, seed, scale=1.0, degree=2):
    """Convenience generator for test fields."""
    exps = monomial_exponents(dim, degree)
    rng = np.random.default_rng(seed)
    return scale * rng.standard_normal((dim, len(exps), k, k))


def build_field(chart, fiber_dim, kind, params=None):
    """Construct a ConnectionField (or a dual pair of them).

    kind "flat": omega = 0 everywhere.
    kind "constant": params is a (dim, k, k) stack of per-axis matrices.
    kind "polynomial": params are degree<=2 coefficients, see
        polynomial_omega_grid.
    kind "dual_pair": params = (inner_kind, inner_params); returns the tuple
        (A, B) with B.omega_j(x) = -A.omega_j(x)^T at every node, which
        realizes the curvature identity F(B) = -F(A)^T.
    """
    k = int(fiber_dim)
    if k < 1:
        raise InvalidArgumentError("fiber_dim must be >= 1")
    shape = (chart.dim,) + chart.resolution + (k, k)
    if kind == "flat":
        return ConnectionField(chart, k, np.zeros(shape))
    if kind == "constant":
        mats = np.asarray(params, dtype=np.float64)
        if mats.shape != (chart.dim, k, k):
            raise InvalidArgumentError(f"constant params must have shape {(chart.dim, k, k)}")
        omega = np.broadcast_to(
            mats.reshape((chart.dim,) + (1,) * chart.dim + (k, k)), shape).copy()
        return ConnectionField(chart, k, omega)
    if kind == "polynomial":
        return ConnectionField(chart, k, polynomial_omega_grid(chart, k, params))
    if kind == "dual_pair":
        inner_kind, inner_params = params
        a = build_field(chart, k, inner_kind, inner_params)
        b = ConnectionField(chart, k, -np.swapaxes(a.omega, -1, -2).copy())
        return a, b
    raise InvalidArgumentError(f"unknown field kind {kind!r}")


def _substep_plan(field, path, steps_per_unit):
    """Midpoint samples and signed substep lengths along the path.

    Returns (omegas (n, k, k), dts (n,)). Zero-length segments contribute
    nothing.
    """
    chart = field.chart
    chart.require_inside(path.waypoints(), "path waypoint")
    omegas = []
    dts = []
    pos = path.start.copy()
    for axis, length in path.segments:
        if length == 0.0:
            continue
        n = max(1, math.ceil(abs(length) * steps_per_unit))
        delta = length / n
        mids = np.repeat(pos[None, :], n, axis=0)
        mids[:, axis] += (np.arange(n) + 0.5) * delta
        omegas.append(field.omega_at(axis, mids))
        dts.append(np.full(n, delta))
        pos[axis] += length
    if not omegas:
        k = field.fiber_dim
        return np.zeros((0, k, k)), np.zeros(0)
    return np.concatenate(omegas), np.concatenate(dts)


def transport_path(field, path, steps_per_unit=64):
    """Parallel transport along a grid path.

    Ordered product of exp(-omega_axis(x_mid) * dt) over substeps; exact
    under path concatenation and reversal by construction (reversed substeps
    hit the same midpoints with negated lengths).
    """
    if steps_per_unit <= 0:
        raise InvalidArgumentError("steps_per_unit must be positive")
    omegas, dts = _substep_plan(field, path, steps_per_unit)
    return kernels.ordered_exp_product(omegas, dts)


def curvature(field, axes=(0, 1)):
    """F_ab = d_a omega_b - d_b omega_a + [omega_a, omega_b] on the node grid.

    Central differences in the interior, one-sided at the boundary (the
    boundary layer is excluded from norm-based acceptance checks).
    """
    a, b = axes
    if a == b:
        raise InvalidArgumentError("curvature needs two distinct axes")
    wa = field.omega[a]
    wb = field.omega[b]
    da_wb = np.gradient(wb, field.chart.spacing[a], axis=a)
    db_wa = np.gradient(wa, field.chart.spacing[b], axis=b)
    comm = wa @ wb - wb @ wa
    return da_wb - db_wa + comm


def torsion(affine):
    """T^k_ij = Gamma^k_ij - Gamma^k_ji on the node grid."""
    return affine.gamma - np.swapaxes(affine.gamma, -1, -2)


def rectangle_loop(corner, axes, sides):
    """Counterclockwise rectangle through corner spanned by two chart axes."""
    a, b = axes
    la, lb = sides
    return GridPath(corner, [(a, la), (b, lb), (a, -la), (b, -lb)])


def holonomy_loop(field, corner, axes=(0, 1), sides=(1.0, 1.0), steps_per_unit=64):
    """Transport around the counterclockwise rectangle; k x k holonomy matrix."""
    return transport_path(field, rectangle_loop(corner, axes, sides), steps_per_unit)


def _surface_integral(field, corner, axes, sides, steps_per_unit):
    """Plaquette-summed curvature over the loop rectangle."""
    a, b = axes
    la, lb = sides
    f_grid = curvature(field, axes)
    na = max(1, math.ceil(abs(la) * steps_per_unit))
    nb = max(1, math.ceil(abs(lb) * steps_per_unit))
    da = la / na
    db = lb / nb
    corner = np.asarray(corner, dtype=np.float64)
    ca = corner[a] + (np.arange(na) + 0.5) * da
    cb = corner[b] + (np.arange(nb) + 0.5) * db
    centers = np.repeat(corner[None, :], na * nb, axis=0)
    mesh_a, mesh_b = np.meshgrid(ca, cb, indexing="ij")
    centers[:, a] = mesh_a.ravel()
    centers[:, b] = mesh_b.ravel()
    f_vals = field.chart.interpolate(f_grid, centers)
    return f_vals.sum(axis=0) * abs(da * db) * np.sign(la * lb)


def stokes_residual(field, corner, axes=(0, 1), sides=(1.0, 1.0), steps_per_unit=64):
    """Frobenius norm of holonomy - exp(-integral of F over the loop surface).

    Zero in the abelian continuum limit; for k >= 2 the comparison only
    matches the leading order in loop area, so the residual measures the
    genuine non-abelian anomaly rather than an implementation defect.
    """
    hol = holonomy_loop(field, corner, axes, sides, steps_per_unit)
    surf = _surface_integral(field, corner, axes, sides, steps_per_unit)
    return float(np.linalg.norm(hol - expm(-surf), ord="fro"))


def _torsion_apply(t_val, u, v):
    # t_val[..., k, i, j] u_i v_j
    return np.einsum("...kij,i,j->...k", t_val, u, v)


def twisted_jacobiator(affine, x_vec, y_vec, z_vec, probe, fd_step=1e-4):
    """Jacobiator of the torsion-twisted bracket at a probe point.

    The twisted bracket of constant vectors is [U,V]_T(x) = T_x(U,V), a
    position-dependent field; nesting therefore needs the directional
    derivative term [W, Z]_Lie = -D_Z W evaluated by central differences.
    Returns the cyclic-sum 3-vector.
    """
    probe = np.asarray(probe, dtype=np.float64)
    t_grid = torsion(affine)
    chart = affine.chart

    def t_at(points):
        return chart.interpolate(t_grid, points)

    vecs = [np.asarray(v, dtype=np.float64) for v in (x_vec, y_vec, z_vec)]
    total = np.zeros(chart.dim)
    for i in range(3):
        u, v, w = vecs[i], vecs[(i + 1) % 3], vecs[(i + 2) % 3]
        # inner = [u, v]_T as a field; evaluate it and its derivative along w.
        plus = probe + fd_step * w
        minus = probe - fd_step * w
        chart.require_inside(np.array([plus, minus]), "jacobiator stencil point")
        inner_plus = _torsion_apply(t_at(plus)[0], u, v)
        inner_minus = _torsion_apply(t_at(minus)[0], u, v)
        d_w_inner = (inner_plus - inner_minus) / (2.0 * fd_step)
        inner_probe = _torsion_apply(t_at(probe[None, :])[0], u, v)
        twist = _torsion_apply(t_at(probe[None, :])[0], inner_probe, w)
        total = total + (-d_w_inner + twist)
    return total
