"""From two projected moment fields back to a 3-D object: direction
solving, frame construction, initial-point search, and flow integration.

The pipeline runs in a flat chart. Directions come from least squares on
the stacked projection system; the frame spans the tangent space by
combining an anchor offset with plane rotations of the moment data; the
object is swept out by composing the three frame flows over a parameter
lattice.
"""

from dataclasses import dataclass

import numpy as np

from .connection import Chart
from .errors import (DegenerateFrameError, IllPosedError, InvalidArgumentError,
                     NotFoundError)
from .scene import PointObject


@dataclass
class ReconstructionProblem:
    """One evaluation of the direction system A(p) v = rhs."""

    pair: object
    rhs1: np.ndarray
    rhs2: np.ndarray
    point: np.ndarray

    def __post_init__(self):
        self.rhs1 = np.asarray(self.rhs1, dtype=np.float64).reshape(2)
        self.rhs2 = np.asarray(self.rhs2, dtype=np.float64).reshape(2)
        self.point = np.asarray(self.point, dtype=np.float64).reshape(3)

    @property
    def rhs(self):
        return np.concatenate([self.rhs1, self.rhs2])


def assemble_A(pair):
    """Stacked 4x3 system matrix plus its rank diagnostics."""
    return pair.stacked_matrix(), pair.stacked_rank()


def solve_direction(prob):
    """Least-squares direction for the stacked system; returns (v, residual).

    A small residual certifies that the right-hand side is compatible with
    the projection pair. Rank below 3 leaves the direction underdetermined,
    so that case raises instead of silently picking a representative.
    """
    a, report = assemble_A(prob.pair)
    if report.rank < 3:
        raise IllPosedError(
            f"stacked projection system has rank {report.rank} < 3", report=report)
    v, *_ = np.linalg.lstsq(a, prob.rhs, rcond=None)
    residual = float(np.linalg.norm(a @ v - prob.rhs))
    return v, residual


@dataclass
class Frame:
    """Three vector fields sampled on a chart grid, plus the worst spanning
    condition number seen while building them.

    vectors[..., k, :] holds the k-th field's components at each node.
    """

    chart: Chart
    vectors: np.ndarray
    condition: float

    def at(self, points):
        """Trilinear frame matrices at arbitrary chart points, (n, 3, 3)."""
        return self.chart.interpolate(self.vectors, points)


def _plane_rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    r = np.array([[c, -s], [s, c]])
    block = np.zeros((4, 4))
    block[:2, :2] = r
    block[2:, 2:] = r
    return block


def _stacked_moments(mu_field, point):
    m1, m2 = mu_field(np.asarray(point, dtype=np.float64))
    return np.concatenate([np.asarray(m1, dtype=np.float64).reshape(2),
                           np.asarray(m2, dtype=np.float64).reshape(2)])


def moment_columns(mu_field, anchor, thetas, point):
    """The 4x3 right-hand-side stack the frame solve uses at one point.

    Column k is anchor + rotation_k(moments(point) - anchor-moments), with
    rotation angles (0, thetas[0], thetas[1]) applied in both image planes.
    The column span is what the frame inherits, so its invariances are
    easiest to check here, before the projection solve.
    """
    u = _stacked_moments(mu_field, anchor)
    d = _stacked_moments(mu_field, point) - u
    rots = [np.eye(4), _plane_rotation(thetas[0]), _plane_rotation(thetas[1])]
    return np.column_stack([u + r @ d for r in rots])


def build_frame(pair, mu_field, thetas=(2 * np.pi / 3, 4 * np.pi / 3),
                chart=None, anchor=None, condition_bound=1e6):
    """Span the tangent space from rotated copies of the moment data.

    The first field uses the moments as-is; the other two rotate the
    deviation from a fixed anchor value by thetas in both image planes
    before solving the stacked system. The anchor sits outside the chart
    by default so the deviation never vanishes on it. Raw rotation without
    the anchor offset would sweep only a 2-D subspace, which is why the
    deviation form exists.
    """
    t2, t3 = (float(t) % (2 * np.pi) for t in thetas)
    if min(t2, t3) < 1e-12 or abs(t2 - t3) < 1e-12:
        raise InvalidArgumentError("thetas must be distinct and nonzero mod 2*pi")
    if chart is None:
        chart = Chart((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), 9)
    if chart.dim != 3:
        raise InvalidArgumentError("frame chart must be 3-dimensional")
    if anchor is None:
        mins = np.array(chart.mins)
        maxs = np.array(chart.maxs)
        anchor = mins - 0.5 * (maxs - mins)

    a_stack = pair.stacked_matrix()
    a_pinv = np.linalg.pinv(a_stack)
    u = _stacked_moments(mu_field, anchor)
    rots = [np.eye(4), _plane_rotation(t2), _plane_rotation(t3)]

    nodes = chart.node_grid().reshape(-1, chart.dim)
    vectors = np.empty((len(nodes), 3, 3))
    worst = 0.0
    for n, p in enumerate(nodes):
        d = _stacked_moments(mu_field, p) - u
        b = np.column_stack([u + r @ d for r in rots])
        v = a_pinv @ b
        sigma = np.linalg.svd(v, compute_uv=False)
        cond = np.inf if sigma[-1] == 0.0 else float(sigma[0] / sigma[-1])
        if cond > condition_bound:
            loc = np.unravel_index(n, chart.resolution)
            raise DegenerateFrameError(
                f"frame condition {cond:.3e} exceeds bound {condition_bound:.1e}",
                node=loc, location=tuple(p), condition=cond)
        worst = max(worst, cond)
        vectors[n] = v.T
    return Frame(chart, vectors.reshape(chart.resolution + (3, 3)), worst)


def involutivity_defect(frame):
    """Worst relative residual of frame-basis decompositions of the
    finite-difference Lie brackets [v_k, v_l] over grid nodes.

    With three independent fields in three dimensions the bracket always
    lies in the span, so this measures numerical health rather than a
    geometric obstruction; it blows up exactly where the frame degenerates.
    """
    w = frame.vectors
    grads = np.stack(
        [np.gradient(w, frame.chart.spacing[a], axis=a) for a in range(3)], axis=-1)
    worst = 0.0
    mats = np.swapaxes(w, -1, -2)  # columns are frame vectors
    for k in range(3):
        for l in range(k + 1, 3):
            # [v_k, v_l]_i = sum_a v_k_a d_a v_l_i - v_l_a d_a v_k_i
            br = (np.einsum("...a,...ia->...i", w[..., k, :], grads[..., l, :, :])
                  - np.einsum("...a,...ia->...i", w[..., l, :], grads[..., k, :, :]))
            coef = np.linalg.solve(mats, br[..., None])[..., 0]
            recon = np.einsum("...ik,...k->...i", mats, coef)
            num = np.linalg.norm(br - recon, axis=-1)
            den = np.maximum(1.0, np.linalg.norm(br, axis=-1))
            worst = max(worst, float(np.max(num / den)))
    return worst


@dataclass
class RootCertificate:
    """Empirical uniqueness report from the multistart root search."""

    status: str
    roots: np.ndarray
    residuals: np.ndarray
    starts: int
    converged: int

    def to_json(self):
        return {"status": self.status, "roots": self.roots.tolist(),
                "residuals": self.residuals.tolist(),
                "starts": self.starts, "converged": self.converged}


def _lm_minimize(residual_fn, x0, max_iter=100, fd_step=1e-6, stop=1e-13):
    """Damped least squares with numeric Jacobians."""
    x = np.asarray(x0, dtype=np.float64).copy()
    r = residual_fn(x)
    lam = 1e-3
    for _ in range(max_iter):
        nr = np.linalg.norm(r)
        if nr <= stop:
            break
        jac = np.empty((len(r), len(x)))
        for j in range(len(x)):
            e = np.zeros(len(x))
            e[j] = fd_step
            jac[:, j] = (residual_fn(x + e) - residual_fn(x - e)) / (2 * fd_step)
        g = jac.T @ r
        h = jac.T @ jac
        improved = False
        for _ in range(12):
            try:
                step = np.linalg.solve(h + lam * np.eye(len(x)), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            cand = x + step
            rc = residual_fn(cand)
            if np.linalg.norm(rc) < nr:
                x, r = cand, rc
                lam = max(lam / 3, 1e-12)
                improved = True
                break
            lam *= 10
        if not improved:
            break
    return x, float(np.linalg.norm(r))


def find_initial_point(pair, z1, c1, c2, mu_field, multistart=16, seed=0,
                       box=((-2.0, 2.0), (-2.0, 2.0), (-2.0, 2.0)),
                       root_tol=1e-10, merge_radius=1e-6):
    """Solve for a point matching both projections and both moment values.

    Runs a damped least-squares descent from multistart random seeds and
    clusters the converged points. Returns the best root plus a certificate
    counting distinct roots; more than one flips the status to "ambiguous",
    none raises NotFoundError.
    """
    if multistart < 1:
        raise InvalidArgumentError("multistart must be >= 1")
    z1 = np.asarray(z1, dtype=np.float64).reshape(2)
    c1 = np.asarray(c1, dtype=np.float64).reshape(2)
    c2 = np.asarray(c2, dtype=np.float64).reshape(2)
    z2 = pair.duality.apply(z1)

    def residual(p):
        m1, m2 = mu_field(p)
        return np.concatenate([
            pair.p1.apply(p)[0] - z1,
            pair.p2.apply(p)[0] - z2,
            np.asarray(m1, dtype=np.float64).reshape(2) - c1,
            np.asarray(m2, dtype=np.float64).reshape(2) - c2,
        ])

    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in box], dtype=np.float64)
    hi = np.array([b[1] for b in box], dtype=np.float64)
    roots = []
    resids = []
    converged = 0
    for _ in range(multistart):
        x0 = rng.uniform(lo, hi)
        x, rnorm = _lm_minimize(residual, x0)
        if rnorm <= root_tol:
            converged += 1
            for existing in roots:
                if np.linalg.norm(existing - x) <= merge_radius:
                    break
            else:
                roots.append(x)
                resids.append(rnorm)
    if not roots:
        raise NotFoundError(
            f"no consistent point found after {multistart} starts")
    order = np.argsort(resids)
    roots_arr = np.array([roots[i] for i in order])
    resid_arr = np.array([resids[i] for i in order])
    status = "ok" if len(roots) == 1 else "ambiguous"
    cert = RootCertificate(status, roots_arr, resid_arr, multistart, converged)
    return roots_arr[0], cert


@dataclass
class FlowResult:
    """Lattice swept by the three frame flows, with truncation bookkeeping."""

    object: PointObject
    truncated: bool
    kept: int
    total: int


def _rk4_leg(frame, points, k, dt, substeps):
    """Advance points along frame field k by parameter dt."""
    h = dt / substeps
    p = points
    for _ in range(substeps):
        k1 = frame.at(p)[:, k, :]
        k2 = frame.at(p + 0.5 * h * k1)[:, k, :]
        k3 = frame.at(p + 0.5 * h * k2)[:, k, :]
        k4 = frame.at(p + h * k3)[:, k, :]
        p = p + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return p


def integrate_flows(frame, p0, param_box, steps, substeps=4,
                    involutivity_threshold=1e-3, label="flow_lattice"):
    """Compose the three frame flows over a parameter lattice from p0.

    Flow three runs innermost: lattice(t1, t2, t3) applies field 1 for t1,
    then field 2 for t2, then field 3 for t3. Points whose trajectory exits
    the frame chart are dropped (along with their descendants) and the
    result is flagged truncated.
    """
    defect = involutivity_defect(frame)
    if defect > involutivity_threshold:
        raise IllPosedError(
            f"frame involutivity defect {defect:.3e} exceeds "
            f"{involutivity_threshold:.1e}; flows would not close")
    p0 = np.asarray(p0, dtype=np.float64).reshape(3)
    frame.chart.require_inside(p0, "flow start")
    if steps < 1:
        raise InvalidArgumentError("steps must be >= 1")
    grids = [np.linspace(float(a), float(b), steps + 1) for a, b in param_box]

    # axis-1 chain from p0
    pts = np.empty((steps + 1, 3))
    alive = np.ones(steps + 1, dtype=bool)
    cur = p0[None, :] + np.zeros((1, 3))
    if grids[0][0] != 0.0:
        cur = _rk4_leg(frame, cur, 0, grids[0][0], substeps)
    pts[0] = cur[0]
    alive[0] = bool(frame.chart.contains(cur)[0])
    for i in range(steps):
        cur = _rk4_leg(frame, cur, 0, grids[0][i + 1] - grids[0][i], substeps)
        pts[i + 1] = cur[0]
        alive[i + 1] = alive[i] and bool(frame.chart.contains(cur)[0])

    def extend(base_pts, base_alive, axis):
        grid = grids[axis]
        n = len(base_pts)
        out = np.empty((n, steps + 1, 3))
        ok = np.zeros((n, steps + 1), dtype=bool)
        cur = base_pts.copy()
        if grid[0] != 0.0:
            cur = _rk4_leg(frame, cur, axis, grid[0], substeps)
        out[:, 0] = cur
        ok[:, 0] = base_alive & frame.chart.contains(cur)
        for i in range(steps):
            cur = _rk4_leg(frame, cur, axis, grid[i + 1] - grid[i], substeps)
            out[:, i + 1] = cur
            ok[:, i + 1] = ok[:, i] & frame.chart.contains(cur)
        return out.reshape(-1, 3), ok.reshape(-1)

    pts, alive = extend(pts, alive, 1)
    pts, alive = extend(pts, alive, 2)
    total = len(pts)
    kept = int(np.sum(alive))
    if kept == 0:
        raise NotFoundError("every flow trajectory left the chart")
    obj = PointObject(label=label, points=pts[alive],
                      weights=np.full(kept, 1.0 / kept))
    return FlowResult(obj, truncated=kept < total, kept=kept, total=total)
