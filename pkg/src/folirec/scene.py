"""Desk-scale scenes: weighted point objects, affine image projections,
slab-binned Radon samples, and closed-form two-view recovery."""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateInputError, IllPosedError, InvalidArgumentError

_RANK_TOL = 1e-10


def _as_array(x, shape, name):
    a = np.asarray(x, dtype=np.float64)
    if a.shape != shape:
        raise InvalidArgumentError(f"{name}: expected shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError(f"{name}: entries must be finite")
    return a


@dataclass
class PointObject:
    """Finite weighted point set in R^3."""

    label: str
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise InvalidArgumentError("points must be an (n, 3) array")
        if len(self.points) == 0:
            raise DegenerateInputError("object has no points")
        if self.weights.shape != (len(self.points),):
            raise InvalidArgumentError("weights length must match points")
        if not (np.all(np.isfinite(self.points)) and np.all(np.isfinite(self.weights))):
            raise InvalidArgumentError("points and weights must be finite")
        if np.any(self.weights < 0) or self.weights.sum() <= 0:
            raise InvalidArgumentError("weights must be nonnegative with positive total")

    @property
    def total_weight(self):
        return float(self.weights.sum())

    def centroid(self):
        """Weight-averaged position."""
        return self.weights @ self.points / self.weights.sum()

    def to_json(self):
        return {
            "label": self.label,
            "points": self.points.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_json(cls, data):
        try:
            return cls(data["label"], np.asarray(data["points"], dtype=np.float64),
                       np.asarray(data["weights"], dtype=np.float64))
        except KeyError as exc:
            raise InvalidArgumentError(f"object JSON missing key {exc}") from exc

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass
class ProjectionSpec:
    """Affine map R^3 -> R^2, y = matrix @ p + offset. matrix must have rank 2."""

    matrix: np.ndarray
    offset: np.ndarray = field(default_factory=lambda: np.zeros(2))
    center_tag: str = ""

    def __post_init__(self):
        self.matrix = _as_array(self.matrix, (2, 3), "matrix")
        self.offset = _as_array(self.offset, (2,), "offset")
        if np.linalg.matrix_rank(self.matrix, tol=_RANK_TOL) < 2:
            raise DegenerateInputError("projection matrix must have rank 2")

    def apply(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return points @ self.matrix.T + self.offset

    def to_json(self):
        return {"matrix": self.matrix.tolist(), "offset": self.offset.tolist()}

    @classmethod
    def from_json(cls, data):
        try:
            return cls(np.asarray(data["matrix"]), np.asarray(data["offset"]))
        except KeyError as exc:
            raise InvalidArgumentError(f"projection JSON missing key {exc}") from exc


@dataclass
class DualityMap:
    """Invertible affine identification of the two image planes."""

    matrix: np.ndarray
    offset: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.matrix = _as_array(self.matrix, (2, 2), "duality matrix")
        self.offset = _as_array(self.offset, (2,), "duality offset")
        if abs(np.linalg.det(self.matrix)) < _RANK_TOL:
            raise DegenerateInputError("duality map must be invertible")

    def apply(self, z):
        return self.matrix @ np.asarray(z, dtype=np.float64) + self.offset

    def to_json(self):
        return {"matrix": self.matrix.tolist(), "offset": self.offset.tolist()}

    @classmethod
    def from_json(cls, data):
        return cls(np.asarray(data["matrix"]), np.asarray(data.get("offset", [0.0, 0.0])))


@dataclass
class StackedRank:
    """Rank diagnostics of the stacked 4x3 projection system."""

    rank: int
    sigma_min: float

    def to_json(self):
        return {"rank": self.rank, "sigma_min": self.sigma_min}


@dataclass
class ProjectionPair:
    """Two projections plus the duality map identifying their image planes.

    Rank of the stacked system is a reported property, not a construction
    requirement; degenerate (e.g. coaxial) pairs are representable and the
    solvers raise IllPosedError when they need rank 3.
    """

    p1: ProjectionSpec
    p2: ProjectionSpec
    duality: DualityMap

    def stacked_matrix(self):
        return np.vstack([self.p1.matrix, self.p2.matrix])

    def stacked_rank(self):
        a = self.stacked_matrix()
        sigma = np.linalg.svd(a, compute_uv=False)
        rank = int(np.sum(sigma > _RANK_TOL * sigma[0]))
        return StackedRank(rank=rank, sigma_min=float(sigma[2]))

    def to_json(self):
        return {"p1": self.p1.to_json(), "p2": self.p2.to_json(),
                "duality": self.duality.to_json()}

    @classmethod
    def from_json(cls, data):
        try:
            return cls(ProjectionSpec.from_json(data["p1"]),
                       ProjectionSpec.from_json(data["p2"]),
                       DualityMap.from_json(data["duality"]))
        except KeyError as exc:
            raise InvalidArgumentError(f"pair JSON missing key {exc}") from exc

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass
class RadonSample:
    """Total weight in the slab around the plane <n(angle), x> = offset."""

    angle: float
    offset: float
    value: float


_HELIX_PITCH = 0.25
_CAPSID_ORDER = 5


def generate_object(kind, n, seed):
    """Deterministic test objects.

    random_cloud: n standard-normal points, unit weights.
    helix: points (cos s, sin s, 0.25 s) at n parameters s ~ U[0, 4*pi),
        sorted ascending, unit weights.
    symmetric_capsid: orbit closure of floor(n/5) seed points under the
        order-5 rotation group about z; the n mod 5 remainder points sit on
        the axis so the object stays exactly invariant for every n.
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if kind == "random_cloud":
        points = rng.standard_normal((n, 3))
    elif kind == "helix":
        s = np.sort(rng.uniform(0.0, 4.0 * np.pi, size=n))
        points = np.column_stack([np.cos(s), np.sin(s), _HELIX_PITCH * s])
    elif kind == "symmetric_capsid":
        base_count, axis_count = divmod(n, _CAPSID_ORDER)
        rings = []
        if base_count:
            r = rng.uniform(0.8, 1.2, size=base_count)
            phi = rng.uniform(0.0, 2.0 * np.pi, size=base_count)
            z = rng.uniform(-1.0, 1.0, size=base_count)
            for k in range(_CAPSID_ORDER):
                ang = phi + 2.0 * np.pi * k / _CAPSID_ORDER
                rings.append(np.column_stack([r * np.cos(ang), r * np.sin(ang), z]))
        if axis_count:
            z_axis = rng.uniform(-1.0, 1.0, size=axis_count)
            rings.append(np.column_stack([np.zeros(axis_count), np.zeros(axis_count), z_axis]))
        points = np.vstack(rings)
    else:
        raise InvalidArgumentError(f"unknown object kind {kind!r}")
    return PointObject(label=f"{kind}-{seed}", points=points, weights=np.ones(len(points)))


def project(obj, spec):
    """Image of every object point, an (n, 2) array. Weights carry over from obj."""
    return spec.apply(obj.points)


def moment_map(obj, spec):
    """Weighted centroid of the projected object.

    Affine in the object: equals spec applied to the 3D centroid.
    """
    total = obj.weights.sum()
    if total <= 0:
        raise DegenerateInputError("total weight must be positive")
    return (obj.weights / total) @ project(obj, spec)


def plane_normal(angle):
    """Normal of the slab family, rotating from z (angle 0) toward x."""
    return np.array([np.sin(angle), 0.0, np.cos(angle)])


def radon_transform(obj, angles, offsets, slab_width):
    """Discrete Radon samples on the angle x offset grid.

    A point contributes its weight to the sample (angle, t) when its signed
    distance d = <n(angle), p> satisfies d - t in [-slab_width/2, slab_width/2).
    The half-open bin makes an arithmetic offset ladder with step slab_width
    a partition, so total mass is conserved exactly.
    """
    if slab_width <= 0:
        raise InvalidArgumentError("slab_width must be positive")
    if len(np.atleast_1d(angles)) == 0 or len(np.atleast_1d(offsets)) == 0:
        raise InvalidArgumentError("angles and offsets must be nonempty")
    samples = []
    for angle in np.asarray(angles, dtype=np.float64):
        d = obj.points @ plane_normal(angle)
        for t in np.asarray(offsets, dtype=np.float64):
            rel = d - t
            inside = (rel >= -slab_width / 2.0) & (rel < slab_width / 2.0)
            samples.append(RadonSample(float(angle), float(t), float(obj.weights[inside].sum())))
    return samples


def _match_by_centroid_sort(pair, y1, y2):
    """Order both image lists along the duality-aligned axis and pair them up.

    Returns an index array sigma with y2[sigma[i]] matched to y1[i].
    """
    axis1 = np.array([1.0, 0.0])
    axis2 = pair.duality.matrix @ axis1
    axis2 = axis2 / np.linalg.norm(axis2)
    s1 = (y1 - y1.mean(axis=0)) @ axis1
    s2 = (y2 - y2.mean(axis=0)) @ axis2
    order1 = np.argsort(s1, kind="stable")
    order2 = np.argsort(s2, kind="stable")
    sigma = np.empty(len(y1), dtype=int)
    sigma[order1] = order2
    return sigma


def solve_two_projection_points(pair, y1, y2, matching="given"):
    """Recover 3D points from two affine images by stacked least squares.

    matching "given" pairs images by index; "centroid_sort" first sorts each
    image by signed distance to its centroid along the duality-aligned axis.
    Output points align with the order of y1. Returns (points, residuals).
    """
    y1 = np.atleast_2d(np.asarray(y1, dtype=np.float64))
    y2 = np.atleast_2d(np.asarray(y2, dtype=np.float64))
    if y1.shape != y2.shape or y1.shape[1] != 2:
        raise InvalidArgumentError("images must be matching (n, 2) arrays")
    report = pair.stacked_rank()
    if report.rank < 3:
        raise IllPosedError(
            f"stacked projection system has rank {report.rank} < 3", report=report)
    if matching == "given":
        sigma = np.arange(len(y1))
    elif matching == "centroid_sort":
        sigma = _match_by_centroid_sort(pair, y1, y2)
    else:
        raise InvalidArgumentError(f"unknown matching mode {matching!r}")

    a = pair.stacked_matrix()
    rhs = np.hstack([y1 - pair.p1.offset, y2[sigma] - pair.p2.offset])
    sol, *_ = np.linalg.lstsq(a, rhs.T, rcond=None)
    points = sol.T
    residuals = np.linalg.norm(points @ a.T - rhs, axis=1)
    return points, residuals


def hausdorff_distance(points_a, points_b):
    """Symmetric Hausdorff distance between two finite point sets."""
    a = np.atleast_2d(np.asarray(points_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(points_b, dtype=np.float64))
    tree_a = cKDTree(a)
    tree_b = cKDTree(b)
    d_ab = tree_b.query(a, k=1)[0].max()
    d_ba = tree_a.query(b, k=1)[0].max()
    return float(max(d_ab, d_ba))
