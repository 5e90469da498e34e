"""Mask-driven imputation through a learned polynomial connection.

Missing coordinates of a sample span a leaf the imputer can move along;
a degree-two polynomial connection over that leaf chart transports the
whole data vector. Fitting balances reconstruction of held-out samples
against the field's curvature; at inference, transporting one observed
point along several random staircase paths yields one imputation per
path, with curvature controlling how much the answers disagree.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm, expm_frechet

from .connection import monomial_exponents, monomial_values
from .errors import FitDivergedError, InvalidArgumentError


@dataclass
class Dataset:
    """Fully observed training samples from a synthetic manifold."""

    samples: np.ndarray
    manifold_dim: int
    generator_tag: str

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[1] < 2:
            raise InvalidArgumentError("samples must be (n, d) with d >= 2")
        if len(self.samples) < 10:
            raise InvalidArgumentError("need at least 10 samples")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidArgumentError("samples must be finite")

    @property
    def dim(self):
        return self.samples.shape[1]


@dataclass
class Mask:
    """Observation pattern: bits[j] true means coordinate j is observed."""

    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 1:
            raise InvalidArgumentError("mask must be a flat bit vector")
        if self.bits.all() or not self.bits.any():
            raise InvalidArgumentError(
                "mask needs at least one observed and one missing coordinate")

    @classmethod
    def from_bitstring(cls, text):
        if not set(text) <= {"0", "1"}:
            raise InvalidArgumentError("mask bitstring must contain only 0 and 1")
        return cls(np.array([ch == "1" for ch in text]))

    @property
    def observed_axes(self):
        return [int(i) for i in np.flatnonzero(self.bits)]

    @property
    def missing_axes(self):
        return [int(i) for i in np.flatnonzero(~self.bits)]


def build_mask_foliations(mask):
    """(F1_axes, F2_axes): leaf directions of the two mask foliations.

    Moving inside a leaf of the first foliation changes only missing
    coordinates, so F1_axes lists the missing indices; F2_axes the
    observed ones. Indices are 0-based.
    """
    return mask.missing_axes, mask.observed_axes


def make_dataset(kind, n, d, noise, seed):
    """Synthetic manifold samples: an affine 2-plane or a quadratic graph."""
    if n < 10:
        raise InvalidArgumentError("n must be >= 10")
    if d < 3:
        raise InvalidArgumentError("d must be >= 3")
    rng = np.random.default_rng(seed)
    t = rng.normal(size=(n, 2))
    if kind == "plane":
        basis = np.linalg.qr(rng.normal(size=(d, 2)))[0]
        origin = 0.5 * rng.normal(size=d)
        x = origin + t @ basis.T
    elif kind == "curved_surface":
        quad = rng.normal(size=(d - 2, 2, 2))
        quad = 0.5 * (quad + np.swapaxes(quad, 1, 2))
        lin = rng.normal(size=(d - 2, 2))
        const = rng.normal(size=d - 2)
        x = np.empty((n, d))
        x[:, :2] = t
        x[:, 2:] = (np.einsum("ni,jik,nk->nj", t, quad, t)
                    + t @ lin.T + const)
    else:
        raise InvalidArgumentError(f"unknown dataset kind {kind!r}")
    x = x + noise * rng.normal(size=(n, d))
    tag = f"{kind}:n={n}:d={d}:noise={noise}:seed={seed}"
    return Dataset(x, 2, tag)


@dataclass
class LearnedConnection:
    """Polynomial connection over the missing-coordinate chart.

    coeffs[a, m] is the d x d matrix weighting monomial m in the field
    component along missing axis a; bounds delimit the chart the fit saw.
    """

    coeffs: np.ndarray
    lam: float
    fit_report: dict
    mask: Mask
    bounds: tuple

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if not np.all(np.isfinite(self.coeffs)):
            raise InvalidArgumentError("connection coefficients must be finite")

    @property
    def chart_dim(self):
        return self.coeffs.shape[0]

    @property
    def fiber_dim(self):
        return self.coeffs.shape[-1]

    def omega_at(self, u):
        """All chart components of the field at one leaf point, (m, d, d)."""
        exps = monomial_exponents(self.chart_dim)
        phi = monomial_values(np.asarray(u, dtype=np.float64), exps)[0]
        return np.einsum("m,amij->aij", phi, self.coeffs)


def _monomial_gradients(u, exps):
    """Values and first derivatives of each monomial at one point."""
    u = np.asarray(u, dtype=np.float64)
    phi = monomial_values(u, exps)[0]
    m = len(u)
    dphi = np.zeros((m, len(exps)))
    for idx, e in enumerate(exps):
        for a in range(m):
            if e[a] == 0:
                continue
            de = list(e)
            de[a] -= 1
            term = float(e[a])
            for b, p in enumerate(de):
                if p:
                    term *= u[b] ** p
            dphi[a, idx] = term
    return phi, dphi


def curvature_penalty(coeffs, bounds, lattice_res=7):
    """Summed squared Frobenius curvature over a fixed chart lattice.

    Returns (value, gradient wrt coeffs). The field is polynomial, so the
    derivative parts of the curvature are evaluated analytically.
    """
    m, n_mono = coeffs.shape[:2]
    exps = monomial_exponents(m)
    axes = [np.linspace(lo, hi, lattice_res) for lo, hi in zip(*bounds)]
    lattice = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
    value = 0.0
    grad = np.zeros_like(coeffs)
    for u in lattice:
        phi, dphi = _monomial_gradients(u, exps)
        omega = np.einsum("m,amij->aij", phi, coeffs)
        domega = np.einsum("bm,amij->abij", dphi, coeffs)  # d_b omega_a
        for a in range(m):
            for b in range(a + 1, m):
                f = (domega[b, a] - domega[a, b]
                     + omega[a] @ omega[b] - omega[b] @ omega[a])
                value += float(np.sum(f * f))
                # adjoints of each term of f wrt the two field values
                grad[b] += 2.0 * np.einsum("m,ij->mij", dphi[a], f)
                grad[a] -= 2.0 * np.einsum("m,ij->mij", dphi[b], f)
                ga = f @ omega[b].T - omega[b].T @ f
                gb = omega[a].T @ f - f @ omega[a].T
                grad[a] += 2.0 * np.einsum("m,ij->mij", phi, ga)
                grad[b] += 2.0 * np.einsum("m,ij->mij", phi, gb)
    return value, grad


def curvature_norm(conn, lattice_res=7):
    """Root of the summed squared lattice curvature of a learned field."""
    value, _ = curvature_penalty(conn.coeffs, conn.bounds, lattice_res)
    return float(np.sqrt(value))


def _staircase_pieces(delta, order_rng, pieces_per_axis):
    """Monotone staircase from 0 to delta: per-axis slices, shuffled."""
    pieces = []
    for a, da in enumerate(delta):
        if da == 0.0:
            continue
        pieces.extend([(a, da / pieces_per_axis)] * pieces_per_axis)
    if order_rng is not None:
        order_rng.shuffle(pieces)
    return pieces


def _transport(coeffs, exps, start, pieces, substeps):
    """Ordered product of exponential factors along the staircase.

    Returns (P, factor cache) where the cache holds everything the
    backward pass needs: per substep, its axis, signed length, midpoint
    monomials, generator and factor.
    """
    d = coeffs.shape[-1]
    p = np.eye(d)
    cache = []
    u = np.asarray(start, dtype=np.float64).copy()
    for axis, length in pieces:
        h = length / substeps
        for s in range(substeps):
            mid = u.copy()
            mid[axis] += (s + 0.5) * h
            phi = monomial_values(mid, exps)[0]
            omega = np.einsum("m,mij->ij", phi, coeffs[axis])
            gen = -h * omega
            fac = expm(gen)
            cache.append((axis, h, phi, gen, fac))
            p = fac @ p
        u[axis] += length
    return p, cache


def _transport_gradient(cache, grad_p, coeffs_shape):
    """Pull a gradient wrt the full product back to the coefficients."""
    grad = np.zeros(coeffs_shape)
    n = len(cache)
    d = coeffs_shape[-1]
    if n == 0:
        return grad
    # suffix[i] = E_{n-1} ... E_{i+1}, prefix accumulated on the fly
    suffix = [np.eye(d)]
    for _, _, _, _, fac in reversed(cache[1:]):
        suffix.append(suffix[-1] @ fac)
    suffix.reverse()
    prefix = np.eye(d)
    for i, (axis, h, phi, gen, fac) in enumerate(cache):
        grad_fac = suffix[i].T @ grad_p @ prefix.T
        # adjoint of expm: L(A, .)^T = L(A^T, .)
        grad_gen = expm_frechet(gen.T, grad_fac, compute_expm=False)
        grad_omega = -h * grad_gen
        grad[axis] += np.einsum("m,ij->mij", phi, grad_omega)
        prefix = fac @ prefix
    return grad


def _nearest_index(samples, x):
    return int(np.argmin(np.sum((samples - x) ** 2, axis=1)))


def _local_snap(data, candidate, x_obs, observed, neighbors=10):
    """Nearest-sample projection refined on a local patch.

    The transported candidate picks the nearest training sample; a plane
    is fit to that sample's neighborhood by least squares, and the patch
    coordinates are solved from the observed rows alone, so reliable
    coordinates pin the answer while the candidate only selects where on
    the manifold to look.
    """
    anchor = data.samples[_nearest_index(data.samples, candidate)]
    k = min(neighbors, len(data.samples))
    idx = np.argsort(np.sum((data.samples - anchor) ** 2, axis=1))[:k]
    patch = data.samples[idx]
    center = patch.mean(axis=0)
    u_svd = np.linalg.svd(patch - center, full_matrices=False)[2]
    basis = u_svd[:data.manifold_dim].T
    t = np.linalg.lstsq(basis[observed, :],
                        x_obs[observed] - center[observed], rcond=None)[0]
    return center + basis @ t


def _chart_bounds(data, mask, pad=0.05):
    cols = data.samples[:, mask.missing_axes]
    lo = cols.min(axis=0)
    hi = cols.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    return lo - pad * span, hi + pad * span


def fit_connection(data, mask, lam, iters, seed, pieces_per_axis=2,
                   substeps=2, lattice_res=7):
    """Fit the polynomial field by backtracking gradient descent.

    Each training sample is mean-filled on its missing coordinates,
    transported along a fixed staircase to its true leaf position, and
    compared against the original. The optimizer runs on the transport
    error plus lam times the lattice curvature; the nearest-neighbor
    manifold projection enters the reported reconstruction loss but is
    held out of the gradient. Coefficients start at zero (flat field), so
    the loss trace is monotone from the flat baseline by construction.
    """
    if lam < 0.0:
        raise InvalidArgumentError("lambda must be >= 0")
    if iters < 1:
        raise InvalidArgumentError("iters must be >= 1")
    if len(mask.bits) != data.dim:
        raise InvalidArgumentError("mask length must match data dimension")
    missing = mask.missing_axes
    m = len(missing)
    d = data.dim
    exps = monomial_exponents(m)
    bounds = _chart_bounds(data, mask)
    mean_fill = data.samples[:, missing].mean(axis=0)

    rng = np.random.default_rng(seed)
    plans = []
    for x_true in data.samples:
        x_in = x_true.copy()
        x_in[missing] = mean_fill
        delta = x_true[missing] - mean_fill
        pieces = _staircase_pieces(delta, rng, pieces_per_axis)
        plans.append((x_in, x_true, pieces))

    coeffs = np.zeros((m, len(exps), d, d))

    def objective(c, want_grad=True):
        fid = 0.0
        grad = np.zeros_like(c) if want_grad else None
        for x_in, x_true, pieces in plans:
            p, cache = _transport(c, exps, mean_fill, pieces, substeps)
            r = p @ x_in - x_true
            fid += float(r @ r)
            if want_grad:
                grad += _transport_gradient(cache, 2.0 * np.outer(r, x_in),
                                            c.shape)
        if lam > 0.0:
            cur, cur_grad = curvature_penalty(c, bounds, lattice_res)
            fid += lam * cur
            if want_grad:
                grad += lam * cur_grad
        return fid, grad

    loss, grad = objective(coeffs)
    initial = loss
    trace = [loss]
    step = 1e-2
    for _ in range(iters):
        accepted = False
        for _ in range(30):
            cand = coeffs - step * grad
            # loss only: an overlong trial step can overflow the transport,
            # and a non-finite loss must reject the step, not crash the fit
            with np.errstate(over="ignore", invalid="ignore"):
                cand_loss, _ = objective(cand, want_grad=False)
            if cand_loss < loss:
                coeffs, loss = cand, cand_loss
                _, grad = objective(coeffs)
                step *= 1.3
                accepted = True
                break
            step *= 0.5
        trace.append(loss)
        if loss > 1e6 * max(initial, 1e-30):
            raise FitDivergedError(
                f"loss {loss:.3e} exceeds 1e6 x initial {initial:.3e}")
        if not accepted:
            break

    # reported reconstruction loss runs through the manifold projection
    projected = 0.0
    for x_in, x_true, pieces in plans:
        p, _ = _transport(coeffs, exps, mean_fill, pieces, substeps)
        snapped = data.samples[_nearest_index(data.samples, p @ x_in)]
        projected += float(np.sum((snapped - x_true) ** 2))

    report = {"loss_trace": trace, "projected_loss": projected,
              "iterations": len(trace) - 1, "seed": seed}
    return LearnedConnection(coeffs, lam, report, mask, bounds)


def impute(conn, data, x_obs, paths=8, seed=0, pieces_per_axis=3,
           substeps=2, snap_neighbors=10):
    """Transport one observed point along random staircases and project.

    Starts from the dataset's mean fill of the missing coordinates, aims
    at the mean of the nearest neighbors in observed coordinates, and
    returns one candidate per path. Observed coordinates are re-imposed
    bitwise after the manifold snap.
    """
    if paths < 1:
        raise InvalidArgumentError("paths must be >= 1")
    if len(data.samples) == 0:
        raise InvalidArgumentError("dataset must be nonempty")
    x_obs = np.asarray(x_obs, dtype=np.float64)
    mask = conn.mask
    if len(x_obs) != len(mask.bits):
        raise InvalidArgumentError("x_obs length must match the mask")
    missing = mask.missing_axes
    observed = mask.observed_axes
    exps = monomial_exponents(conn.chart_dim)

    mean_fill = data.samples[:, missing].mean(axis=0)
    obs_dist = np.sum(
        (data.samples[:, observed] - x_obs[observed]) ** 2, axis=1)
    k = min(snap_neighbors, len(data.samples))
    target = data.samples[np.argsort(obs_dist)[:k]][:, missing].mean(axis=0)

    x_in = x_obs.copy()
    x_in[missing] = mean_fill
    delta = target - mean_fill

    rng = np.random.default_rng(seed)
    outputs = []
    for _ in range(paths):
        pieces = _staircase_pieces(delta, rng, pieces_per_axis)
        p, _ = _transport(conn.coeffs, exps, mean_fill, pieces, substeps)
        moved = p @ x_in
        snapped = _local_snap(data, moved, x_obs, observed, snap_neighbors)
        out = snapped.copy()
        out[observed] = x_obs[observed]
        outputs.append(out)
    return outputs


def diversity_report(outputs):
    """Mean imputation and RMS pairwise spread.

    Imputations agree bitwise on observed coordinates, so the full-vector
    pairwise distance equals the missing-coordinate distance.
    """
    stack = np.asarray(outputs, dtype=np.float64)
    if stack.ndim != 2 or len(stack) < 1:
        raise InvalidArgumentError("need at least one output vector")
    mean = stack.mean(axis=0)
    n = len(stack)
    if n == 1:
        return mean, 0.0
    total = 0.0
    count = 0
    for i in range(n):
        diffs = stack[i + 1:] - stack[i]
        total += float(np.sum(diffs * diffs))
        count += len(diffs)
    return mean, float(np.sqrt(total / count))
