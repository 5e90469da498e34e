"""Experiment runner: one JSON config in, one canonical report out.

Each subcommand binds a module pipeline to a seeded, fully echoed
configuration so that (config bytes) -> (report bytes) is a pure
function. Reports land atomically as canonical JSON plus a CSV of the
numeric series.
"""

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from . import __version__
from .connection import AffineField, Chart, ConnectionField, build_field, \
    holonomy_loop, random_polynomial_coeffs, stokes_residual
from .errors import ConfigError, FolirecError
from .imputer import Mask, curvature_norm, diversity_report, fit_connection, \
    impute, make_dataset
from .reconstructor import build_frame, find_initial_point, integrate_flows, \
    involutivity_defect
from .scene import DualityMap, ProjectionPair, ProjectionSpec, \
    generate_object, hausdorff_distance, plane_normal, radon_transform
from .star_algebra import SectionSample, StarContext, associator, \
    criterion_verdict
from .toric_symmetry import EquivariantProblem, discretize_group, \
    invariance_defect, solve_equivariant

SUBCOMMANDS = ("recon", "holonomy", "algebra-check", "toric", "impute",
               "radon")


@dataclass
class ExperimentConfig:
    subcommand: str
    seed: int
    params: dict
    out_path: str = ""


@dataclass
class Report:
    config_echo: dict
    metrics: dict
    series: dict
    verdicts: dict
    tool_version: str = __version__

    def to_json(self):
        return {"config_echo": _plain(self.config_echo),
                "metrics": _plain(self.metrics),
                "series": _plain(self.series),
                "verdicts": _plain(self.verdicts),
                "tool_version": self.tool_version}


def _plain(value):
    """Native Python scalars/containers only, so json emits canonically."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    return value


# ---------------------------------------------------------------- validation

_MISSING = object()


class _Checker:
    """Collects every validation error instead of stopping at the first."""

    def __init__(self, params):
        self.params = dict(params)
        self.errors = []
        self.clean = {}

    def take(self, key, kind, default=_MISSING, minimum=None, positive=False,
             choices=None):
        path = f"params.{key}"
        if key not in self.params:
            if default is _MISSING:
                self.errors.append(f"{path}: required key missing")
                return None
            self.clean[key] = default
            return default
        value = self.params.pop(key)
        if kind == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                self.errors.append(f"{path}: expected integer, got {value!r}")
                return None
        elif kind == "number":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                self.errors.append(f"{path}: expected number, got {value!r}")
                return None
            value = float(value)
        elif kind == "text":
            if not isinstance(value, str):
                self.errors.append(f"{path}: expected text, got {value!r}")
                return None
        if minimum is not None and value < minimum:
            self.errors.append(f"{path}: must be >= {minimum}, got {value!r}")
            return None
        if positive and value <= 0:
            self.errors.append(f"{path}: must be > 0, got {value!r}")
            return None
        if choices is not None and value not in choices:
            self.errors.append(
                f"{path}: must be one of {sorted(choices)}, got {value!r}")
            return None
        self.clean[key] = value
        return value

    def finish(self):
        for key in sorted(self.params):
            self.errors.append(f"params.{key}: unknown key")


def _schema_recon(c):
    c.take("resolution", "int", minimum=2)
    c.take("steps", "int", minimum=1)
    c.take("substeps", "int", default=2, minimum=1)
    c.take("multistart", "int", default=12, minimum=1)
    c.take("scale", "number", default=0.35, minimum=0.0)
    c.take("box_size", "number", default=0.1, minimum=0.0)


def _schema_holonomy(c):
    c.take("kind", "text", default="abelian", choices={"abelian", "stokes"})
    c.take("resolution", "int", minimum=2)
    c.take("steps_per_unit", "int", minimum=1)
    c.take("coupling", "number", default=0.7)


def _schema_algebra(c):
    c.take("resolution", "int", minimum=2)
    c.take("triples", "int", minimum=1)
    c.take("defect", "number", default=0.0, minimum=0.0)
    c.take("steps_per_unit", "int", default=16, minimum=1)
    c.take("tolerance", "number", default=1e-6, minimum=0.0)


def _schema_toric(c):
    c.take("kind", "text",
           choices={"cyclic", "torus_s1", "product"})
    c.take("n", "int", minimum=1)
    c.take("lambda", "number", minimum=0.0)
    c.take("noise", "number", default=0.0, minimum=0.0)


def _schema_impute(c):
    c.take("dataset", "text", choices={"plane", "curved_surface"})
    c.take("n", "int", minimum=10)
    c.take("d", "int", minimum=3)
    c.take("noise", "number", minimum=0.0)
    c.take("mask", "text")
    c.take("lambda", "number", minimum=0.0)
    c.take("paths", "int", minimum=1)
    c.take("iters", "int", default=25, minimum=1)


def _schema_radon(c):
    c.take("object", "text",
           choices={"random_cloud", "helix", "symmetric_capsid"})
    c.take("n", "int", minimum=1)
    c.take("slab_width", "number", positive=True)
    c.take("angles", "int", default=4, minimum=1)


_SCHEMAS = {"recon": _schema_recon, "holonomy": _schema_holonomy,
            "algebra-check": _schema_algebra, "toric": _schema_toric,
            "impute": _schema_impute, "radon": _schema_radon}


def validate_config(raw):
    """Typed config from parsed JSON; raises ConfigError listing every
    problem found, each prefixed with its path into the config."""
    if isinstance(raw, str):
        raw = json.loads(raw)
    errors = []
    if not isinstance(raw, dict):
        raise ConfigError(["config: expected a JSON object"])
    sub = raw.get("subcommand")
    if sub not in SUBCOMMANDS:
        errors.append(f"subcommand: must be one of {list(SUBCOMMANDS)}, "
                      f"got {sub!r}")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        errors.append(f"seed: expected integer, got {seed!r}")
        seed = 0
    out_path = raw.get("out_path", "")
    if not isinstance(out_path, str):
        errors.append(f"out_path: expected text, got {out_path!r}")
        out_path = ""
    params = raw.get("params", {})
    if not isinstance(params, dict):
        errors.append(f"params: expected an object, got {params!r}")
        params = {}
    unknown = set(raw) - {"subcommand", "seed", "params", "out_path"}
    for key in sorted(unknown):
        errors.append(f"{key}: unknown key")
    if sub in _SCHEMAS:
        checker = _Checker(params)
        _SCHEMAS[sub](checker)
        checker.finish()
        errors.extend(checker.errors)
        params = checker.clean
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(sub, seed, params, out_path)


# ----------------------------------------------------------------- pipelines

def _planted_scene(seed, scale):
    """Seeded affine scene: two orthonormal projections of Gp + g, with a
    duality map consistent with the planted point."""
    rng = np.random.default_rng(seed)
    g_mat = scale * rng.standard_normal((3, 3)) + np.eye(3)
    g_off = scale * rng.standard_normal(3)
    p1 = ProjectionSpec(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
    p2 = ProjectionSpec(np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
    pstar = rng.uniform(0.2, 0.8, size=3)
    d_mat = rng.standard_normal((2, 2)) + 2.0 * np.eye(2)
    z1 = p1.apply(pstar)[0]
    z2 = p2.apply(pstar)[0]
    duality = DualityMap(d_mat, z2 - d_mat @ z1)
    pair = ProjectionPair(p1, p2, duality)

    def mu_field(p):
        q = g_mat @ np.asarray(p, dtype=np.float64) + g_off
        return p1.apply(q)[0], p2.apply(q)[0]

    return pair, mu_field, g_mat, g_off, pstar


def _affine_truth_lattice(frame_fields, p0, param_box, steps):
    """Closed-form flow lattice for affine frame fields v(p) = C p + d.

    frame_fields: list of (C, d). Composition order matches
    integrate_flows: field 1 innermost along axis 1 of the lattice.
    """
    mats = []
    for c_mat, d_vec in frame_fields:
        aug = np.zeros((4, 4))
        aug[:3, :3] = c_mat
        aug[:3, 3] = d_vec
        mats.append(aug)
    grids = [np.linspace(float(a), float(b), steps + 1) for a, b in param_box]
    h0 = np.append(np.asarray(p0, dtype=np.float64), 1.0)
    pts1 = np.stack([expm(mats[0] * t) @ h0 for t in grids[0]])
    pts2 = np.stack([[expm(mats[1] * t) @ q for q in pts1]
                     for t in grids[1]])
    pts3 = np.stack([[expm(mats[2] * t) @ q for q in pts2.reshape(-1, 4)]
                     for t in grids[2]])
    return pts3.reshape(-1, 4)[:, :3]


def _run_recon(seed, p):
    pair, mu_field, g_mat, g_off, pstar = _planted_scene(seed, p["scale"])
    z1 = pair.p1.apply(pstar)[0]
    c1, c2 = mu_field(pstar)
    root, cert = find_initial_point(pair, z1, c1, c2, mu_field,
                                    multistart=p["multistart"], seed=seed)
    chart = Chart((-2.0, -2.0, -2.0), (3.0, 3.0, 3.0), p["resolution"])
    frame = build_frame(pair, mu_field, chart=chart)
    box = ((0.0, p["box_size"]),) * 3
    flow = integrate_flows(frame, root, box, p["steps"],
                           substeps=p["substeps"])

    # planted scene is affine, so the exact flow lattice is closed-form
    a_pinv = np.linalg.pinv(pair.stacked_matrix())
    stack_m = np.vstack([pair.p1.matrix, pair.p2.matrix])
    stack_o = np.concatenate([pair.p1.offset, pair.p2.offset])
    anchor = np.array(chart.mins) - 0.5 * (np.array(chart.maxs)
                                           - np.array(chart.mins))
    u = stack_m @ (g_mat @ anchor + g_off) + stack_o
    thetas = (0.0, 2.0 * np.pi / 3.0, 4.0 * np.pi / 3.0)
    fields = []
    for theta in thetas:
        c, s = np.cos(theta), np.sin(theta)
        rot = np.zeros((4, 4))
        rot[:2, :2] = [[c, -s], [s, c]]
        rot[2:, 2:] = [[c, -s], [s, c]]
        c_mat = a_pinv @ rot @ stack_m @ g_mat
        d_vec = a_pinv @ (u + rot @ (stack_m @ g_off + stack_o - u))
        fields.append((c_mat, d_vec))
    truth = _affine_truth_lattice(fields, root, box, p["steps"])

    metrics = {
        "root_error": float(np.linalg.norm(root - pstar)),
        "root_residual": float(cert.residuals[0]),
        "frame_condition": frame.condition,
        "involutivity_defect": involutivity_defect(frame),
        "hausdorff_error": hausdorff_distance(flow.object.points, truth),
        "kept_points": flow.kept,
        "total_points": flow.total,
    }
    verdicts = {"certificate_ok": cert.status == "ok",
                "truncated": flow.truncated}
    return metrics, {}, verdicts


def _run_holonomy(seed, p):
    res = p["resolution"]
    if p["kind"] == "abelian":
        chart = Chart((-0.1, -0.1), (1.1, 1.1), res)
        amp, alpha, beta = 1e-3, 1.3, 2.1
        coupling = p["coupling"]
        nodes = chart.node_grid()
        x, y = nodes[..., 0], nodes[..., 1]
        phase = alpha * x + beta * y
        omega = np.zeros((2,) + x.shape + (1, 1))
        omega[0, ..., 0, 0] = amp * alpha * np.cos(phase)
        omega[1, ..., 0, 0] = coupling * x + amp * beta * np.cos(phase)
        fld = ConnectionField(chart, 1, omega)
        predicted = float(np.exp(-coupling))
        ladder, errors = [], []
        spu = 8
        while spu <= p["steps_per_unit"]:
            hol = holonomy_loop(fld, (0.0, 0.0), sides=(1.0, 1.0),
                                steps_per_unit=spu)
            ladder.append(spu)
            errors.append(abs(float(hol[0, 0]) - predicted))
            spu *= 2
        ratios = [errors[i] / errors[i + 1] for i in range(len(errors) - 1)
                  if errors[i + 1] > 0.0]
        metrics = {"predicted": predicted,
                   "holonomy_error": errors[-1],
                   "min_halving_ratio": min(ratios) if ratios else 0.0,
                   "stokes_residual": stokes_residual(
                       fld, (0.0, 0.0), sides=(1.0, 1.0),
                       steps_per_unit=ladder[-1])}
        series = {"steps_per_unit": ladder, "holonomy_error": errors}
        verdicts = {"halving": all(r >= 3.5 for r in ratios)}
        return metrics, series, verdicts

    chart = Chart((0.0, 0.0), (1.5, 1.5), res)
    omega = np.zeros((2,) + (res, res) + (2, 2))
    omega[0, ..., 0, 0] = 0.5
    omega[0, ..., 1, 1] = -0.5
    omega[1, ..., 0, 1] = 0.5
    fld = ConnectionField(chart, 2, omega)
    corner = (0.1, 0.1)
    spu = p["steps_per_unit"]
    r_full = stokes_residual(fld, corner, sides=(0.6, 1.0),
                             steps_per_unit=spu)
    r_half = stokes_residual(fld, corner, sides=(0.3, 1.0),
                             steps_per_unit=spu)
    ratio = r_half / r_full
    metrics = {"residual_full": r_full, "residual_half": r_half,
               "quarter_ratio": ratio}
    verdicts = {"quarter_scaling": 0.15 <= ratio <= 0.35}
    return metrics, {}, verdicts


def _run_algebra(seed, p):
    res = p["resolution"]
    chart = Chart((0.0, 0.0), (1.0, 1.0), res)
    coeffs = random_polynomial_coeffs(2, 2, seed=seed, scale=0.4)
    coeffs[..., 0, 1] = 0.0
    coeffs[..., 1, 0] = 0.0
    f1, f2 = build_field(chart, 2, "dual_pair", ("polynomial", coeffs))
    if p["defect"] > 0.0:
        om2 = f2.omega.copy()
        om2[1, ..., 0, 1] += p["defect"]
        f2 = ConnectionField(chart, 2, om2)
    ctx = StarContext(f1, f2, base_point=(0.2, 0.3),
                      steps_per_unit=p["steps_per_unit"])
    rng = np.random.default_rng(seed)
    norms = []
    for _ in range(p["triples"]):
        sections = [SectionSample(rng.uniform(0.05, 0.95, size=2),
                                  rng.standard_normal((2, 2)))
                    for _ in range(3)]
        target = rng.uniform(0.05, 0.95, size=2)
        norms.append(associator(ctx, *sections, target=target)[1])
    flat = AffineField(chart, np.zeros((res, res, 2, 2, 2)))
    verdict = criterion_verdict(ctx, flat, flat, p["tolerance"])
    metrics = {"max_associator": max(norms),
               "median_associator": float(np.median(norms)),
               "duality_defect": verdict.curvature_duality_defect}
    series = {"associator_norm": norms}
    verdicts = {"associative": verdict.associative}
    return metrics, series, verdicts


def _run_toric(seed, p):
    group = discretize_group(p["kind"], p["n"])
    rng = np.random.default_rng(seed)
    v_true = rng.uniform(-1.0, 1.0, size=3)
    m1 = ProjectionSpec(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
    m2 = ProjectionSpec(np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
    images = [m.apply(v_true)[0] + p["noise"] * rng.standard_normal(2)
              for m in (m1, m2)]
    problem = EquivariantProblem([m1, m2], images, p["lambda"], group)
    v, fidelity, reg = solve_equivariant(problem)
    metrics = {"closure_defect": group.closure_defect,
               "fidelity": fidelity, "regularizer": reg,
               "invariance_defect": invariance_defect(group, v),
               "solution_norm": float(np.linalg.norm(v)),
               "recovery_error": float(np.linalg.norm(v - v_true))}
    series = {"solution": [float(x) for x in v]}
    verdicts = {"closed": group.closure_defect == 0.0}
    return metrics, series, verdicts


def _run_impute(seed, p):
    data = make_dataset(p["dataset"], p["n"], p["d"], p["noise"], seed)
    mask = Mask.from_bitstring(p["mask"])
    conn = fit_connection(data, mask, p["lambda"], p["iters"], seed)
    outputs = impute(conn, data, data.samples[0], paths=p["paths"],
                     seed=seed)
    mean, spread = diversity_report(outputs)
    trace = conn.fit_report["loss_trace"]
    metrics = {"spread": spread,
               "curvature_norm": curvature_norm(conn),
               "initial_loss": trace[0], "final_loss": trace[-1],
               "projected_loss": conn.fit_report["projected_loss"]}
    series = {"loss_trace": list(trace)}
    for j in range(p["d"]):
        series[f"imputation_{j}"] = [float(o[j]) for o in outputs]
    verdicts = {"loss_monotone": all(b <= a + 1e-12
                                     for a, b in zip(trace, trace[1:]))}
    return metrics, series, verdicts


def _run_radon(seed, p):
    obj = generate_object(p["object"], p["n"], seed)
    angles = np.linspace(0.0, np.pi / 2.0, p["angles"])
    width = p["slab_width"]
    spans = [obj.points @ plane_normal(a) for a in angles]
    lo = min(s.min() for s in spans)
    hi = max(s.max() for s in spans)
    offsets = lo + width * np.arange(int(np.ceil((hi - lo) / width)) + 1)
    samples = radon_transform(obj, angles, offsets, width)
    total = float(obj.weights.sum())
    per_angle = {}
    for s in samples:
        per_angle[s.angle] = per_angle.get(s.angle, 0.0) + s.value
    metrics = {"total_mass": total, "n_samples": len(samples),
               "max_bin": max(s.value for s in samples)}
    series = {"angle": [s.angle for s in samples],
              "offset": [s.offset for s in samples],
              "value": [s.value for s in samples]}
    verdicts = {"mass_conserved": all(abs(v - total) < 1e-9
                                      for v in per_angle.values())}
    return metrics, series, verdicts


_RUNNERS = {"recon": _run_recon, "holonomy": _run_holonomy,
            "algebra-check": _run_algebra, "toric": _run_toric,
            "impute": _run_impute, "radon": _run_radon}


def run_experiment(config):
    """Dispatch to the subcommand pipeline; module failures come back as a
    partial report with verdicts.completed false, never an exception."""
    echo = {"subcommand": config.subcommand, "seed": config.seed,
            "params": dict(config.params), "out_path": config.out_path}
    try:
        metrics, series, verdicts = _RUNNERS[config.subcommand](
            config.seed, config.params)
        verdicts["completed"] = True
        return Report(echo, metrics, series, verdicts)
    except FolirecError as exc:
        verdicts = {"completed": False,
                    f"error_{type(exc).__name__}": False}
        return Report(echo, {}, {}, verdicts)


def canonical_json(data):
    """Sorted keys, compact separators, shortest round-trip floats."""
    return json.dumps(_plain(data), sort_keys=True,
                      separators=(",", ":")) + "\n"


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".folirec-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _series_csv(series):
    names = sorted(series)
    columns = [series[n] for n in names]
    depth = max((len(c) for c in columns), default=0)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names)
    for row in range(depth):
        writer.writerow([repr(c[row]) if row < len(c) else ""
                         for c in columns])
    return buf.getvalue()


def emit_report(report, path, formats=("json", "csv")):
    """Write the canonical JSON report and/or the series CSV atomically."""
    if "json" in formats:
        _atomic_write(path, canonical_json(report.to_json()))
    if "csv" in formats:
        csv_path = os.path.splitext(path)[0] + ".csv"
        _atomic_write(csv_path, _series_csv(_plain(report.series)))


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="folirec",
        description="Foliated-scene experiment pipelines.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--out", default=None)
    args = parser.parse_args(argv)

    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if isinstance(raw, dict) and "subcommand" not in raw:
        raw["subcommand"] = args.subcommand
    try:
        config = validate_config(raw)
    except ConfigError as exc:
        for line in exc.errors:
            print(f"config error: {line}", file=sys.stderr)
        return 2
    if config.subcommand != args.subcommand:
        print(f"config error: subcommand: config says "
              f"{config.subcommand!r}, command line says "
              f"{args.subcommand!r}", file=sys.stderr)
        return 2
    if args.out is not None:
        config.out_path = args.out

    report = run_experiment(config)
    if config.out_path:
        emit_report(report, config.out_path)
    sys.stdout.write(canonical_json(report.to_json()))
    return 0 if report.verdicts.get("completed") else 3


if __name__ == "__main__":
    sys.exit(main())
