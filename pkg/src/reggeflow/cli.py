"""Command-line entry point: ``reggeflow <command> ...``.

Commands
--------
curvature MESH --out DIR       edges.csv, duals.csv, vertices.csv, summary.json
flow MESH --out DIR [flags]    trajectory.csv, summary.csv, summary.json
stability MESH --out DIR       spectrum.csv, stability.json
models generate LATTICE --out FILE
models closed-form MODEL --out FILE
reproduce {s3_table,cylinder} --out DIR

Exit codes: 0 success / reached_t_end, 1 I/O error or failed reproduction
check, 2 bad input, 3 edge_collapse, 4 nonrealizable, 5 matrix_singular,
6 step_too_small.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import models
from .complex import load_mesh, mesh_to_dict, validate_metric
from .curvature import curvature_field
from .errors import (
    MatrixSingular,
    MeshFormatError,
    NonRealizable,
    ReggeFlowError,
    StepTooSmall,
)
from .flow import FlowConfig, Termination, jacobian_spectrum, run_flow
from .geometry import dual_geometry

log = logging.getLogger("reggeflow")

EXIT_OK = 0
EXIT_IO = 1
EXIT_CHECK_FAILED = 1
EXIT_BAD_INPUT = 2
TERMINATION_EXIT = {
    Termination.REACHED_T_END: 0,
    Termination.EDGE_COLLAPSE: 3,
    Termination.NONREALIZABLE: 4,
    Termination.MATRIX_SINGULAR: 5,
    Termination.STEP_TOO_SMALL: 6,
}

# tolerances of the reproduction checks
EPS_TARGETS = {3: 2.59031, 4: 1.35935, 5: 0.12839}
EPS_TOL = 1e-4
DEVIATION_TARGETS = {3: 41.0, 4: 20.5, 5: 2.02}
DEVIATION_TOL = 0.1  # percentage points
SLOPE_TARGET, SLOPE_TOL = 1.88, 0.02
CYL_S_SQ_RATE = -16.0 * math.pi / (5.0 * math.sqrt(3.0))
CYL_R_SQ_RATE = -2.0
CYL_RATE_TOL = 1e-10
CYL_CONSERVATION_TOL = 1e-12


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def fmt(x) -> str:
    """17 significant digits: enough to round-trip any double."""
    return f"{float(x):.17g}"


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


# -- configuration ---------------------------------------------------------------------

FLOW_KEYS = tuple(f.name for f in dataclasses.fields(FlowConfig))


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Validated parameters of one command invocation."""

    command: str
    mesh_path: Path | None = None
    out: Path | None = None
    flow: FlowConfig | None = None
    threads: int = 1


def resolve_threads(value) -> int:
    raw = value if value is not None else os.environ.get("REGGE_FLOW_THREADS", "1")
    try:
        n = int(raw)
    except (TypeError, ValueError):
        raise CliError(f"threads must be a positive integer, got {raw!r}", EXIT_BAD_INPUT) from None
    if n < 1:
        raise CliError(f"threads must be a positive integer, got {raw!r}", EXIT_BAD_INPUT)
    return n


def _check_mesh_path(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"mesh file not found: {p}", EXIT_IO)
    if not os.access(p, os.R_OK):
        raise CliError(f"mesh file not readable: {p}", EXIT_IO)
    return p


def _prepare_out_dir(path: str) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {p}: {exc}", EXIT_IO) from exc
    if not os.access(p, os.W_OK):
        raise CliError(f"output directory not writable: {p}", EXIT_IO)
    return p


def flow_config_from_args(args) -> FlowConfig:
    values = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise CliError(f"cannot read config {args.config}: {exc}", EXIT_IO) from exc
        except json.JSONDecodeError as exc:
            raise CliError(
                f"{args.config}: line {exc.lineno} column {exc.colno}: {exc.msg}", EXIT_BAD_INPUT
            ) from exc
        if not isinstance(data, dict):
            raise CliError("flow config must be a JSON object", EXIT_BAD_INPUT)
        unknown = sorted(set(data) - set(FLOW_KEYS))
        if unknown:
            raise CliError(f"unknown flow config keys: {unknown}", EXIT_BAD_INPUT)
        values.update(data)
    flag_map = {
        "dt": "dt_initial",
        "dt_min": "dt_min",
        "dt_max": "dt_max",
        "t_end": "t_end",
        "integrator": "integrator",
        "rel_tol": "rel_tol",
        "abs_tol": "abs_tol",
        "stop_min_edge": "stop_min_edge_fraction",
        "record_every": "record_every",
        "fd_step": "fd_step",
        "max_steps": "max_steps",
        "derivative": "derivative",
    }
    for flag, key in flag_map.items():
        v = getattr(args, flag)
        if v is not None:
            values[key] = v
    try:
        return FlowConfig(**values)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid flow configuration: {exc}", EXIT_BAD_INPUT) from exc


def build_run_config(args) -> RunConfig:
    threads = resolve_threads(getattr(args, "threads", None))
    mesh = _check_mesh_path(args.mesh) if getattr(args, "mesh", None) else None
    flow = flow_config_from_args(args) if args.command == "flow" else None
    out = _prepare_out_dir(args.out) if args.command in ("curvature", "flow", "stability", "reproduce") else None
    return RunConfig(command=args.command, mesh_path=mesh, out=out, flow=flow, threads=threads)


# -- commands ---------------------------------------------------------------------------

def _load(cfg: RunConfig):
    top, metric = load_mesh(cfg.mesh_path)
    validate_metric(top, metric)
    return top, metric


def cmd_curvature(cfg: RunConfig) -> int:
    top, metric = _load(cfg)
    dual = dual_geometry(top, metric)
    field = curvature_field(top, metric, dual)
    lengths = metric.lengths
    write_csv(
        cfg.out / "edges.csv",
        ["edge_id", "v0", "v1", "length", "deficit", "dual_area", "rc_edge"],
        (
            [i, int(u), int(v), lengths[i], field.deficit[i], field.dual_area[i], field.rc_edge[i]]
            for i, (u, v) in enumerate(top.edges)
        ),
    )
    write_csv(
        cfg.out / "duals.csv",
        ["triangle_id", "v0", "v1", "v2", "dual_length", "rc_dual"],
        (
            [i, *map(int, tri), dual.dual_edge_len[i], field.rc_dual[i]]
            for i, tri in enumerate(top.triangles)
        ),
    )
    write_csv(
        cfg.out / "vertices.csv",
        ["vertex", "scalar_curvature"],
        ([v, field.scalar_vertex[v]] for v in range(top.vertex_count)),
    )
    n_tri = len(dual.triangle_well_centered)
    write_json(
        cfg.out / "summary.json",
        {
            "n_vertices": int(top.vertex_count),
            "n_edges": int(top.n_edges),
            "n_triangles": int(top.n_triangles),
            "n_tetrahedra": int(len(top.tetrahedra)),
            "regge_action": field.regge_action,
            "total_volume": float(dual.tet_volume.sum()),
            "well_centered_fraction": float(
                (dual.tet_well_centered.sum() + dual.triangle_well_centered.sum())
                / (len(dual.tet_well_centered) + n_tri)
            ),
            "well_centered": bool(dual.well_centered),
        },
    )
    return EXIT_OK


def cmd_flow(cfg: RunConfig) -> int:
    top, metric = _load(cfg)
    traj = run_flow(top, metric, cfg.flow)
    with open(cfg.out / "trajectory.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "edge_id", "length", "deficit", "rc_edge"])
        for snap in traj.snapshots:
            t = fmt(snap.t)
            for i, (ell, eps, rc) in enumerate(zip(snap.metric.lengths, snap.deficit, snap.rc_edge)):
                w.writerow([t, i, fmt(ell), fmt(eps), fmt(rc)])
    write_csv(
        cfg.out / "summary.csv",
        ["t", "min_len", "max_len", "action", "termination", "cv"],
        (
            [s.t, s.min_len, s.max_len, s.regge_action,
             traj.termination.value if k == len(traj.snapshots) - 1 else "", s.length_cv]
            for k, s in enumerate(traj.snapshots)
        ),
    )
    write_json(
        cfg.out / "summary.json",
        {
            "termination": traj.termination.value,
            "message": traj.message,
            "steps_accepted": traj.steps_accepted,
            "t_final": traj.final.t,
            "config": dataclasses.asdict(cfg.flow),
        },
    )
    log.info("flow: %s after %d steps", traj.termination.value, traj.steps_accepted)
    return TERMINATION_EXIT[traj.termination]


def cmd_stability(cfg: RunConfig, rel_step: float, derivative: str = "central") -> int:
    top, metric = _load(cfg)
    report = jacobian_spectrum(top, metric, rel_step=rel_step, derivative=derivative)
    write_csv(
        cfg.out / "spectrum.csv",
        ["index", "real", "imag"],
        ([i, ev.real, ev.imag] for i, ev in enumerate(report.eigenvalues)),
    )
    write_json(
        cfg.out / "stability.json",
        {
            "n_eigenvalues": int(len(report.eigenvalues)),
            "n_positive_real": report.n_positive,
            "max_real": report.max_real,
            "field_norm": report.field_norm,
        },
    )
    print(f"{len(report.eigenvalues)} eigenvalues, {report.n_positive} with positive real part")
    return EXIT_OK


def reproduce_s3_table(out: Path) -> bool:
    from .curvature import deficit_angles

    table = models.pcell_deviation_table()
    checks = []
    for row in table.rows:
        top, metric = models.generate_pcell_lattice(row.p)
        eps = deficit_angles(top, metric)
        err = float(np.max(np.abs(eps - EPS_TARGETS[row.p])))
        checks.append({"check": f"deficit {row.model}", "value": float(eps.mean()),
                       "target": EPS_TARGETS[row.p], "tolerance": EPS_TOL, "pass": err <= EPS_TOL})
        dev_err = abs(row.percent_deviation - DEVIATION_TARGETS[row.p])
        checks.append({"check": f"deviation {row.model} (%)", "value": row.percent_deviation,
                       "target": DEVIATION_TARGETS[row.p], "tolerance": DEVIATION_TOL,
                       "pass": dev_err <= DEVIATION_TOL})
    checks.append({"check": "log-log slope 16-cell -> 600-cell", "value": table.slope,
                   "target": SLOPE_TARGET, "tolerance": SLOPE_TOL,
                   "pass": abs(table.slope - SLOPE_TARGET) <= SLOPE_TOL})
    write_csv(
        out / "s3_table.csv",
        ["model", "p", "n_tets", "deficit", "effective_ricci", "percent_deviation", "spacing"],
        ([r.model, r.p, r.n_tets, r.epsilon, r.effective_ricci, r.percent_deviation, r.spacing]
         for r in table.rows),
    )
    (out / "s3_table.md").write_text(table.to_markdown() + "\n", encoding="utf-8")
    write_json(out / "s3_report.json", {
        "slope": table.slope,
        "slope_vs_deficit": table.slope_vs_deficit,
        "deficits_5dp": {r.model: f"{r.epsilon:.5f}" for r in table.rows},
        "checks": checks,
        "pass": all(c["pass"] for c in checks),
    })
    _print_checks(checks)
    return all(c["pass"] for c in checks)


def reproduce_cylinder(out: Path, s0: float = 1.0, a0: float = 1.0) -> bool:
    model = models.CylinderModel(s0, a0)
    rates = models.cylinder_symmetric_rrf(model)
    s_sq_rate = rates.s_sq_rate(s0)
    r_sq_rate = model.radius_factor * s_sq_rate
    conservation = rates.da_dt / a0 + rates.ds_dt / s0
    checks = [
        {"check": "ds^2/dt", "value": s_sq_rate, "target": CYL_S_SQ_RATE,
         "tolerance": CYL_RATE_TOL, "pass": abs(s_sq_rate - CYL_S_SQ_RATE) <= CYL_RATE_TOL},
        {"check": "dr_eff^2/dt", "value": r_sq_rate, "target": CYL_R_SQ_RATE,
         "tolerance": CYL_RATE_TOL, "pass": abs(r_sq_rate - CYL_R_SQ_RATE) <= CYL_RATE_TOL},
        {"check": "a'/a + s'/s", "value": conservation, "target": 0.0,
         "tolerance": CYL_CONSERVATION_TOL, "pass": abs(conservation) <= CYL_CONSERVATION_TOL},
    ]
    ts = np.linspace(0.0, 0.95 * model.extinction_time, 20)
    s_sq, a, r_sq = models.cylinder_closed_form(model, ts)
    write_csv(out / "cylinder.csv", ["t", "s_sq", "a", "r_sq"], zip(ts, s_sq, a, r_sq))
    write_json(out / "cylinder_report.json", {
        "s0": s0, "a0": a0,
        "eps_a": rates.eps_a, "eps_s": rates.eps_s,
        "ds_dt": rates.ds_dt, "da_dt": rates.da_dt,
        "checks": checks,
        "pass": all(c["pass"] for c in checks),
    })
    _print_checks(checks)
    return all(c["pass"] for c in checks)


def _print_checks(checks) -> None:
    for c in checks:
        status = "PASS" if c["pass"] else "FAIL"
        print(f"{status}  {c['check']}: {c['value']:.10g} (target {c['target']:.10g} ± {c['tolerance']:g})")


def cmd_reproduce(cfg: RunConfig, table: str) -> int:
    ok = reproduce_s3_table(cfg.out) if table == "s3_table" else reproduce_cylinder(cfg.out)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _write_out_file(path: str, text: str) -> None:
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {p}: {exc}", EXIT_IO) from exc


def cmd_models_generate(args) -> int:
    lattice = args.lattice
    if lattice == "cylinder":
        lat = models.generate_cylinder_lattice(args.rings, args.s0, args.a0)
        _write_out_file(args.out, json.dumps(lat.to_dict(), indent=1) + "\n")
        return EXIT_OK
    if lattice == "bcc":
        top = (torus := models.bcc_torus(args.n, args.ell)).top
        metric = torus.metric()
    else:
        p = {"5cell": 3, "16cell": 4, "600cell": 5}[lattice]
        top, metric = models.generate_pcell_lattice(p, args.ell)
    if args.perturb:
        metric = models.perturb_metric(metric, args.perturb, args.seed)
    _write_out_file(args.out, json.dumps(mesh_to_dict(top, metric), indent=1) + "\n")
    return EXIT_OK


def cmd_models_closed_form(args) -> int:
    if args.model == "cylinder":
        model = models.CylinderModel(args.s0, args.a0)
        ts = np.linspace(0.0, args.fraction * model.extinction_time, args.samples)
        header, cols = ["t", "s_sq", "a", "r_sq"], (ts, *models.cylinder_closed_form(model, ts))
    else:
        p = {"5cell": 3, "16cell": 4, "600cell": 5}[args.model]
        model = models.PCellModel(p, args.ell)
        ts = np.linspace(0.0, args.fraction * model.extinction_time, args.samples)
        header, cols = ["t", "ell_sq", "a_sq"], (ts, *models.pcell_closed_form(model, ts))
    lines = [",".join(header)] + [",".join(fmt(v) for v in row) for row in zip(*cols)]
    _write_out_file(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------------

def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reggeflow", description="Regge–Ricci flow on simplicial 3-geometries.")
    parser.add_argument("--threads", type=str, default=None,
                        help="worker threads (default: $REGGE_FLOW_THREADS or 1); outputs do not depend on it")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curvature", help="deficit angles and curvatures of a mesh")
    p.add_argument("mesh")
    p.add_argument("--out", required=True)

    p = sub.add_parser("flow", help="integrate the Regge–Ricci flow")
    p.add_argument("mesh")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file with FlowConfig fields; flags override it")
    p.add_argument("--dt", type=float)
    p.add_argument("--dt-min", type=float)
    p.add_argument("--dt-max", type=float)
    p.add_argument("--t-end", type=float)
    p.add_argument("--integrator", choices=("explicit_euler", "rk4", "rk45_adaptive"))
    p.add_argument("--rel-tol", type=float)
    p.add_argument("--abs-tol", type=float)
    p.add_argument("--stop-min-edge", type=float, help="stop when an edge falls below this fraction of its start")
    p.add_argument("--record-every", type=int)
    p.add_argument("--fd-step", type=float)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--derivative", choices=("central", "complex_step"),
                   help="how ∂λ/∂ℓ is computed (default: central differences)")

    p = sub.add_parser("stability", help="eigenvalues of the flow Jacobian")
    p.add_argument("mesh")
    p.add_argument("--out", required=True)
    p.add_argument("--rel-step", type=_positive_float, default=1e-4)
    p.add_argument("--derivative", choices=("central", "complex_step"), default="central")

    p = sub.add_parser("reproduce", help="reproduce the closed-form model results")
    p.add_argument("table", choices=("s3_table", "cylinder"))
    p.add_argument("--out", required=True)

    p = sub.add_parser("models", help="lattice generators and closed-form models")
    msub = p.add_subparsers(dest="models_command", required=True)
    g = msub.add_parser("generate", help="write a lattice as mesh JSON")
    g.add_argument("lattice", choices=("5cell", "16cell", "600cell", "bcc", "cylinder"))
    g.add_argument("--out", required=True)
    g.add_argument("--ell", type=_positive_float, default=1.0, help="edge length (bcc: cube side)")
    g.add_argument("--n", type=int, default=3, help="bcc cells per side")
    g.add_argument("--perturb", type=float, default=0.0, help="relative random length perturbation")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--rings", type=int, default=3)
    g.add_argument("--s0", type=_positive_float, default=1.0)
    g.add_argument("--a0", type=_positive_float, default=1.0)
    c = msub.add_parser("closed-form", help="write a closed-form trajectory as CSV")
    c.add_argument("model", choices=("5cell", "16cell", "600cell", "cylinder"))
    c.add_argument("--out", required=True)
    c.add_argument("--ell", type=_positive_float, default=1.0)
    c.add_argument("--s0", type=_positive_float, default=1.0)
    c.add_argument("--a0", type=_positive_float, default=1.0)
    c.add_argument("--samples", type=int, default=21)
    c.add_argument("--fraction", type=float, default=0.9, help="end time as a fraction of the extinction time")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "models":
            resolve_threads(args.threads)
            if args.models_command == "generate":
                return cmd_models_generate(args)
            return cmd_models_closed_form(args)
        cfg = build_run_config(args)
        log.info("threads=%d (assembly is single-threaded; results do not depend on it)", cfg.threads)
        if args.command == "curvature":
            return cmd_curvature(cfg)
        if args.command == "flow":
            return cmd_flow(cfg)
        if args.command == "stability":
            return cmd_stability(cfg, args.rel_step, args.derivative)
        return cmd_reproduce(cfg, args.table)
    except CliError as exc:
        print(f"reggeflow: error: {exc}", file=sys.stderr)
        return exc.code
    except MeshFormatError as exc:
        print(f"reggeflow: malformed mesh: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except MatrixSingular as exc:
        print(f"reggeflow: matrix singular: {exc}", file=sys.stderr)
        return TERMINATION_EXIT[Termination.MATRIX_SINGULAR]
    except StepTooSmall as exc:
        print(f"reggeflow: step too small: {exc}", file=sys.stderr)
        return TERMINATION_EXIT[Termination.STEP_TOO_SMALL]
    except NonRealizable as exc:
        print(f"reggeflow: non-realizable geometry: {exc}", file=sys.stderr)
        return TERMINATION_EXIT[Termination.NONREALIZABLE]
    except (ReggeFlowError, ValueError) as exc:
        print(f"reggeflow: invalid input: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except OSError as exc:
        print(f"reggeflow: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
