"""File-based offline/online pipeline behind the command line.

Every stage reads its inputs from and writes its outputs to one output
directory, so stages can be rerun independently::

    mesh.txt          benchmark mesh
    fom.traj          full-order trajectory, fom_steps.csv per-step log
    basis/            one FSIPOD1 file per segment, plus pod_segments.csv
    rom.traj          reduced trajectory, rom_steps.csv and rom_timing.csv
    errors.csv        relative errors per step, point_a.csv, compare_summary.csv
    report.csv        FOM/ROM size and linear-solve time table, *.svg plots
    perturb/          perturbed-parameter reruns with the unperturbed bases
    ablation/         single-segment (unsegmented) reduced runs
"""

import csv
import logging
import time
from pathlib import Path

import numpy as np

from .errors import ConfigError, FsiRomError, MissingState
from .fom import FsiSolver, TimeHistory
from .mesh import generate_benchmark_mesh, load_mesh, save_mesh
from .metrics import NormEvaluator, compare_trajectories
from .plots import write_chart
from .pod import CountRule, load_basis, make_schedule, offline_phase, save_basis
from .rom import run_rom
from .trajectory import load_trajectory, save_trajectory

log = logging.getLogger(__name__)

MESH_FILE = "mesh.txt"
FOM_TRAJ = "fom.traj"
FOM_STEPS = "fom_steps.csv"
BASIS_DIR = "basis"
POD_TABLE = "pod_segments.csv"
ROM_TRAJ = "rom.traj"
ROM_STEPS = "rom_steps.csv"
ROM_TIMING = "rom_timing.csv"
ERRORS = "errors.csv"
POINT_A = "point_a.csv"
SUMMARY = "compare_summary.csv"
REPORT = "report.csv"


class MissingArtifact(FsiRomError):
    """An upstream output file required by a stage does not exist."""


def _require(path, stage):
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"required input {path} not found; run `fsirom {stage}` first")
    return path


def write_csv(path, header, rows):
    """CSV with one header row; column names carry their units in brackets."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _column(path, name, kind=float):
    header, rows = read_csv(path)
    j = header.index(name)
    return np.array([kind(r[j]) for r in rows])


# ---------------------------------------------------------------- stages


def make_mesh(cfg, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.mesh_file:
        mesh = load_mesh(_require(cfg.mesh_file, "mesh"))
    else:
        mesh = generate_benchmark_mesh(cfg.mesh_resolution)
    save_mesh(mesh, out / MESH_FILE)
    log.info("mesh: %d vertices, %d cells", mesh.n_vertices, mesh.n_cells)
    return mesh


def _mesh(out):
    return load_mesh(_require(Path(out) / MESH_FILE, "mesh"))


def _fom_steps_rows(traj):
    return [(s["t"], s["newton"], s["fixed_point"], s["residual"], s["divergence"], s["solve_time"], dy)
            for s, dy in zip(traj.stats, traj.point_dy[1:])]


_FOM_HEADER = ["t [s]", "newton_iterations [-]", "fixed_point_iterations [-]", "residual [-]",
               "divergence_l2 [1/s]", "linear_solve_time [s]", "dy_A [m]"]


def full_order(cfg, out, fom_cfg=None, name=FOM_TRAJ, steps_name=FOM_STEPS):
    """Run the full-order model from rest to ``t_end``; returns the trajectory."""
    out = Path(out)
    mesh = _mesh(out)
    fom_cfg = fom_cfg or cfg.fom
    solver = FsiSolver(mesh, fom_cfg)
    t0 = time.perf_counter()
    traj = solver.run()
    log.info("full-order run: %.1f s wall, %.2f s in linear solves", time.perf_counter() - t0,
             traj.linear_solve_time)
    save_trajectory(traj, out / name)
    write_csv(out / steps_name, _FOM_HEADER, _fom_steps_rows(traj))
    return traj


def _schedule(cfg):
    return make_schedule(cfg.t_start, cfg.fom.t_end, cfg.segment_width, cfg.fom.dt)


def offline(cfg, out, traj=None):
    """Per-segment bases from the stored full-order trajectory."""
    out = Path(out)
    traj = traj or load_trajectory(_require(out / FOM_TRAJ, "fom"))
    schedule = _schedule(cfg)
    t0 = time.perf_counter()
    bases = offline_phase(traj, schedule, cfg.selection_rule(), method=cfg.basis_method, center=cfg.basis_center)
    log.info("offline phase: %d segments in %.2f s", len(bases), time.perf_counter() - t0)
    bdir = out / BASIS_DIR
    bdir.mkdir(exist_ok=True)
    for old in bdir.glob("segment_*.pod"):
        old.unlink()
    rows = []
    for b in bases:
        save_basis(b, bdir / f"segment_{b.segment:04d}.pod")
        req = b.requested or {}
        rows.append((b.segment, b.t0, b.t1, *(req.get(v, "") for v in "upd"),
                     *(b.counts.get(v, "") for v in "upd"), b.n_reduced))
    write_csv(bdir / POD_TABLE, ["segment [-]", "t0 [s]", "t1 [s]", "requested_u [-]", "requested_p [-]",
                                 "requested_d [-]", "n_u [-]", "n_p [-]", "n_d [-]", "n_reduced [-]"], rows)
    return bases


def load_bases(out, sizes):
    files = sorted((Path(out) / BASIS_DIR).glob("segment_*.pod"))
    if not files:
        raise MissingArtifact(f"no basis files in {Path(out) / BASIS_DIR}; run `fsirom pod` first")
    bases = [load_basis(f, sizes) for f in files]
    table = Path(out) / BASIS_DIR / POD_TABLE
    if table.exists():
        header, rows = read_csv(table)
        for b, r in zip(bases, rows):
            vals = dict(zip(header, r))
            req = {v: vals[f"requested_{v} [-]"] for v in "upd"}
            if all(req.values()):
                b.requested = {v: int(x) for v, x in req.items()}
    return bases


def initial_history(traj, t_start, dt):
    a, b = traj.state_at(t_start), traj.state_at(t_start - dt)
    if a is None or b is None:
        raise MissingState(f"full-order trajectory lacks states at t={t_start - dt:.6g} and {t_start:.6g}")
    return TimeHistory(a, b)


_ROM_HEADER = ["t [s]", "segment [-]", "n_reduced [-]", "newton_iterations [-]", "fixed_point_iterations [-]",
               "converged [-]", "tangled [-]", "dense_solve_time [s]", "dy_A [m]"]


def reduced(cfg, out, fom_traj=None, bases=None, fom_cfg=None, schedule=None, name=ROM_TRAJ,
            steps_name=ROM_STEPS, timing_name=ROM_TIMING):
    """Online phase over the configured schedule; returns the reduced trajectory."""
    out = Path(out)
    mesh = _mesh(out)
    fom_traj = fom_traj or load_trajectory(_require(out / FOM_TRAJ, "fom"))
    bases = bases or load_bases(out, fom_traj.sizes)
    schedule = schedule or _schedule(cfg)
    fom_cfg = fom_cfg or cfg.fom
    solver = FsiSolver(mesh, fom_cfg)
    hist = initial_history(fom_traj, schedule.t_start, fom_cfg.dt)
    t0 = time.perf_counter()
    traj = run_rom(solver, bases, schedule, hist)
    wall = time.perf_counter() - t0
    log.info("reduced run: %.1f s wall, %.3f s in dense solves", wall, traj.linear_solve_time)
    save_trajectory(traj, out / name)
    write_csv(out / steps_name, _ROM_HEADER,
              [(s["t"], s["segment"], s["n_reduced"], s["newton"], s["fixed_point"], int(s["converged"]),
                int(s["tangled"]), s["solve_time"], dy) for s, dy in zip(traj.stats, traj.point_dy[1:])])
    failed = traj.failed[0] if traj.failed else ""
    write_csv(out / timing_name, ["wall_time [s]", "dense_solve_time [s]", "projection_time [s]",
                                  "dense_solves [-]", "failed_at [s]"],
              [(wall, traj.linear_solve_time, traj.project_time, traj.linear_solves, failed)])
    return traj


def compare(cfg, out, fom_traj=None, rom_traj=None, prefix=""):
    """Error CSVs of the reduced against the full-order trajectory.

    The total error covers ``u``, ``p`` and ``d``; the mesh displacement is
    full order in both models and is left out.
    """
    out = Path(out)
    mesh = _mesh(out)
    fom_traj = fom_traj or load_trajectory(_require(out / FOM_TRAJ, "fom"))
    rom_traj = rom_traj or load_trajectory(_require(out / ROM_TRAJ, "rom"))
    rep = compare_trajectories(fom_traj, rom_traj, NormEvaluator(mesh))
    write_csv(out / f"{prefix}{ERRORS}",
              ["t [s]", "total_rel_l2_upd [-]", "u_rel_l2 [-]", "p_rel_l2 [-]", "d_rel_l2 [-]"],
              zip(rep.times, rep.total, rep.per_variable["u"], rep.per_variable["p"], rep.per_variable["d"]))
    write_csv(out / f"{prefix}{POINT_A}", ["t [s]", "dy_fom [m]", "dy_rom [m]", "dy_error [m]"],
              zip(rom_traj.point_times, rep.dy_fom, rep.dy_rom, rep.dy_error))
    write_csv(out / f"{prefix}{SUMMARY}",
              ["max_total_rel_l2 [-]", "spacetime_rel_l2 [-]", "max_abs_dy_error [m]", "steps [-]"],
              [(float(rep.total.max()), rep.spacetime, float(np.abs(rep.dy_error).max()), len(rep.times))])
    return rep


def _windows(cfg):
    rule = cfg.selection_rule()
    if isinstance(rule, CountRule):
        return [(a, min(b, cfg.fom.t_end), c) for a, b, c in rule.windows if a < cfg.fom.t_end]
    return [(cfg.t_start, cfg.fom.t_end, None)]


def reduction_rate(full, reduced_dofs):
    """``"367:1"`` style ratio of full to reduced dimension."""
    if reduced_dofs <= 0:
        return "inf"
    return f"{round(full / reduced_dofs)}:1"


def report(cfg, out):
    """Table of sizes and linear-solve times per count window, plus SVG plots."""
    out = Path(out)
    fom_steps = _require(out / FOM_STEPS, "fom")
    rom_steps = _require(out / ROM_STEPS, "rom")
    errors = _require(out / ERRORS, "compare")
    point = _require(out / POINT_A, "compare")
    fom_traj = load_trajectory(_require(out / FOM_TRAJ, "fom"))
    n_fom = sum(fom_traj.sizes.values())
    ft, fs = _column(fom_steps, "t [s]"), _column(fom_steps, "linear_solve_time [s]")
    rt, rs = _column(rom_steps, "t [s]"), _column(rom_steps, "dense_solve_time [s]")
    rn = _column(rom_steps, "n_reduced [-]", int)
    tol = 1e-6 * cfg.fom.dt
    rows = []
    for a, b, counts in _windows(cfg):
        fsel = (ft > a + tol) & (ft <= b + tol)
        rsel = (rt > a + tol) & (rt <= b + tol)
        n_rom = int(rn[rsel].max()) if rsel.any() else 0
        n_cfg = sum(counts.values()) if counts else n_rom
        tf, tr = float(fs[fsel].sum()), float(rs[rsel].sum())
        rows.append((f"{a:g}-{b:g}", n_fom, n_rom, n_cfg, reduction_rate(n_fom, n_rom), tf, tr,
                     100.0 * (1.0 - tr / tf) if tf > 0 else float("nan"),
                     tf / tr if tr > 0 else float("inf")))
    write_csv(out / REPORT, ["time_subinterval [s]", "fom_dofs [-]", "rom_dofs [-]", "configured_rom_dofs [-]",
                             "dof_reduction_rate [-]", "fom_linear_solve_time [s]", "rom_linear_solve_time [s]",
                             "time_reduction [%]", "speedup [-]"], rows)
    t = _column(point, "t [s]")
    write_chart(out / "point_a.svg", [("FOM", t, _column(point, "dy_fom [m]")),
                                      ("ROM", t, _column(point, "dy_rom [m]"))],
                title="Vertical displacement of point A", xlabel="t [s]", ylabel="Dy [m]")
    te = _column(errors, "t [s]")
    write_chart(out / "errors.svg", [(name, te, _column(errors, f"{name}_rel_l2 [-]")) for name in "upd"]
                + [("total", te, _column(errors, "total_rel_l2_upd [-]"))],
                title="Relative spatial L2 errors", xlabel="t [s]", ylabel="relative error", log_y=True)
    if (out / FOM_TRAJ).exists():
        write_chart(out / "fom_point_a.svg", [("FOM", fom_traj.point_times, fom_traj.point_dy)],
                    title="Full-order vertical displacement of point A", xlabel="t [s]", ylabel="Dy [m]")
    return rows


# ---------------------------------------------------------------- studies


def perturbation_cases(cfg):
    cases = [(f"u_hat_{v:g}", "u_hat_max", v) for v in cfg.perturb_u_hat]
    cases += [(f"mu_s_{v:g}", "mu_s", v) for v in cfg.perturb_mu_s]
    return cases


def _perturbed(fom_cfg, key, value):
    if key == "u_hat_max":
        return fom_cfg.with_(u_hat_max=float(value))
    if key == "mu_s":
        return fom_cfg.with_(params=fom_cfg.params.with_(mu_s=float(value)))
    raise ConfigError(f"cannot perturb {key!r}")


def perturbation_study(cfg, out, cases=None):
    """Rerun the full model with one perturbed parameter and replay the
    reduced model with the unperturbed bases; one summary row per case."""
    out = Path(out)
    mesh_file = _require(out / MESH_FILE, "mesh")
    base = load_trajectory(_require(out / FOM_TRAJ, "fom"))
    bases = load_bases(out, base.sizes)
    rows = []
    for name, key, value in cases or perturbation_cases(cfg):
        sub = out / "perturb" / name
        sub.mkdir(parents=True, exist_ok=True)
        (sub / MESH_FILE).write_bytes(mesh_file.read_bytes())
        fom_cfg = _perturbed(cfg.fom, key, value)
        log.info("perturbation %s", name)
        fom_traj = full_order(cfg, sub, fom_cfg)
        rom_traj = reduced(cfg, sub, fom_traj, bases, fom_cfg)
        rep = compare(cfg, sub, fom_traj, rom_traj)
        rows.append((name, key, value, rep.spacetime, float(rep.total.max()), float(np.abs(rep.dy_error).max())))
    write_csv(out / "perturb" / "perturb_summary.csv",
              ["case [-]", "parameter [-]", "value [SI]", "spacetime_rel_l2 [-]", "max_total_rel_l2 [-]",
               "max_abs_dy_error [m]"], rows)
    return rows


def ablation_study(cfg, out):
    """Single-segment reduced runs over the whole reduced interval.

    Variant ``blocked`` keeps one basis per variable; ``monolithic`` builds
    one basis from the stacked ``(u, p, d)`` snapshots. Mode counts follow
    the configured rule evaluated on the single segment. The runs are
    non-strict, so a blow-up is recorded rather than raised.
    """
    out = Path(out)
    fom_traj = load_trajectory(_require(out / FOM_TRAJ, "fom"))
    mesh_file = _require(out / MESH_FILE, "mesh")
    width = cfg.fom.t_end - cfg.t_start
    schedule = make_schedule(cfg.t_start, cfg.fom.t_end, width, cfg.fom.dt)
    fom_cfg = cfg.fom.with_(strict=False)
    sub = out / "ablation"
    sub.mkdir(parents=True, exist_ok=True)
    (sub / MESH_FILE).write_bytes(mesh_file.read_bytes())
    rows = []
    for variant in ("blocked", "monolithic"):
        bases = offline_phase(fom_traj, schedule, cfg.selection_rule(), monolithic=variant == "monolithic",
                              method=cfg.basis_method, center=cfg.basis_center)
        log.info("ablation %s: %s modes", variant, bases[0].counts)
        rom_traj = reduced(cfg, sub, fom_traj, bases, fom_cfg, schedule, name=f"{variant}.traj",
                           steps_name=f"{variant}_steps.csv", timing_name=f"{variant}_timing.csv")
        rep = compare(cfg, sub, fom_traj, rom_traj, prefix=f"{variant}_")
        failed = rom_traj.failed[0] if rom_traj.failed else ""
        rows.append((variant, bases[0].n_reduced, float(np.nanmax(rep.total)), rep.spacetime,
                     float(np.abs(rep.dy_error).max()), failed))
    write_csv(sub / "ablation.csv", ["variant [-]", "n_reduced [-]", "max_total_rel_l2 [-]",
                                     "spacetime_rel_l2 [-]", "max_abs_dy_error [m]", "failed_at [s]"], rows)
    return rows
