"""Acceptance gate. Each test checks one criterion at its stated tolerance and
prints a ``criterion N: PASS|FAIL`` line; the lines are repeated in the
terminal summary."""

import time

import numpy as np

from conftest import record
from fsirom import workflow
from fsirom.fem import DofMap, cell_geometry, l2_norm
from fsirom.fom import FomConfig, FsiSolver, TimeHistory
from fsirom.mesh import Tag, generate_channel_mesh, load_mesh
from fsirom.metrics import NormEvaluator, relative_spatial_l2
from fsirom.numerics import sym_eig_descending
from fsirom.pod import RankRule, build_snapshots, correlation, make_schedule, offline_phase, pod_basis
from fsirom.rom import ReducedState, expand_state, reduce_state, run_rom
from fsirom.trajectory import load_trajectory

CHANNEL_H = 0.41


def _fom(benchmark):
    return load_trajectory(benchmark.out / workflow.FOM_TRAJ)


def _solver(benchmark, fom_cfg=None):
    return FsiSolver(load_mesh(benchmark.out / workflow.MESH_FILE), fom_cfg or benchmark.cfg.fom)


def test_criterion_1_pod_optimality():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_err = worst_orth = 0.0
    for _ in range(50):
        m = int(rng.integers(2, 201))
        n = int(rng.integers(1, 41))
        X = rng.standard_normal((m, n)) * rng.uniform(0.1, 10.0)
        rank = min(m, n)
        N = int(rng.integers(1, rank + 1))
        Xi, lam = pod_basis(X, n_select=N)
        tail = lam[N:].sum()
        err = np.linalg.norm(X - Xi @ (Xi.T @ X)) ** 2
        # a tail at round-off level is compared against lambda_1 instead
        rel = abs(err - tail) / (tail if tail > 1e-12 * lam[0] else lam[0])
        worst_err = max(worst_err, rel)
        worst_orth = max(worst_orth, np.linalg.norm(Xi.T @ Xi - np.eye(N)))
    wall = time.perf_counter() - t0
    ok = worst_err <= 1e-8 and worst_orth <= 1e-10 and wall < 5.0
    assert record(1, ok, f"max rel tail mismatch {worst_err:.2e} (<=1e-8), max |XiT Xi - I| {worst_orth:.2e} "
                         f"(<=1e-10), {wall:.2f} s (<5 s)")


def test_criterion_2_full_basis_equivalence(benchmark):
    t_start = time.perf_counter()
    fom = _fom(benchmark)
    cfg = benchmark.cfg
    solver = _solver(benchmark)
    t0 = cfg.t_start
    sched = make_schedule(t0, t0 + cfg.segment_width, cfg.segment_width, cfg.fom.dt)
    bases = offline_phase(fom, sched, RankRule(), method="svd", center=cfg.basis_center)
    rom = run_rom(solver, bases, sched, workflow.initial_history(fom, t0, cfg.fom.dt))
    ev = NormEvaluator(solver.mesh, solver.dofmap)
    errs = [relative_spatial_l2(fom.state(fom.index_of(t)), rom.state(k), ev)[0]
            for k, t in enumerate(rom.times) if k > 0]
    wall = time.perf_counter() - t_start
    ok = len(errs) == sched.segments[0][2] - 1 and max(errs) <= 1e-6 and wall < 300
    assert record(2, ok, f"segment [{t0:g}, {t0 + cfg.segment_width:g}] s, N={bases[0].counts}, "
                         f"max rel L2 {max(errs):.2e} over {len(errs)} steps (<=1e-6), {wall:.1f} s (<300 s)")


def _poiseuille_error(h):
    mesh = generate_channel_mesh(1.0, CHANNEL_H, h)
    cfg = FomConfig(dt=0.5, t_end=10.0, ramp_end=1e-9, u_hat_max=0.3, outlet="gradient")
    solver = FsiSolver(mesh, cfg)
    traj = solver.run()
    dm = solver.dofmap
    u = traj.state(len(traj) - 1).vector_block("u")
    y = mesh.vertices[dm.fluid_vertices, 1]
    exact = np.column_stack([4 * 0.3 * y * (CHANNEL_H - y) / CHANNEL_H ** 2, np.zeros_like(y)])
    cells = dm.fluid_index[mesh.cells[mesh.fluid_cells]]
    verts = mesh.vertices[dm.fluid_vertices]
    return l2_norm(u - exact, verts, cells) / l2_norm(exact, verts, cells)


def test_criterion_3_poiseuille():
    t0 = time.perf_counter()
    coarse, fine = _poiseuille_error(0.04), _poiseuille_error(0.02)
    wall = time.perf_counter() - t0
    ok = coarse < 0.02 and fine < 0.02 and fine < coarse and wall < 300
    assert record(3, ok, f"rel L2 velocity error h=0.04: {coarse:.4f}, h=0.02: {fine:.4f} (<0.02, decreasing), "
                         f"{wall:.1f} s (<300 s)")


def _crossings(t, y):
    s = np.sign(y - y.mean())
    idx = np.flatnonzero(s[1:] * s[:-1] < 0)
    return t[idx]


def test_criterion_4_benchmark_oscillation(benchmark):
    """Sustained periodic motion on the last two seconds: half peak-to-peak
    amplitude of at least 5 mm (a sixth of the reference amplitude), at
    least four mean crossings and crossing intervals within 25% of their
    mean."""
    fom = _fom(benchmark)
    t = np.asarray(fom.point_times)
    dy = np.asarray(fom.point_dy)
    win = t >= 13.0 - 1e-9
    amp = 0.5 * (dy[win].max() - dy[win].min())
    cross = _crossings(t[win], dy[win])
    gaps = np.diff(cross)
    regular = gaps.size >= 3 and np.abs(gaps - gaps.mean()).max() <= 0.25 * gaps.mean()
    wall = benchmark.wall.get("fom", 0.0)
    ok = amp >= 5e-3 and cross.size >= 4 and regular and wall <= 3600
    assert record(4, ok, f"point A on [13, 15] s: half amplitude {amp:.2e} m (>=5e-3), {cross.size} mean "
                         f"crossings (>=4), regular={regular}, FOM {wall:.0f} s (<=3600 s)")


def test_criterion_5_segmented_rom(benchmark):
    header, rows = workflow.read_csv(benchmark.out / workflow.SUMMARY)
    row = dict(zip(header, rows[0]))
    max_total = float(row["max_total_rel_l2 [-]"])
    spacetime = float(row["spacetime_rel_l2 [-]"])
    wall = benchmark.wall.get("rom", 0.0) + benchmark.wall.get("compare", 0.0)
    ok = max_total < 0.1 and spacetime < 0.05 and wall <= 1800
    assert record(5, ok, f"max total rel L2 {max_total:.4f} (<0.1), spacetime {spacetime:.4f} (<0.05), "
                         f"online+compare {wall:.0f} s (<=1800 s)")


def test_criterion_6_ablation(benchmark):
    t0 = time.perf_counter()
    rows = workflow.ablation_study(benchmark.cfg, benchmark.out)
    wall = time.perf_counter() - t0
    worst = {r[0]: float(r[2]) for r in rows}
    header, summary = workflow.read_csv(benchmark.out / workflow.SUMMARY)
    segmented = float(dict(zip(header, summary[0]))["max_total_rel_l2 [-]"])
    ok = all(v >= 1e3 for v in worst.values()) and segmented < 0.1 and wall <= 1800
    detail = ", ".join(f"{k} max {v:.3g}" for k, v in worst.items())
    assert record(6, ok, f"unsegmented {detail} (>=1e3); segmented max {segmented:.4f} (<0.1), {wall:.0f} s")


def test_criterion_7_speedup(benchmark):
    out = benchmark.out
    cfg = benchmark.cfg
    tol = 1e-6 * cfg.fom.dt
    ft = workflow._column(out / workflow.FOM_STEPS, "t [s]")
    fs = workflow._column(out / workflow.FOM_STEPS, "linear_solve_time [s]")
    rt = workflow._column(out / workflow.ROM_STEPS, "t [s]")
    rs = workflow._column(out / workflow.ROM_STEPS, "dense_solve_time [s]")
    rn = workflow._column(out / workflow.ROM_STEPS, "n_reduced [-]", int)
    fom_time = fs[ft > cfg.t_start + tol].sum()
    rom_time = rs.sum()
    speedup = fom_time / rom_time if rom_time > 0 else float("inf")
    rule = cfg.selection_rule()
    want = np.array([sum(rule.counts(t - cfg.fom.dt, t, None, None).values()) for t in rt])
    mismatched = int(np.count_nonzero(rn != want))
    ok = speedup >= 50 and mismatched == 0
    assert record(7, ok, f"FOM sparse {fom_time:.2f} s vs ROM dense {rom_time:.4f} s, speedup {speedup:.0f} "
                         f"(>=50); reduced dims {sorted(set(rn.tolist()))} vs configured "
                         f"{sorted(set(want.tolist()))}, {mismatched} of {rn.size} steps differ")


def test_criterion_8_perturbation(benchmark):
    results = []
    for case in workflow.perturbation_cases(benchmark.cfg):
        t0 = time.perf_counter()
        (row,) = workflow.perturbation_study(benchmark.cfg, benchmark.out, cases=[case])
        results.append((row, time.perf_counter() - t0))
    ok = len(results) == 4 and all(r[3] < 0.15 and r[5] <= 0.05 and w <= 3600 for r, w in results)
    detail = "; ".join(f"{r[0]}: spacetime {r[3]:.4f}, max|dDy| {r[5]:.2e} m, {w:.0f} s" for r, w in results)
    assert record(8, ok, f"{detail} (<0.15, <=0.05 m, <=3600 s)")


def _min_jacobian(mesh, traj):
    """Smallest ``det F`` of the ALE map over fluid cells and stored states."""
    nf = mesh.fluid_vertices.size
    cells = mesh.cells[mesh.fluid_cells]
    ref = cell_geometry(mesh.vertices[cells])[0]
    pos = mesh.vertices.copy()
    worst = np.inf
    for values in traj.values:
        pos[mesh.fluid_vertices] = mesh.vertices[mesh.fluid_vertices] + values[-2 * nf:].reshape(2, nf).T
        worst = min(worst, float((cell_geometry(pos[cells])[0] / ref).min()))
    return worst


def test_criterion_9_invariants(benchmark):
    t_start = time.perf_counter()
    out, cfg = benchmark.out, benchmark.cfg
    mesh = load_mesh(out / workflow.MESH_FILE)
    dm = DofMap(mesh)
    fom = _fom(benchmark)
    rom = load_trajectory(out / workflow.ROM_TRAJ)
    checks = {}

    # zero input keeps the coupled system at rest, full and reduced
    rest = FsiSolver(mesh, cfg.fom.with_(u_hat_max=0.0, t_end=3 * cfg.fom.dt))
    zero_traj = rest.run()
    sched = make_schedule(cfg.fom.dt, 3 * cfg.fom.dt, 2 * cfg.fom.dt, cfg.fom.dt)
    (zb,) = offline_phase(zero_traj, sched, RankRule(), center=False)
    zrom = run_rom(rest, [zb], sched, TimeHistory.start(rest.initial_state(cfg.fom.dt)))
    checks["zero input"] = (max(np.abs(v).max() for v in zero_traj.values + zrom.values) == 0.0)

    # kinematic coupling on every stored full-order step
    iface = mesh.tagged_vertices(Tag.INTERFACE)
    worst = 0.0
    for k in range(1, len(fom)):
        s, p = fom.state(k), fom.state(k - 1)
        v = (s.vector_block("d") - p.vector_block("d"))[dm.structure_index[iface]] / cfg.fom.dt
        u = s.vector_block("u")[dm.fluid_index[iface]]
        worst = max(worst, np.abs(u - v).max() / (1.0 + np.abs(v).max()))
    checks[f"kinematic {worst:.1e}"] = worst <= 1e-10

    # discrete divergence stays within 10x of its first post-ramp value
    t = workflow._column(out / workflow.FOM_STEPS, "t [s]")
    div = workflow._column(out / workflow.FOM_STEPS, "divergence_l2 [1/s]")
    first = div[np.argmax(t > cfg.fom.ramp_end + 1e-9)]
    checks[f"divergence max/first {div.max() / first:.2f}"] = div.max() <= 10 * first

    # no tangled fluid cell in any stored full-order or reduced state
    jmin = min(_min_jacobian(mesh, fom), _min_jacobian(mesh, rom))
    checks[f"min J {jmin:.3f}"] = jmin > 0

    # projection idempotence for every stored segment basis
    bases = workflow.load_bases(out, fom.sizes)
    rng = np.random.default_rng(0)
    idem = 0.0
    for b in bases:
        a = rng.standard_normal(b.n_reduced)
        back = reduce_state(expand_state(ReducedState(b.t0, a, b.segment), b), b).coefficients
        idem = max(idem, np.abs(back - a).max(initial=0.0))
    checks[f"idempotence {idem:.1e}"] = idem <= 1e-12

    # eigen residuals of every segment correlation matrix
    resid = orth = 0.0
    for snap in build_snapshots(fom, workflow._schedule(cfg)):
        for b in ("u", "p", "d"):
            C = correlation(snap[b])
            lam, Q = sym_eig_descending(C)
            scale = max(np.linalg.norm(C), np.finfo(float).tiny)
            resid = max(resid, np.linalg.norm(C @ Q - Q * lam) / scale)
            orth = max(orth, np.linalg.norm(Q.T @ Q - np.eye(Q.shape[1])))
    checks[f"eigen residual {resid:.1e}, orthogonality {orth:.1e}"] = resid <= 1e-10 and orth <= 1e-10

    wall = time.perf_counter() - t_start
    ok = all(checks.values()) and wall < 600
    failed = [k for k, v in checks.items() if not v]
    assert record(9, ok, "; ".join(checks) + f"; {wall:.0f} s (<600 s)" + (f"; failed: {failed}" if failed else ""))
