import numpy as np
import pytest

from fsirom.errors import StepFailure
from fsirom.fem import l2_norm
from fsirom.fom import (FomConfig, FsiSolver, TimeHistory, backward_diff1, backward_diff2, inflow_profile)
from fsirom.mesh import Tag, generate_channel_mesh

H = 0.41


def test_inflow_examples():
    assert inflow_profile(H / 2, 0.0, 1.5) == 0.0
    assert inflow_profile(H / 2, 2.0, 1.5) == pytest.approx(1.5)
    assert inflow_profile(H / 2, 1.0, 1.5) == pytest.approx(0.75)
    np.testing.assert_allclose(inflow_profile(np.array([0.0, H]), 5.0, 1.5), 0.0, atol=1e-15)


def test_backward_differences():
    assert backward_diff1(3.0, 1.0, 0.5) == 4.0
    assert backward_diff2(4.0, 1.0, 0.0, 1.0) == 2.0
    t = np.linspace(0, 1, 4)
    assert backward_diff2(t[3] ** 2, t[2] ** 2, t[1] ** 2, t[1]) == pytest.approx(2.0)


def test_config_validation():
    with pytest.raises(ValueError):
        FomConfig(dt=0.0)
    with pytest.raises(ValueError):
        FomConfig(outlet="open")
    assert FomConfig(dt=0.01, t_end=15.0).n_steps == 1500


@pytest.fixture(scope="module")
def started(coarse_mesh):
    """Five steps of an impulsively started flow on the coarse benchmark mesh."""
    cfg = FomConfig(dt=0.01, t_end=0.05, ramp_end=0.05)
    solver = FsiSolver(coarse_mesh, cfg)
    infos = []
    traj = solver.run(callback=lambda n, s, info: infos.append(info))
    return solver, traj, infos


def test_zero_inflow_stays_at_rest(coarse_mesh):
    solver = FsiSolver(coarse_mesh, FomConfig(u_hat_max=0.0))
    state, info = solver.step(TimeHistory.start(solver.initial_state()), 0.01)
    assert info.converged
    assert np.abs(state.values).max() <= 1e-12


def test_newton_converges(started):
    _, traj, infos = started
    assert len(traj) == 6
    for info in infos:
        assert info.converged and not info.tangled
        assert 1 <= info.newton_iterations <= 20


def test_kinematic_condition_exact(started):
    solver, traj, _ = started
    dm = solver.dofmap
    iface = solver.mesh.tagged_vertices(Tag.INTERFACE)
    for k in range(1, len(traj)):
        s, prev = traj.state(k), traj.state(k - 1)
        v = (s.vector_block("d") - prev.vector_block("d"))[dm.structure_index[iface]] / solver.config.dt
        u = s.vector_block("u")[dm.fluid_index[iface]]
        np.testing.assert_allclose(u, v, atol=1e-13 * (1 + np.abs(v).max()))
    assert np.abs(traj.state(len(traj) - 1).d).max() > 0


def test_mesh_follows_structure(started):
    solver, traj, _ = started
    s = traj.state(len(traj) - 1)
    iface = solver.mesh.tagged_vertices(Tag.INTERFACE)
    dm = solver.dofmap
    np.testing.assert_allclose(s.vector_block("m")[dm.fluid_index[iface]],
                               s.vector_block("d")[dm.structure_index[iface]],
                               atol=10 * solver.config.meshfp_tol)


def test_point_a_recorded(started):
    solver, traj, _ = started
    assert len(traj.point_dy) == 6
    assert traj.point_dy[-1] == solver.point_a_dy(traj.state(len(traj) - 1))


def test_strict_mode_raises(coarse_mesh):
    cfg = FomConfig(dt=0.01, t_end=0.01, ramp_end=0.01, newton_max=0)
    with pytest.raises(StepFailure) as info:
        FsiSolver(coarse_mesh, cfg).run()
    assert info.value.step == 1
    loose = FsiSolver(coarse_mesh, cfg.with_(strict=False)).run()
    assert len(loose) == 2


def test_poiseuille_channel():
    mesh = generate_channel_mesh(1.0, H, 0.05)
    cfg = FomConfig(dt=0.5, t_end=5.0, ramp_end=1e-9, u_hat_max=0.3, outlet="gradient")
    solver = FsiSolver(mesh, cfg)
    traj = solver.run()
    dm = solver.dofmap
    u = traj.state(len(traj) - 1).vector_block("u")
    y = mesh.vertices[dm.fluid_vertices, 1]
    exact = np.column_stack([4 * 0.3 * y * (H - y) / H ** 2, np.zeros_like(y)])
    cells = dm.fluid_index[mesh.cells[mesh.fluid_cells]]
    verts = mesh.vertices[dm.fluid_vertices]
    assert l2_norm(u - exact, verts, cells) <= 0.05 * l2_norm(exact, verts, cells)
    assert np.isnan(solver.point_a_dy(traj.state(0)))
