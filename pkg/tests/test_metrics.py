import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import square_mesh
from fsirom.errors import DimensionMismatch, ZeroNorm
from fsirom.fem import DofMap, FieldState
from fsirom.metrics import (NormEvaluator, compare_trajectories, dy_error_series, relative_spacetime_l2,
                            relative_spatial_l2)
from fsirom.trajectory import Trajectory
from oracles import quadrature_l2

MESH = square_mesh()
DM = DofMap(MESH)
EV = NormEvaluator(MESH, DM)


def state(seed, t=0.0, scale=1.0, mesh_motion=0.05):
    rng = np.random.default_rng(seed)
    v = scale * rng.standard_normal(DM.size)
    v[DM.block("m")] = mesh_motion * rng.uniform(-1, 1, DM.sizes["m"])
    return FieldState(t, v, dict(DM.sizes))


def with_values(s, values):
    return FieldState(s.time, values, dict(s.sizes))


def test_identical_is_zero():
    s = state(0)
    total, per = relative_spatial_l2(s, s, EV)
    assert total == 0.0 and all(per[v] == 0.0 for v in ("u", "p"))


def test_ten_percent():
    s = state(1)
    v = 1.1 * s.values
    v[DM.block("m")] = s.m
    total, per = relative_spatial_l2(s, with_values(s, v), EV)
    assert total == pytest.approx(0.1, rel=1e-12)
    assert per["u"] == pytest.approx(0.1, rel=1e-12)
    assert np.isnan(per["d"])


def test_against_quadrature_oracle():
    a, b = state(2), state(3)
    b = with_values(b, np.concatenate([b.values[:-10], a.m]))
    pos = MESH.vertices + a.vector_block("m")
    ea = a.values - b.values
    u = lambda x: x[:10].reshape(2, 5).T
    num = quadrature_l2(u(ea), u(ea), pos, MESH.cells) + quadrature_l2(ea[10:15], ea[10:15], pos, MESH.cells)
    den = (quadrature_l2(u(a.values), u(a.values), pos, MESH.cells)
           + quadrature_l2(a.values[10:15], a.values[10:15], pos, MESH.cells))
    assert relative_spatial_l2(a, b, EV)[0] == pytest.approx(np.sqrt(num / den), rel=1e-12)


def test_mesh_block_excluded():
    a = state(4)
    b = with_values(a, np.concatenate([a.values[:-10], np.zeros(10)]))
    assert relative_spatial_l2(a, b, EV)[0] == 0.0


def test_zero_reference():
    z = FieldState(0.0, np.zeros(DM.size), dict(DM.sizes))
    with pytest.raises(ZeroNorm):
        relative_spatial_l2(z, state(5), EV)
    with pytest.raises(ZeroNorm):
        relative_spacetime_l2([z], [state(5)], EV, 0.1)


def test_layout_mismatch():
    other = FieldState(0.0, np.zeros(5), {"u": 2, "p": 1, "d": 0, "m": 2})
    with pytest.raises(DimensionMismatch):
        relative_spatial_l2(state(0), other, EV)
    with pytest.raises(DimensionMismatch):
        relative_spacetime_l2([state(0)], [], EV, 0.1)


def test_spacetime_examples():
    fom = [state(k, t=0.1 * k) for k in range(3)]
    assert relative_spacetime_l2(fom, fom, EV, 0.1) == 0.0
    rom = [with_values(s, np.concatenate([0.97 * s.values[:-10], s.m])) for s in fom]
    assert relative_spacetime_l2(fom, rom, EV, 0.1) == pytest.approx(0.03, rel=1e-12)


def test_spacetime_hand_sum():
    fom = [state(k) for k in range(3)]
    rom = [state(10 + k) for k in range(3)]
    rom = [with_values(r, np.concatenate([r.values[:-10], f.m])) for r, f in zip(rom, fom)]
    num = den = 0.0
    for f, r in zip(fom, rom):
        pos = MESH.vertices + f.vector_block("m")
        e = f.values - r.values
        num += 0.2 * (quadrature_l2(e[:10].reshape(2, 5).T, e[:10].reshape(2, 5).T, pos, MESH.cells)
                      + quadrature_l2(e[10:15], e[10:15], pos, MESH.cells))
        x = f.values
        den += 0.2 * (quadrature_l2(x[:10].reshape(2, 5).T, x[:10].reshape(2, 5).T, pos, MESH.cells)
                      + quadrature_l2(x[10:15], x[10:15], pos, MESH.cells))
    assert relative_spacetime_l2(fom, rom, EV, 0.2) == pytest.approx(np.sqrt(num / den), rel=1e-12)


def test_dy_series():
    np.testing.assert_array_equal(dy_error_series([1.0, 2.0], [1.0, 2.0]), 0.0)
    np.testing.assert_allclose(dy_error_series([1.0, 2.0], [1.5, 2.5]), -0.5)
    with pytest.raises(DimensionMismatch):
        dy_error_series([1.0], [1.0, 2.0])


def test_compare_trajectories():
    fom = Trajectory(0.1, dict(DM.sizes))
    rom = Trajectory(0.1, dict(DM.sizes))
    for k in range(4):
        s = state(k, t=0.1 * k)
        fom.append_state(s)
        fom.append_point(s.time, 0.01 * k)
        rom.append_state(s)
        rom.append_point(s.time, 0.01 * k + 0.002)
    rep = compare_trajectories(fom, rom, EV)
    np.testing.assert_array_equal(rep.total, 0.0)
    assert rep.spacetime == 0.0
    np.testing.assert_allclose(rep.dy_error, -0.002)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.01, 100.0), st.booleans())
def test_scale_covariance(seed, c, negate):
    c = -c if negate else c
    a, b = state(seed), state(seed + 1)
    b = with_values(b, np.concatenate([b.values[:-10], a.m]))
    sa = with_values(a, np.concatenate([c * a.values[:-10], a.m]))
    sb = with_values(b, np.concatenate([c * b.values[:-10], a.m]))
    assert relative_spatial_l2(sa, sb, EV)[0] == pytest.approx(relative_spatial_l2(a, b, EV)[0], rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_triangle_inequality(seed):
    # common denominator: every error is measured against the same reference A
    A = [state(seed + k) for k in range(3)]
    B = [state(seed + 100 + k) for k in range(3)]
    C = [state(seed + 200 + k) for k in range(3)]
    same_mesh = lambda xs: [with_values(x, np.concatenate([x.values[:-10], a.m])) for x, a in zip(xs, A)]
    B, C = same_mesh(B), same_mesh(C)
    shift = lambda xs, ys: [with_values(a, np.concatenate([a.values[:-10] + x.values[:-10] - y.values[:-10], a.m]))
                            for a, x, y in zip(A, xs, ys)]
    ac = relative_spacetime_l2(A, C, EV, 0.1)
    ab = relative_spacetime_l2(A, B, EV, 0.1)
    bc = relative_spacetime_l2(A, shift(B, C), EV, 0.1)
    assert ac <= ab + bc + 1e-12
