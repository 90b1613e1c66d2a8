import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import cw_closed_form, rk4_propagate
from proxrl.dynamics import DynamicsParams, discretize, propagate, step_delta_v, system_matrices
from proxrl.errors import DomainError

N = 0.001027
INSP = DynamicsParams(dt=10.0)
DOCK = DynamicsParams(dt=1.0)


def test_system_matrix_entries():
    A, B = system_matrices(INSP)
    assert f"{A[3, 0]:.6e}" == "3.164187e-06"
    assert A[3, 4] == 2 * N and A[4, 3] == -2 * N
    assert A[5, 2] == -(N**2)
    assert A[0, 3] == A[1, 4] == A[2, 5] == 1.0
    assert B[3, 0] == pytest.approx(1 / 12, rel=1e-15)
    expected_nonzero = {(0, 3), (1, 4), (2, 5), (3, 0), (3, 4), (4, 3), (5, 2)}
    assert set(zip(*np.nonzero(A))) == expected_nonzero
    assert set(zip(*np.nonzero(B))) == {(3, 0), (4, 1), (5, 2)}


def test_invalid_params_rejected():
    with pytest.raises(DomainError):
        DynamicsParams(n=0.0)
    with pytest.raises(DomainError):
        DynamicsParams(mass=-1.0)


def test_small_dt_limit():
    Ad, Bd = discretize(DynamicsParams(dt=1e-9))
    assert np.abs(Ad - np.eye(6)).max() < 1e-6
    assert np.abs(Bd).max() < 1e-6


def test_z_block_decoupled():
    Ad, Bd = discretize(INSP)
    z_idx, xy_idx = [2, 5], [0, 1, 3, 4]
    assert np.all(Ad[np.ix_(z_idx, xy_idx)] == 0.0)
    assert np.all(Ad[np.ix_(xy_idx, z_idx)] == 0.0)
    assert np.all(Bd[z_idx][:, [0, 1]] == 0.0)
    assert np.all(Bd[xy_idx][:, 2] == 0.0)


def test_out_of_plane_harmonic():
    s = np.array([0, 0, 10.0, 0, 0, 0])
    for k in range(1, 301):
        s = propagate(s, np.zeros(3), INSP)
        assert abs(s[2] - 10 * math.cos(N * k * 10.0)) < 1e-9
        assert s[0] == s[1] == s[3] == s[4] == 0.0


def test_matches_fine_rk4():
    A, B = system_matrices(INSP)
    s0 = [100.0, 0, 0, 0, 0, 0]
    ref = rk4_propagate(A, B, s0, np.zeros(3), 10.0, 1e-3)
    out = propagate(s0, np.zeros(3), INSP)
    assert np.abs(out[:3] - ref[:3]).max() < 1e-6
    thrust = [0.3, -0.7, 1.0]
    ref = rk4_propagate(A, B, [20.0, -40, 5, 0.1, 0.0, -0.2], thrust, 10.0, 1e-3)
    out = propagate([20.0, -40, 5, 0.1, 0.0, -0.2], thrust, INSP)
    assert np.abs(out[:3] - ref[:3]).max() < 1e-6


def test_free_drift_matches_closed_form_full_episode():
    s0 = np.array([60.0, -30.0, 20.0, 0.05, -0.1, 0.02])
    s = s0.copy()
    for k in range(1, 1224):
        s = propagate(s, np.zeros(3), INSP)
    ref = cw_closed_form(s0, N, 1223 * 10.0)
    assert np.abs(s[:3] - ref[:3]).max() < 1e-8


def test_zero_is_equilibrium():
    assert np.all(propagate(np.zeros(6), np.zeros(3), INSP) == 0.0)


def test_along_track_offset_is_stationary():
    s = np.array([0.0, 100.0, 0, 0, 0, 0])
    for _ in range(100):
        s = propagate(s, np.zeros(3), DOCK)
    assert np.array_equal(s, [0.0, 100.0, 0, 0, 0, 0])


def test_non_finite_rejected():
    with pytest.raises(DomainError):
        propagate([np.nan, 0, 0, 0, 0, 0], np.zeros(3), INSP)
    with pytest.raises(DomainError):
        propagate(np.zeros(6), [np.inf, 0, 0], INSP)


finite = st.floats(-1e3, 1e3, allow_nan=False)
vec6 = st.lists(finite, min_size=6, max_size=6).map(np.array)
vec3 = st.lists(st.floats(-1, 1), min_size=3, max_size=3).map(np.array)


@given(vec6, vec6, vec3, vec3)
def test_superposition(s1, s2, u1, u2):
    lhs = propagate(s1 + s2, u1 + u2, INSP)
    rhs = propagate(s1, u1, INSP) + propagate(s2, u2, INSP) - propagate(np.zeros(6), np.zeros(3), INSP)
    scale = max(np.abs(lhs).max(), np.abs(propagate(s1, u1, INSP)).max(),
                np.abs(propagate(s2, u2, INSP)).max(), 1e-300)
    assert np.abs(lhs - rhs).max() / scale < 1e-10


@given(st.floats(-1e3, 1e3), st.floats(-1, 1), st.floats(-1, 1), st.integers(1, 50))
def test_out_of_plane_stays_decoupled(z, vz, fz, steps):
    s = np.array([0, 0, z, 0, 0, vz])
    for _ in range(steps):
        s = propagate(s, [0.0, 0.0, fz], INSP)
    assert s[0] == s[1] == s[3] == s[4] == 0.0


def test_delta_v_values():
    assert step_delta_v((0, 0, 0), INSP) == 0.0
    assert step_delta_v((1, 1, 1), INSP) == 2.5
    assert step_delta_v((-0.1, 0.05, 0), DOCK) == pytest.approx(0.0125, abs=1e-15)


def test_delta_v_additivity_bit_identical(rng):
    thrusts = rng.uniform(-1, 1, size=(500, 3))
    total = 0.0
    parts = []
    for u in thrusts:
        dv = step_delta_v(u, INSP)
        parts.append(dv)
        total += dv
    acc = 0.0
    for p in parts:
        acc += p
    assert acc == total
