import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lagspec.errors import PreconditionError
from lagspec.flow import (
    _leaf,
    endpoint_map,
    flow_points,
    hofer_norm,
    integrate_trajectory,
    osc_c0,
    time_one_curve,
)
from lagspec.phase_space import BaseLift, BasePoint, Bump, FoldFamily, Fourier, Reflect, Sum, TimeConstant, Zero

TWO_PI = 2 * math.pi
BUMP = Bump(0.4, 2.0, 0.1, 1.2, 1.0)


def test_fold_curve_matches_closed_form(figure1):
    c = time_one_curve(figure1, 512, 128)
    Q, P, h = figure1.exact_curve(TWO_PI * c.s[:, None])
    assert np.max(np.abs(c.Q - Q[:, 0])) < 1e-8
    assert np.max(np.abs(c.P - P[:, 0])) < 1e-8
    assert np.max(np.abs(c.h - h)) < 1e-8


@given(st.floats(0.0, TWO_PI), st.floats(-0.6, 0.6))
def test_energy_conserved_for_autonomous_bump(q, p):
    _, _, _, (qs, ps, _) = flow_points(BUMP, [q], [p], 0.0, 1.0, 128, record=True)
    E = BUMP.evaluate(0.0, qs[:, 0, :], ps[:, 0, :])[0]
    assert np.ptp(E) < 1e-5  # bounded O(dt^2) oscillation


def test_second_order_on_non_flat_hamiltonian():
    q = TWO_PI * np.arange(64) / 64
    p = np.zeros(64)
    ref = endpoint_map(BUMP, q, p, 1024, richardson=True)[2]
    e1 = np.max(np.abs(endpoint_map(BUMP, q, p, 32)[2] - ref))
    e2 = np.max(np.abs(endpoint_map(BUMP, q, p, 64)[2] - ref))
    assert e1 / e2 >= 3.5


def test_action_is_discrete_integral_of_p_dq_minus_h():
    q0 = np.array([1.0])
    _, _, _, (qs, ps, As) = flow_points(BUMP, q0, [0.3], 0.0, 1.0, 256, record=True)
    dt = 1.0 / 256
    # midpoint rule on p dq - H dt reproduces each increment exactly for the implicit midpoint map
    qm, pm = 0.5 * (qs[1:] + qs[:-1]), 0.5 * (ps[1:] + ps[:-1])
    inc = np.sum(pm * (qs[1:] - qs[:-1]), axis=-1)[:, 0] - dt * BUMP.evaluate(0.0, qm[:, 0], pm[:, 0])[0]
    assert np.max(np.abs(np.diff(As[:, 0]) - inc)) < 1e-13


def test_trajectory_starts_on_zero_section():
    tr = integrate_trajectory(BUMP, BasePoint((2.0,)), 64)
    assert tr.p[0, 0] == 0.0 and tr.action[0] == 0.0


def test_curve_exactness_and_circulation():
    H = Sum((BUMP, BaseLift(Fourier(((1,),), (0.3,), (0.5,)), 3.0)), (1.0, 1.0))
    coarse = time_one_curve(H, 256, 64)
    fine = time_one_curve(H, 1024, 64)
    assert abs(fine.circulation()) < abs(coarse.circulation()) or abs(fine.circulation()) < 1e-12
    assert fine.exactness_residual() < coarse.exactness_residual() + 1e-12
    assert fine.exactness_residual() < 1e-4


def test_dh_equals_p_dq_to_second_order(figure1):
    c = time_one_curve(figure1, 1024, 64)
    s = np.append(c.s, 1.0)
    Q = np.append(c.Q, c.Q[0] + TWO_PI)
    P = np.append(c.P, c.P[0])
    h = np.append(c.h, c.h[0])
    lhs = np.diff(h)
    rhs = 0.5 * (P[1:] + P[:-1]) * np.diff(Q)
    assert np.max(np.abs(lhs - rhs)) < 5e-6
    assert np.all(np.diff(s) > 0)


def test_literal_reflect_flow_matches_shortcut():
    H = Reflect(BUMP)
    q = TWO_PI * np.arange(32) / 32
    p = np.linspace(-0.4, 0.4, 32)
    short = endpoint_map(H, q, p, 128)
    literal = _leaf(H, q[:, None], p[:, None], 128, True, False)
    for a, b in zip(short, literal):
        assert np.max(np.abs(a - b)) < 1e-12


def test_time_constant_shifts_action_only():
    H = TimeConstant((0.3, 0.2))
    c = time_one_curve(H, 256, 32)
    assert np.max(np.abs(c.P)) == 0.0
    assert np.allclose(c.h, -0.4, atol=1e-12)


def test_hofer_norm_closed_forms():
    assert hofer_norm(Zero(1)) == 0.0
    f = Fourier(((1,),), (0.5,), (0.0,))
    # osc of 0.5 cos q on the grid
    assert hofer_norm(BaseLift(f, 3.0)) == pytest.approx(1.0, rel=1e-12)
    assert hofer_norm(TimeConstant((0.3, 0.2))) == 0.0


def test_osc_c0_of_base_lift():
    f = Fourier(((1,),), (0.5,), (0.0,))
    d = osc_c0(BaseLift(f, 3.0))
    # q fixed, |p| = |f'| <= 0.5
    assert d == pytest.approx(0.5, rel=1e-3)


def test_resolution_preconditions():
    with pytest.raises(PreconditionError):
        time_one_curve(BUMP, 128)
    with pytest.raises(PreconditionError):
        osc_c0(BUMP, 64)
    with pytest.raises(PreconditionError):
        time_one_curve(FoldFamily(Fourier(((1, 0),), (0.3,), (0.0,)), ((1.0, 0.0), (0.0, 1.0))), 256)
