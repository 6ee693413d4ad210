import math

import numpy as np
import pytest

from lagspec.capacity import (
    CapacityScenario,
    b_supported_bump,
    capacity_bound,
    constant_C,
    continuity_experiment,
    default_scenario,
    verify_shift_lemma,
    verify_tube_identity,
)
from lagspec.errors import PreconditionError
from lagspec.phase_space import Bump, SlopeBump

B = (2.0, 4.0)


def test_constant_C_closed_form():
    f = SlopeBump(0.1, 0.9, 3.0)
    crit = f.critical_points()
    dist = min(min(c - B[0], B[1] - c) for c in crit)
    assert constant_C(f, B) == pytest.approx(min(0.1, dist), abs=1e-12)


def test_df_bounded_below_off_B():
    f = SlopeBump(0.1, 0.9, 3.0)
    C = constant_C(f, B)
    q = np.linspace(B[1], B[0] + 2 * math.pi, 4001)[:, None]
    assert np.min(np.abs(f.value_grad(q)[1])) >= C - 1e-12
    assert all(min(abs(c - B[0]), abs(c - B[1])) >= C - 1e-12 for c in f.critical_points())


@pytest.mark.parametrize("lam", [0.5, 0.25, 0.1])
def test_ratio_bound_is_scale_invariant(lam):
    f = SlopeBump(0.1, 0.9, 3.0)
    a = CapacityScenario(f, B, 1.5, b_supported_bump(B, 0.01))
    b = CapacityScenario(f.scaled(lam), B, 1.5, b_supported_bump(B, 0.01))
    assert b.ratio_bound == pytest.approx(a.ratio_bound, rel=1e-12)


def test_preconditions():
    with pytest.raises(PreconditionError):
        constant_C(SlopeBump(0.1, 0.9, 0.5), B)  # critical points outside B
    with pytest.raises(PreconditionError):
        constant_C(SlopeBump(0.1, 0.9, 3.0), (4.0, 2.0))
    with pytest.raises(PreconditionError):
        constant_C(SlopeBump(2.0, 0.9, 3.0), B, T_radius=0.5)  # graph leaves the tube
    f = SlopeBump(0.1, 0.9, 3.0)
    with pytest.raises(PreconditionError):
        CapacityScenario(f, B, 1.5, Bump(0.1, 3.0, 0.0, 0.5, 1.0))  # support meets the tube
    with pytest.raises(PreconditionError):
        continuity_experiment(f, B, 1.5, [0.01], n=64)  # B narrower than 16 grid cells


def test_tube_is_fixed_exactly():
    _, scn = default_scenario(0.05)
    assert verify_tube_identity(scn.H, scn.B, scn.T_radius)["max_displacement"] == 0.0


def test_shift_lemma_intersections_match():
    _, scn = default_scenario(0.05)
    rep = verify_shift_lemma(scn)
    assert rep["pass"] and not rep["skipped"]


def test_capacity_bound_single_amplitude():
    _, scn = default_scenario(0.005)
    rep = capacity_bound(scn)
    assert rep["pass"], rep
    assert rep["ratio"] <= rep["bound"] + rep["tol"]
    assert rep["gamma"] >= -rep["gamma_bracket"]
