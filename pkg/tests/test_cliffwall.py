import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lagspec.cliffwall import (
    GeneratingFamily,
    affine,
    affine3_field,
    affine3_triple_point,
    analyze_field,
    eps_sweep,
    perturbed_product,
    sample_selector_2d,
    synthetic_field,
    vfold_field,
)
from lagspec.errors import DegenerateError, PreconditionError
from lagspec.phase_space import Fourier

TWO_PI = 2 * math.pi


def test_affine3_triple_point_closed_form():
    assert np.allclose(affine3_triple_point(), (1 / 60, -3 / 32), atol=1e-15)


def test_affine3_arrangement():
    strata, jumps, cycle, rep = analyze_field(affine3_field(128), 1e-12)
    assert rep["pass"], rep
    assert len(strata.S1) == 3 and rep["n_triple"] == 1
    assert rep["triangles"]["simplex"] == 1
    assert np.max(np.abs(strata.triple_points[0].q - (1 / 60, -3 / 32))) < 1e-12
    assert rep["conormal_residual"] <= 1e-12 and rep["defect"] == 0
    assert rep["orientation_mismatches"] == 0


@st.composite
def min_of_three(draw):
    T = np.array([draw(st.floats(-0.6, 0.6)), draw(st.floats(-0.6, 0.6))])
    # gradients in convex position, every gap below pi, so each plane owns a sector
    a0 = draw(st.floats(0, TWO_PI))
    g1 = draw(st.floats(math.pi / 3 + 0.3, math.pi - 0.3))
    g2 = draw(st.floats(max(0.6, math.pi + 0.3 - g1), min(math.pi - 0.3, TWO_PI - 0.6 - g1)))
    angles = [a0, a0 + g1, a0 + g1 + g2]
    radii = [draw(st.floats(0.5, 1.5)) for _ in range(3)]
    grads = [r * np.array([math.cos(a), math.sin(a)]) for r, a in zip(radii, angles)]
    c = draw(st.floats(-1, 1))
    return T, [(g, c - float(g @ T)) for g in grads]


@settings(max_examples=10)
@given(min_of_three())
def test_random_affine_arrangements(data):
    T, planes = data
    fld = synthetic_field([affine(g, b) for g, b in planes], 64)
    strata, jumps, cycle, rep = analyze_field(fld, 1e-12)
    assert rep["defect"] == 0 and rep["orientation_mismatches"] == 0
    # slopes up to 1.5 on a unit patch: a few ulps of the values
    assert rep["conormal_residual"] <= 1e-11
    assert rep["n_triple"] == 1 and rep["triangles"]["simplex"] == 1
    assert np.max(np.abs(strata.triple_points[0].q - T)) < 1e-12


def test_four_sheets_in_one_cell_rejected():
    h = 2.0 / 63
    T = np.array([-1 + 31.5 * h, -1 + 31.5 * h])  # cell centre
    # rotated off the diagonals so each corner of the cell takes a different sheet
    grads = [np.array([math.cos(0.3 + k * math.pi / 2), math.sin(0.3 + k * math.pi / 2)]) for k in range(4)]
    fld = synthetic_field([affine(g, -float(g @ T)) for g in grads], 64)
    with pytest.raises(DegenerateError):
        analyze_field(fld, 1e-12)


def test_vfold_is_conormal():
    strata, jumps, cycle, rep = analyze_field(vfold_field(64), 1e-12)
    assert rep["pass"] and rep["n_triple"] == 0 and len(strata.S1) == 1
    for j in jumps:
        # jump between the two sheets is (2, 0) or (-2, 0)
        assert abs(abs(j.jump[0]) - 2.0) < 1e-12 and abs(j.jump[1]) < 1e-12


def test_generating_family_selection_is_fibre_extremum():
    H = perturbed_product(eps=0.05)
    gf = GeneratingFamily(H.f, np.asarray(H.K))
    rng = np.random.default_rng(0)
    X = rng.uniform(0, TWO_PI, (6, 2))
    v, cov, seed = gf.select(X)
    Kinv = np.linalg.inv(np.asarray(H.K))
    u = np.linspace(-2.2, 2.2, 221)
    U = np.stack(np.meshgrid(u, u, indexing="ij"), -1).reshape(-1, 2)
    for k, x in enumerate(X):
        S = -H.f.value_grad(x + U)[0] + 0.5 * np.einsum("ni,ij,nj->n", U, Kinv, U)
        assert v[k] >= S.max() - 1e-9  # K < 0: the selector is the fibre maximum
        assert v[k] - S.max() < 1e-3


def test_indefinite_fibre_rejected():
    with pytest.raises(PreconditionError):
        GeneratingFamily(Fourier(((1, 0),), (0.5,), (0.0,)), np.diag([1.0, -1.0]))


def test_flowed_field_small_grid():
    fld = sample_selector_2d(perturbed_product(eps=0.05), 64)
    strata, jumps, cycle, rep = analyze_field(fld, 1e-2)
    assert rep["pass"], rep
    assert rep["defect"] == 0 and rep["n_triple"] == 2
    assert fld.diagnostics
    off = cycle.to_off().splitlines()
    nv, nf, _ = map(int, off[1].split())
    assert off[0] == "OFF" and len(off) == 2 + nv + nf
    assert nv == len(cycle.vertices)


def test_eps_sweep_rejects_product():
    rows = eps_sweep((0.0, 0.05), n=64)
    assert rows[0]["status"] == "non-generic"
    assert rows[1]["status"] == "ok" and rows[1]["defect"] == 0
