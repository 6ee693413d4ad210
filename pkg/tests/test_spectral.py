import math

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from lagspec.errors import StructureError
from lagspec.floer import FilteredChainComplex, Generator, build_complex, fiber
from lagspec.phase_space import BaseLift, Bump, FoldFamily, Fourier, Sum, TimeConstant, Zero
from lagspec.flow import hofer_norm
from lagspec.spectral import (
    analyze,
    reduce_complex,
    reparametrized,
    rho,
    spectral_number,
    spectral_numbers,
    verify_convergence,
    verify_duality,
    verify_invariance,
    verify_spectrality,
    verify_triangle,
)
from oracles import brute_min_max, gf_spectral
from reference import RHO_ONE, RHO_PT
from strategies import generic_fold


@st.composite
def two_term_complexes(draw):
    """Filtered Z/2 complexes with a differential from grading 1 to grading 0."""
    n1 = draw(st.integers(1, 5))
    n0 = draw(st.integers(1, 5))
    actions = draw(st.lists(st.integers(0, 10_000), min_size=n0 + n1, max_size=n0 + n1, unique=True))
    gens = [Generator(i, 0.0, 0.0, 0.0, a / 100.0, int(i < n1)) for i, a in enumerate(actions)]
    D = np.zeros((n0 + n1, n0 + n1), dtype=np.uint8)
    for x in range(n1):
        for y in range(n1, n0 + n1):
            if gens[y].action < gens[x].action:
                D[y, x] = draw(st.integers(0, 1))
    return FilteredChainComplex(gens, D)


@settings(suppress_health_check=[HealthCheck.filter_too_much, HealthCheck.too_slow], max_examples=40)
@given(two_term_complexes())
def test_reduction_matches_cycle_enumeration(cx):
    try:
        r1, rp = spectral_number(cx, "fundamental"), spectral_number(cx, "point")
    except StructureError:
        assume(False)
    assert r1 == brute_min_max(cx, "fundamental")
    assert rp == brute_min_max(cx, "point")


@given(two_term_complexes(), st.randoms())
def test_reduction_independent_of_input_order(cx, rnd):
    perm = list(range(cx.n))
    rnd.shuffle(perm)
    gens = [cx.generators[i] for i in perm]
    D = cx.differential[np.ix_(perm, perm)]
    other = FilteredChainComplex(gens, D)
    a, b = reduce_complex(cx), reduce_complex(other)
    ids = lambda red, c: sorted(c.generators[i].id for i in red.essential)
    assert ids(a, cx) == ids(b, other)


def test_figure1_spectral_numbers():
    from lagspec.scenarios import FIGURE1
    sn = spectral_numbers(FIGURE1)
    assert sn.rho_one == pytest.approx(RHO_ONE, abs=1e-8)
    assert sn.rho_pt == pytest.approx(RHO_PT, abs=1e-8)
    assert sn.gamma == pytest.approx(RHO_ONE - RHO_PT, abs=2e-8)


@settings(max_examples=5)
@given(generic_fold())
def test_spectral_numbers_match_generating_family(H):
    sn = spectral_numbers(H)
    o1, op, gap = gf_spectral(H)
    tol = 1e-4 * analyze(H).action_scale
    assert gap < 1e-3
    assert abs(sn.rho_one - o1) <= tol and abs(sn.rho_pt - op) <= tol
    assert sn.gamma >= -tol


def test_base_lift_closed_form():
    f = Fourier(((1,), (2,)), (0.6, 0.2), (0.0, 1.0))
    v = f.value_grad(np.linspace(0, 2 * math.pi, 1 << 16)[:, None])[0]
    sn = spectral_numbers(BaseLift(f))
    # graph of d(-f): rho(1) = max(-f), rho(pt) = min(-f)
    assert sn.rho_one == pytest.approx(-v.min(), abs=1e-6)
    assert sn.rho_pt == pytest.approx(-v.max(), abs=1e-6)
    assert sn.gamma > 1.0


def test_zero_section_scenarios_have_zero_gamma():
    assert spectral_numbers(Zero(1)).gamma == 0.0
    sn = spectral_numbers(TimeConstant((0.3, 0.2)))
    assert sn.gamma == 0.0 and sn.rho_one == pytest.approx(-0.4, abs=1e-12)


def test_fiber_spectral_number_lies_between(figure1_analysis):
    for q in (0.5, 2.0, 4.0):
        v = rho(figure1_analysis.hamiltonian, q=q)
        assert RHO_PT - 1e-8 <= v <= RHO_ONE + 1e-8


def test_unknown_class_rejected(figure1_analysis):
    with pytest.raises(StructureError):
        spectral_number(figure1_analysis.complex, "bogus")


def test_verification_harness_on_figure1(figure1):
    assert verify_spectrality(figure1)["pass"]
    assert verify_duality(figure1)["pass"]
    assert verify_invariance(figure1, reparametrized(figure1))["pass"]
    assert verify_triangle(figure1, BaseLift(Fourier(((1,),), (0.3,), (1.0,))))["pass"]


def test_hofer_stability(figure1):
    small = Bump(0.02, 1.0, 0.0, 0.8, 2.0)
    G = Sum((figure1, small), (1.0, 1.0))
    a, b = spectral_numbers(figure1), spectral_numbers(G)
    d = hofer_norm(small)
    tol = 1e-4 * analyze(figure1).action_scale
    assert abs(a.rho_one - b.rho_one) <= d + tol
    assert abs(a.rho_pt - b.rho_pt) <= d + tol


def test_convergence_certificate_on_non_flat_hamiltonian():
    H = Sum((Bump(0.3, 2.0, 0.0, 1.0, 1.5), BaseLift(Fourier(((1,),), (0.4,), (0.3,)), 3.0)), (1.0, 1.0))
    rep = verify_convergence(H, n=512, steps=32)
    assert rep["pass"], rep
