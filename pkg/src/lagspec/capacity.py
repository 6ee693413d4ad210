"""Capacity bound for Hamiltonians supported away from a tube over an arc ``B``.

``f`` is a Morse function with critical points inside ``B``; its constant
``C = min(min_{N \\ B} |df|, d(N \\ B, Crit f))`` controls how far
``phi_H^1`` may move the zero section before the intersections of
``graph(-df)`` with ``o_N`` change.

When ``H`` is supported away from the tube ``T`` over ``B`` its time-one curve
contains ``o_B`` and meets ``o_N`` degenerately, so ``gamma(H)`` is computed
through ``H # (delta f o pi)``: by the triangle inequality

    rho(H; a) in [rho(H # delta f; a) + delta min f, rho(H # delta f; a) + delta max f],

hence ``gamma(H)`` lies within ``2 delta osc f`` of ``gamma(H # delta f)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from lagspec.errors import PreconditionError
from lagspec.flow import endpoint_map, osc_c0
from lagspec.phase_space import TWO_PI, BaseLift, Bump, Hamiltonian, Sum, SlopeBump, compose_product, wrap_signed
from lagspec.spectral import analyze, spectral_numbers


def _in_arc(q, B):
    lo, hi = B
    x = np.mod(np.asarray(q) - lo, TWO_PI)
    return x <= (hi - lo)


def _osc(f, n=8192):
    q = (TWO_PI * np.arange(n) / n)[:, None]
    v = f.value_grad(q)[0]
    crit = f.critical_points()
    if len(crit):
        v = np.concatenate([v, f.value_grad(crit[:, None])[0]])
    return float(v.max() - v.min()), float(v.min()), float(v.max())


# smallest arc B, in base-grid cells, the continuity experiment accepts
MIN_ARC_CELLS = 16


def constant_C(f, B, T_radius: float = None, n: int = 8192) -> float:
    """``C = min(min over N \\ B of |df|, distance from Crit f to N \\ B)``."""
    lo, hi = B
    if not (0 < hi - lo < TWO_PI):
        raise PreconditionError("B must be a proper closed arc given as (lo, hi) with lo < hi")
    crit = f.critical_points()
    inside = _in_arc(crit, B)
    interior = np.minimum(np.mod(crit - lo, TWO_PI), np.mod(hi - crit, TWO_PI))
    if len(crit) == 0 or not np.all(inside & (interior > 0)):
        raise PreconditionError("critical points of f must lie in the interior of B")
    # complement arc [hi, lo + 2 pi]
    L = TWO_PI - (hi - lo)
    x = hi + L * np.arange(n + 1) / n
    g = np.abs(f.value_grad(x[:, None])[1][:, 0])
    k = int(np.argmin(g))
    a, b = x[max(k - 1, 0)], x[min(k + 1, n)]
    res = minimize_scalar(lambda t: abs(f.value_grad(np.array([[t]]))[1][0, 0]), bounds=(a, b),
                          method="bounded", options={"xatol": 1e-13})
    slope = min(float(g.min()), float(res.fun))
    if slope <= 1e-12:
        raise PreconditionError("df vanishes on N \\ B, so C would be 0")
    dist = float(np.min(interior))
    if T_radius is not None:
        xb = lo + (hi - lo) * np.arange(n + 1) / n
        if float(np.max(np.abs(f.value_grad(xb[:, None])[1]))) > T_radius:
            raise PreconditionError("graph(df|B) leaves the tube T")
    return min(slope, dist)


@dataclass
class CapacityScenario:
    f: object
    B: tuple
    T_radius: float
    H: Hamiltonian
    C: float = field(default=None)

    def __post_init__(self):
        if self.C is None:
            self.C = constant_C(self.f, self.B, self.T_radius)
        _check_support(self.H, self.B, self.T_radius)

    @property
    def osc_f(self):
        return _osc(self.f)[0]

    @property
    def ratio_bound(self):
        return 2.0 * self.osc_f / self.C


def _bumps(H):
    if isinstance(H, Bump):
        return [H]
    if isinstance(H, Sum):
        return [b for t in H.terms for b in _bumps(t)]
    raise PreconditionError("B-supported Hamiltonians are built from bumps")


def _check_support(H, B, T_radius):
    """Every bump's support must miss the tube ``T = {q in B, |p| <= T_radius}``."""
    lo, hi = B
    for b in _bumps(H):
        q_lo, q_hi = b.q_support()
        # arcs [q_lo, q_hi] and [lo, hi] on the circle
        c1, r1 = 0.5 * (q_lo + q_hi), 0.5 * (q_hi - q_lo)
        c2, r2 = 0.5 * (lo + hi), 0.5 * (hi - lo)
        q_disjoint = abs(float(wrap_signed(c1 - c2))) >= r1 + r2
        p_disjoint = abs(b.p0) - b.wp >= T_radius
        if not (q_disjoint or p_disjoint):
            raise PreconditionError("Hamiltonian support meets the tube over B")


def b_supported_bump(B, amplitude, width_fraction=0.6, wp=1.0, power=4) -> Bump:
    """Bump centred in ``N \\ B`` whose base support fills ``width_fraction`` of the complement."""
    lo, hi = B
    L = TWO_PI - (hi - lo)
    center = hi + 0.5 * L
    return Bump(float(amplitude), float(center % TWO_PI), 0.0, 0.5 * width_fraction * L, wp, power)


def verify_tube_identity(H, B, T_radius, n=64, steps=64):
    lo, hi = B
    q = lo + (hi - lo) * (np.arange(n) + 0.5) / n
    p = np.linspace(-T_radius, T_radius, 9)
    qq, pp = np.meshgrid(q, p, indexing="ij")
    Q, P, _ = endpoint_map(H, qq.ravel(), pp.ravel(), steps)
    d = float(np.max(np.abs(Q[:, 0] - qq.ravel()) + np.abs(P[:, 0] - pp.ravel())))
    return {"check": "tube_identity", "max_displacement": d, "pass": d == 0.0}


def _perturbed(scn: CapacityScenario, delta):
    return compose_product(scn.H, BaseLift(scn.f.scaled(delta) if hasattr(scn.f, "scaled") else
                                           _Scaled(scn.f, delta), radius=4.0))


class _Scaled:
    def __init__(self, f, c):
        self.f, self.c, self.dim = f, c, f.dim

    def value_grad(self, q):
        v, g = self.f.value_grad(q)
        return self.c * v, self.c * g

    def to_descriptor(self):
        d = self.f.to_descriptor()
        d["scale"] = d.get("scale", 1.0) * self.c
        return d


def estimate_gamma(scn: CapacityScenario, delta: float, n: int = 1024, steps: int = 128):
    """``gamma(H)`` from the non-degenerate perturbation ``H # (delta f o pi)`` with its bracket radius."""
    G = _perturbed(scn, delta)
    sn = spectral_numbers(G, n=n, steps=steps)
    osc_f, fmin, fmax = _osc(scn.f)
    radius = 2.0 * delta * osc_f
    return {"gamma": sn.gamma, "bracket": radius,
            "rho_one": (sn.rho_one + delta * fmin, sn.rho_one + delta * fmax),
            "rho_pt": (sn.rho_pt + delta * fmin, sn.rho_pt + delta * fmax),
            "spectrum": sn.spectrum, "delta": delta}


def verify_shift_lemma(scn: CapacityScenario, delta: float = None, margin: float = 0.9,
                       n: int = 1024, steps: int = 128):
    """``L_{delta f} cap o_N = phi_H^1(L_{delta f}) cap o_N`` when ``osc_c0(H) < C_{delta f}``.

    By default ``delta`` puts ``osc_c0(H)`` at ``margin`` times ``C_{delta f} = delta C``.
    """
    osc = osc_c0(scn.H)
    if osc == 0.0 and delta is None:
        delta = 1e-3
    if delta is None:
        delta = osc / (margin * scn.C)
    C_delta = constant_C(_Scaled(scn.f, delta) if not hasattr(scn.f, "scaled") else scn.f.scaled(delta),
                         scn.B, None)
    if not osc < C_delta:
        return {"check": "shift_lemma", "skipped": True, "osc_c0": osc, "C_delta": C_delta, "pass": True}
    G = _perturbed(scn, delta)
    an = analyze(G, n=n, steps=steps)
    lhs = np.sort(np.mod(scn.f.critical_points(), TWO_PI))
    rhs = np.sort([z.q for z in an.front.zero_crossings])
    h = TWO_PI / n
    same = len(lhs) == len(rhs) and bool(np.all(np.floor(lhs / h) == np.floor(rhs / h)))
    dev = float(np.max(np.abs(wrap_signed(lhs - rhs)))) if same else math.inf
    # chords of H from the intersection points are constant
    pts = np.array(rhs)
    Q1, P1, A1 = endpoint_map(scn.H, pts, np.zeros_like(pts), steps)
    const = float(np.max(np.abs(Q1[:, 0] - pts) + np.abs(P1[:, 0]) + np.abs(A1))) if len(pts) else 0.0
    return {"check": "shift_lemma", "skipped": False, "delta": delta, "osc_c0": osc, "C_delta": C_delta,
            "crit_f": lhs.tolist(), "intersections": [float(x) for x in rhs], "max_deviation": dev,
            "chord_motion": const, "pass": bool(same and const == 0.0)}


def capacity_bound(scn: CapacityScenario, delta_rel: float = 1e-4, n: int = 1024, steps: int = 128, osc=None):
    """``gamma(H) / osc_c0(H) <= 2 osc f / C`` with ``gamma`` from :func:`estimate_gamma`."""
    osc = osc_c0(scn.H) if osc is None else osc
    if osc == 0.0:
        return {"check": "capacity", "skipped": True, "reason": "osc_c0 = 0", "pass": True}
    if not osc < scn.C:
        return {"check": "capacity", "skipped": True, "reason": "osc_c0 >= C", "pass": True}
    amp = max(abs(b.amplitude) for b in _bumps(scn.H))
    delta = delta_rel * amp / scn.osc_f
    est = estimate_gamma(scn, delta, n, steps)
    gamma_upper = est["gamma"] + est["bracket"]
    ratio = est["gamma"] / osc
    bound = scn.ratio_bound
    tol = est["bracket"] / osc
    # two-step chain for the rescaled function: gamma(H # (lambda f)) <= 2 osc(lambda f)
    lam = osc / scn.C
    chain = estimate_gamma(scn, lam * 1.05, n, steps)
    return {"check": "capacity", "skipped": False, "osc_c0": osc, "gamma": est["gamma"],
            "gamma_bracket": est["bracket"], "gamma_upper": gamma_upper, "ratio": ratio,
            "bound": bound, "tol": tol, "C": scn.C, "osc_f": scn.osc_f,
            "chain_gamma": chain["gamma"], "chain_bound": 2.0 * lam * 1.05 * scn.osc_f,
            "pass": bool(ratio <= bound + tol and chain["gamma"] <= 2.0 * lam * 1.05 * scn.osc_f + tol * osc)}


def continuity_experiment(f, B, T_radius, amplitudes, width_fraction=0.6, wp=1.0, n=1024, steps=128):
    """Rows ``(amplitude, osc_c0, gamma, ratio, bound)`` for the bump family ``eps * bump``."""
    if B[1] - B[0] < MIN_ARC_CELLS * TWO_PI / n:
        raise PreconditionError(f"B spans fewer than {MIN_ARC_CELLS} cells of the {n}-point base grid")
    rows = []
    for a in amplitudes:
        if a == 0.0:
            rows.append({"amplitude": 0.0, "osc_c0": 0.0, "gamma": 0.0, "ratio": 0.0,
                         "bound": None, "pass": True, "flag": ""})
            continue
        H = b_supported_bump(B, a, width_fraction, wp)
        scn = CapacityScenario(f, B, T_radius, H)
        rep = capacity_bound(scn, n=n, steps=steps)
        if rep["skipped"]:
            rows.append({"amplitude": a, "osc_c0": None, "gamma": None, "ratio": None,
                         "bound": scn.ratio_bound, "pass": False, "flag": rep["reason"]})
            continue
        rows.append({"amplitude": a, "osc_c0": rep["osc_c0"], "gamma": rep["gamma"],
                     "ratio": rep["ratio"], "bound": rep["bound"], "tol": rep["tol"],
                     "pass": rep["pass"], "flag": ""})
    gammas = [r["gamma"] for r in rows if r["gamma"] is not None and r["amplitude"] > 0]
    mono = all(b <= a + 1e-12 for a, b in zip(gammas, gammas[1:]))
    return {"rows": rows, "monotone": mono,
            "final_over_initial": (gammas[-1] / gammas[0]) if len(gammas) > 1 and gammas[0] else None}


def default_scenario(amplitude=0.05, B=(2.0, 4.0), slope=0.1, T_radius=1.5):
    """Slope-bump ``f`` with its critical points near the middle of ``B``."""
    lo, hi = B
    f = SlopeBump(slope, 0.45 * (hi - lo), 0.5 * (lo + hi))
    return f, CapacityScenario(f, B, T_radius, b_supported_bump(B, amplitude))
