"""Basic phase function ``f_H`` on S^1 from per-fibre spectral numbers.

``f_H(q)`` is the spectral number of the unique class of the complex of
``(L_H, T*_q S^1)``.  The selected generator gives the covector
``sigma_H(q)`` and, by flowing back, the transfer map ``q -> phi^H(q)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from lagspec.errors import PreconditionError
from lagspec.floer import build_complex, fiber
from lagspec.flow import endpoint_map, hofer_norm, osc_c0
from lagspec.front import CurveSplines
from lagspec.phase_space import TWO_PI, Hamiltonian, Sum, transform
from lagspec.spectral import analyze, spectral_number, spectral_numbers


@dataclass
class SingularPoint:
    q: float
    value: float
    covector_minus: float
    covector_plus: float
    sheets: tuple
    bracketed: bool = True


@dataclass
class SelectorField:
    grid: np.ndarray
    f: np.ndarray
    branch_choice: np.ndarray
    sheet: list
    s_choice: np.ndarray
    sigma: np.ndarray
    sing_locus: list = field(default_factory=list)
    extra: list = field(default_factory=list)
    transfer: np.ndarray = None
    repaired: list = field(default_factory=list)
    hamiltonian: Hamiltonian = None
    tol: float = 0.0

    def _all_values(self):
        vals = list(self.f)
        vals.extend(v for _, v, _ in self.extra)
        vals.extend(sp.value for sp in self.sing_locus)
        return np.asarray(vals)

    def max(self) -> float:
        return float(np.max(self._all_values()))

    def min(self) -> float:
        return float(np.min(self._all_values()))

    def argmin(self) -> float:
        cands = [(v, q) for q, v in zip(self.grid, self.f)]
        cands += [(v, q) for q, v, _ in self.extra]
        cands += [(sp.value, sp.q) for sp in self.sing_locus]
        return float(min(cands)[1])

    def to_rows(self):
        return [(float(q), float(v), int(b), float(p))
                for q, v, b, p in zip(self.grid, self.f, self.branch_choice, self.sigma)]


def _select(front, q):
    cx = build_complex(front, fiber(q))
    val, gen = spectral_number(cx, "point", provenance=True)
    b = front.branches[gen.branch]
    s = gen.s + 1.0 if gen.s < b.s_start else gen.s  # lifted parameter, as used by the front's sheet keys
    Qs = float(front.splines.Q(s))
    k = int(round((Qs - q) / TWO_PI))
    return val, gen, (gen.branch, k)


def _same_sheet(a, b, seam, sa=None, sb=None, wrap=False):
    """Sheet keys ``(branch, lift)`` of neighbouring grid points describe the same sheet.

    The lift grows by one across the base seam and, on a wraparound branch,
    drops by one when the branch parameter wraps forward from 1 to 0.
    """
    if a[0] != b[0]:
        return False
    k = a[1] + (1 if seam else 0)
    if wrap and sa is not None:
        if sa - sb > 0.5:
            k -= 1
        elif sb - sa > 0.5:
            k += 1
    return k == b[1]


def basic_phase_function(H: Hamiltonian, grid_n: int = 256, polish: bool = True, **kw) -> SelectorField:
    """``f_H`` on a uniform grid of ``grid_n`` base points, with realising sheets and covectors."""
    if grid_n < 256:
        raise PreconditionError("grid_n must be at least 256")
    an = analyze(H, **kw)
    front = an.front
    grid = TWO_PI * np.arange(grid_n) / grid_n
    f = np.empty(grid_n)
    br = np.empty(grid_n, dtype=int)
    s_ch = np.empty(grid_n)
    sig = np.empty(grid_n)
    sheets = []
    for i, q in enumerate(grid):
        try:
            val, gen, key = _select(front, q)
        except PreconditionError:
            # non-transverse fibre: one-sided continuation from a nudged base point
            val, gen, key = _select(front, q + 1e-7)
        f[i], br[i], s_ch[i], sig[i] = val, gen.branch, gen.s, gen.p
        sheets.append(key)
    field_ = SelectorField(grid, f, br, sheets, s_ch, sig, hamiltonian=H, tol=1e-4 * an.action_scale)
    _repair(field_, front)
    field_.sing_locus = _singular(field_, front)
    if polish:
        field_.extra = _critical_extras(front)
    return field_


def _repair(field_, front):
    """Snap isolated one-cell sheet deviations (numerical ties) to the neighbouring sheet."""
    n = len(field_.grid)
    for i in range(n):
        a, b, c = field_.sheet[i - 1], field_.sheet[i], field_.sheet[(i + 1) % n]
        if a == c and b != a and i not in (0, n - 1):
            h = front.sheet_height(a, field_.grid[i])
            if np.isfinite(h) and abs(h - field_.f[i]) <= field_.tol:
                field_.repaired.append(float(field_.grid[i]))
                field_.sheet[i] = a


def _sheet_momentum(front, key, q):
    b = front.branches[key[0]]
    idx, s, k = b.params_at(np.array([float(q)]), with_lift=True)
    sel = k == key[1]
    return float(front.splines.P(s[sel])[0]) if np.any(sel) else math.nan


def _switches(front, a, sa, b, sb, lo, hi, wrap, depth=0):
    """Sheet switches of the selector on ``[lo, hi]`` going from sheet ``a`` to sheet ``b``.

    Keys are lifts relative to the unwrapped base coordinate.  When the two
    sheets do not both cover a bracketing interval (a short branch between
    nearby caustics sits inside the cell) the cell is split at the selector's
    own choice and both halves are searched.
    """
    if _same_sheet(a, b, False, sa, sb, wrap):
        return []

    def g(x):
        return front.sheet_height(a, x) - front.sheet_height(b, x)

    try:
        x = brentq(g, lo, hi, xtol=1e-14)
        return [(x, a, b, True)]
    except ValueError:
        pass
    mid = 0.5 * (lo + hi)
    if depth >= 40 or hi - lo < 1e-13:
        return [(mid, a, b, False)]
    _, gen, m = _select(front, mid)
    wm = front.branches[m[0]].start_kind == "wraparound"
    return (_switches(front, a, sa, m, gen.s, lo, mid, wrap, depth + 1)
            + _switches(front, m, gen.s, b, sb, mid, hi, wm, depth + 1))


def _singular(field_, front):
    """Points where the realising sheet switches, located on the height difference."""
    out = []
    n = len(field_.grid)
    for i in range(n):
        j = (i + 1) % n
        seam = j == 0
        a, b = field_.sheet[i], field_.sheet[j]
        wrap = front.branches[a[0]].start_kind == "wraparound"
        if _same_sheet(a, b, seam, field_.s_choice[i], field_.s_choice[j], wrap):
            continue
        lo = field_.grid[i]
        hi = field_.grid[j] + (TWO_PI if seam else 0.0)
        bb = (b[0], b[1] - 1) if seam else b
        for x, ka, kb, bracketed in _switches(front, a, field_.s_choice[i], bb, field_.s_choice[j],
                                                lo, hi, wrap):
            val = front.sheet_height(ka, x)
            key_b = (kb[0], kb[1] + 1) if seam and kb == bb else kb
            out.append(SingularPoint(float(x % TWO_PI), float(val), _sheet_momentum(front, ka, x),
                                     _sheet_momentum(front, kb, x), (ka, key_b), bracketed))
    return out


def _critical_extras(front):
    """Zero-section crossings realised by the selector, with their exact actions."""
    extra = []
    for z in front.zero_crossings:
        try:
            val, gen, _ = _select(front, z.q)
        except PreconditionError:
            continue
        ds = abs(((gen.s - z.s) + 0.5) % 1.0 - 0.5)
        if ds < 1e-4:
            extra.append((float(z.q), float(z.action), "critical"))
    return extra


def singular_locus(field_: SelectorField):
    """Singular points with their two one-sided covectors."""
    return [(sp.q, (sp.covector_minus, sp.covector_plus)) for sp in field_.sing_locus]


def transfer_map(H: Hamiltonian, field_: SelectorField, steps: int = 128, check=True):
    """``phi^H(q) = pi((phi_H^1)^{-1}(q, sigma_H(q)))`` on the grid; returns a report."""
    q = field_.grid
    Q0, P0, A = endpoint_map(H, q, field_.sigma, steps, forward=False, richardson=True)
    base = Q0[:, 0]
    field_.transfer = np.mod(base, TWO_PI)
    report = {"check": "transfer", "pass": True}
    if not check:
        return report
    osc = osc_c0(H) if H.dim == 1 else 0.0
    d = np.abs(np.mod(base - q + math.pi, TWO_PI) - math.pi)
    fibre = np.abs(P0[:, 0])
    start = np.abs(np.mod(base - TWO_PI * field_.s_choice + math.pi, TWO_PI) - math.pi)
    # chord action from phi^H(q) equals f_H(q)
    act = np.abs(-A - field_.f)
    tol = field_.tol
    report.update({
        "max_displacement": float(d.max()), "bound": 2.0 * osc,
        "max_off_zero_section": float(fibre.max()),
        "max_start_mismatch": float(start.max()),
        "max_action_mismatch": float(act.max()), "tol": tol,
    })
    report["pass"] = bool(d.max() <= 2.0 * osc + tol and fibre.max() <= tol
                          and start.max() <= 1e-3 and act.max() <= tol)
    return report


def verify_selector_axioms(H: Hamiltonian, field_: SelectorField):
    an = analyze(H)
    sp = CurveSplines(an.curve)
    m = 32 * an.curve.n
    s = np.arange(m) / m
    Q = np.mod(sp.Q(s), TWO_PI)
    P = sp.P(s)
    dist = []
    for q, p in zip(field_.grid, field_.sigma):
        dq = np.mod(q - Q + math.pi, TWO_PI) - math.pi
        dist.append(float(np.min(np.hypot(dq, P - p))))
    geo_tol = 10.0 * float(np.max(np.hypot(np.diff(sp.Q(s)), np.diff(P))))
    # sigma is read off the spline, so bound it by the dense spline maximum
    pmax = float(np.max(np.abs(P)))
    smax = float(np.max(np.abs(field_.sigma)))
    items = [
        {"axiom": "on_curve", "residual": max(dist), "tol": geo_tol, "pass": max(dist) <= geo_tol},
        {"axiom": "covector_bound", "lhs": smax, "rhs": pmax, "pass": smax <= pmax * (1 + 1e-6)},
    ]
    return {"check": "selector_axioms", "pass": all(i["pass"] for i in items), "items": items}


def verify_shrinking(H: Hamiltonian, eps_list=(1.0, 0.5, 0.25, 0.125), grid_n=256):
    """``sup |sigma|`` for ``eps * H`` decreases to zero with ``eps``."""
    sups = []
    for e in eps_list:
        fld = basic_phase_function(Sum((H,), (float(e),)), grid_n, polish=False)
        sups.append(float(np.max(np.abs(fld.sigma))))
    mono = all(b <= a + 1e-9 for a, b in zip(sups, sups[1:]))
    return {"check": "shrinking", "eps": list(eps_list), "sup_sigma": sups, "pass": mono}


def verify_lipschitz(H: Hamiltonian, K: Hamiltonian, grid_n: int = 256, rel_tol=1e-3, floor=None):
    fh = basic_phase_function(H, grid_n)
    fk = basic_phase_function(K, grid_n)
    gap = float(np.max(np.abs(fh.f - fk.f)))
    dist = hofer_norm(Sum((H, K), (1.0, -1.0)))
    if floor is None:
        floor = 1e-6 * max(analyze(H).action_scale, analyze(K).action_scale)
    tol = rel_tol * dist + floor
    return {"check": "lipschitz", "gap": gap, "hofer": dist, "tol": tol, "pass": gap <= dist + tol}


def verify_comparison(H: Hamiltonian, field_: SelectorField = None):
    field_ = basic_phase_function(H) if field_ is None else field_
    sn = spectral_numbers(H)
    tol = field_.tol
    lo_gap = field_.min() - sn.rho_pt
    hi_gap = sn.rho_one - field_.max()
    return {"check": "comparison", "rho_pt": sn.rho_pt, "min_f": field_.min(), "max_f": field_.max(),
            "rho_one": sn.rho_one, "gap_low": lo_gap, "gap_high": hi_gap, "tol": tol,
            "pass": lo_gap >= -tol and hi_gap >= -tol}


def verify_reflection(H: Hamiltonian, grid_n: int = 256):
    a = basic_phase_function(H, grid_n)
    b = basic_phase_function(transform(H, "reflect"), grid_n)
    r = float(np.max(np.abs(a.f + b.f)))
    return {"check": "reflection", "residual": r, "tol": a.tol, "pass": r <= a.tol}
