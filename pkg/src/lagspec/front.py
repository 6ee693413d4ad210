"""Wave fronts of time-one curves on T*S^1.

A closed curve ``s -> (Q(s), P(s))`` with action ``h(s)`` is cut at its
caustics (zeros of ``dQ/ds``) into branches on which ``Q`` is monotone, so
that each branch is the graph ``p = p_b(q)`` of a local generating function
``h_b`` with ``dh_b/dq = p_b``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from lagspec.errors import DegenerateError, ResolutionError
from lagspec.flow import LagrangianCurve, endpoint_map
from lagspec.phase_space import TWO_PI


@dataclass
class CurveSplines:
    """Periodic cubic splines of ``Q - 2 pi s``, ``P`` and ``h`` over the parameter circle."""

    curve: LagrangianCurve

    def __post_init__(self):
        c = self.curve
        ss = np.append(c.s, c.s[0] + 1.0)
        self._q = CubicSpline(ss, np.append(c.Q - TWO_PI * c.s, c.Q[0] - TWO_PI * c.s[0]), bc_type="periodic")
        self._p = CubicSpline(ss, np.append(c.P, c.P[0]), bc_type="periodic")
        self._h = CubicSpline(ss, np.append(c.h, c.h[0]), bc_type="periodic")
        self._dq = self._q.derivative()
        self._dp = self._p.derivative()

    @staticmethod
    def _frac(s):
        s = np.asarray(s, dtype=float)
        return s - np.floor(s)

    def Q(self, s):
        s = np.asarray(s, dtype=float)
        return self._q(self._frac(s)) + TWO_PI * s

    def P(self, s):
        return self._p(self._frac(s))

    def h(self, s):
        return self._h(self._frac(s))

    def dQ(self, s):
        return self._dq(self._frac(s)) + TWO_PI

    def dP(self, s):
        return self._dp(self._frac(s))

    def caustic_roots(self):
        r = self._dq.solve(-TWO_PI, extrapolate=False)
        r = np.asarray(r)
        return np.sort(r[(r >= self.curve.s[0]) & (r < self.curve.s[0] + 1.0)] % 1.0)

    def zero_roots(self):
        r = np.asarray(self._p.solve(0.0, extrapolate=False))
        return np.unique(np.sort(r[(r >= self.curve.s[0]) & (r < self.curve.s[0] + 1.0)] % 1.0))


@dataclass
class Branch:
    """Sub-arc ``[s_start, s_end]`` of the parameter circle on which ``Q`` is monotone."""

    id: int
    s_start: float
    s_end: float
    orientation: int
    start_kind: str
    end_kind: str
    splines: CurveSplines = field(repr=False)
    _dense: tuple = field(default=None, repr=False)

    @property
    def q_range(self):
        a = float(self.splines.Q(self.s_start))
        b = float(self.splines.Q(self.s_end))
        return (a, b) if a <= b else (b, a)

    @property
    def interval(self):
        """Base interval ``[q_a, q_b]`` as unwrapped angles."""
        return self.q_range

    def _table(self):
        if self._dense is None:
            m = max(64, int(math.ceil((self.s_end - self.s_start) * 8192)))
            s = np.linspace(self.s_start, self.s_end, m)
            Q = self.splines.Q(s)
            if self.orientation < 0:
                s, Q = s[::-1], Q[::-1]
            Q = np.maximum.accumulate(Q)
            self._dense = (s, Q)
        return self._dense

    def params_at(self, q, with_lift=False):
        """Parameters ``s`` on this branch with ``Q(s) = q + 2 pi k`` for some integer ``k``.

        ``q`` is an array; returns ``(idx, s)`` with ``idx`` indexing into ``q``
        (and the lift ``k`` per hit when ``with_lift`` is set).
        """
        q = np.atleast_1d(np.asarray(q, dtype=float))
        lo, hi = self.q_range
        s_tab, Q_tab = self._table()
        out_i, out_s, out_k = [], [], []
        kmin = int(math.floor((lo - q.max()) / TWO_PI)) - 1
        kmax = int(math.ceil((hi - q.min()) / TWO_PI)) + 1
        for k in range(kmin, kmax + 1):
            target = q + TWO_PI * k
            # half-open on the larger end so that a wraparound branch is not counted twice
            inside = (target >= lo) & (target < hi) if self.start_kind == "wraparound" else \
                (target > lo) & (target < hi)
            if not np.any(inside):
                continue
            tg = target[inside]
            s = np.interp(tg, Q_tab, s_tab)
            for _ in range(3):
                dq = self.splines.dQ(s)
                step = (self.splines.Q(s) - tg) / np.where(np.abs(dq) > 1e-14, dq, 1e-14)
                s = np.clip(s - step, self.s_start, self.s_end)
            out_i.append(np.nonzero(inside)[0])
            out_s.append(s)
            out_k.append(np.full(len(s), k))
        if not out_i:
            empty = (np.zeros(0, dtype=int), np.zeros(0))
            return empty + (np.zeros(0, dtype=int),) if with_lift else empty
        res = (np.concatenate(out_i), np.concatenate(out_s))
        return res + (np.concatenate(out_k),) if with_lift else res

    def height(self, q):
        """``h_b`` at base points ``q``; NaN where the branch does not cover ``q``.

        A branch spanning more than one period covers some ``q`` twice and
        only one of those values is returned; use :meth:`WaveFront.sheet_heights`.
        """
        return self._sample(q, self.splines.h)

    def momentum(self, q):
        return self._sample(q, self.splines.P)

    def _sample(self, q, fun):
        q = np.atleast_1d(np.asarray(q, dtype=float))
        out = np.full(q.shape, np.nan)
        idx, s = self.params_at(q)
        out[idx] = fun(s)
        return out

    def covers(self, q):
        lo, hi = self.q_range
        k = math.ceil((lo - q) / TWO_PI)
        return q + TWO_PI * k < hi


@dataclass
class Caustic:
    s: float
    q: float
    p: float
    h: float
    branches: tuple


@dataclass
class MaxwellCrossing:
    q: float
    branches: tuple
    height: float
    params: tuple


@dataclass
class ZeroCrossing:
    s: float
    q: float
    action: float
    branch: int
    dQ: float
    dP: float
    transverse: bool = True


@dataclass
class WaveFront:
    curve: LagrangianCurve
    splines: CurveSplines
    branches: list
    caustics: list
    maxwell_crossings: list
    zero_crossings: list
    nongeneric: list = field(default_factory=list)
    tol: float = 1e-8

    def sheets_at(self, q):
        """All ``(branch id, s)`` with ``Q(s) = q mod 2 pi`` for a scalar ``q``."""
        return [(b, s) for b, s, _ in self.sheets_with_lift(q)]

    def sheets_with_lift(self, q):
        """All ``(branch id, s, k)`` with ``Q(s) = q + 2 pi k`` for a scalar ``q``."""
        res = []
        for b in self.branches:
            _, s, k = b.params_at(np.array([float(q)]), with_lift=True)
            res.extend((b.id, float(x), int(kk)) for x, kk in zip(s, k))
        return res

    def sheet_heights(self, q):
        """Heights keyed by sheet ``(branch id, lift)`` on the base points ``q`` (NaN if absent)."""
        q = np.atleast_1d(np.asarray(q, dtype=float))
        out = {}
        for b in self.branches:
            idx, s, k = b.params_at(q, with_lift=True)
            for kk in np.unique(k):
                sel = k == kk
                arr = np.full(q.shape, np.nan)
                arr[idx[sel]] = self.splines.h(s[sel])
                out[(b.id, int(kk))] = arr
        return out

    def sheet_height(self, key, q):
        b = self.branches[key[0]]
        idx, s, k = b.params_at(np.array([float(q)]), with_lift=True)
        sel = k == key[1]
        return float(self.splines.h(s[sel])[0]) if np.any(sel) else math.nan

    def branch_of(self, s):
        s = float(s) % 1.0
        for b in self.branches:
            if b.s_start <= s <= b.s_end or b.s_start <= s + 1.0 <= b.s_end:
                return b.id
        return self.branches[-1].id

    def heights_at(self, q):
        """Array ``(n_sheets, len(q))`` of sheet heights (NaN where a sheet does not cover ``q``)."""
        sh = self.sheet_heights(q)
        return np.stack([sh[k] for k in sorted(sh)])

    def to_rows(self, n=512):
        rows = []
        for b in self.branches:
            s = np.linspace(b.s_start, b.s_end, max(8, int(n * (b.s_end - b.s_start))))
            for x in s:
                rows.append((b.id, float(self.splines.Q(x)), float(self.splines.h(x)),
                             float(self.splines.P(x))))
        return rows


def _bracket(sign, i, n):
    return sign[i] != sign[(i + 1) % n]


def decompose_front(curve: LagrangianCurve) -> WaveFront:
    """Branches, caustics, Maxwell crossings and zero-section crossings of a curve."""
    sp = CurveSplines(curve)
    n = curve.n
    s = curve.s
    dQ = sp.dQ(s)
    sign = np.sign(dQ)
    sample_changes = int(np.sum(sign != np.roll(sign, -1)))
    roots = sp.caustic_roots()
    # keep roots where dQ/ds really changes sign
    if len(roots):
        eps = 1e-7
        keep = np.sign(sp.dQ(roots - eps)) != np.sign(sp.dQ(roots + eps))
        roots = roots[keep]
    if len(roots) != sample_changes:
        raise ResolutionError(
            f"fold not resolved: {sample_changes} sign changes of dQ/ds but {len(roots)} bracketed roots")
    if len(roots) % 2:
        raise ResolutionError("odd number of caustics on a closed curve")

    scale = max(1.0, float(np.ptp(curve.h)))
    tol = 1e-8 * scale
    branches: list = []
    caustics: list = []
    if len(roots) == 0:
        branches.append(Branch(0, float(s[0]), float(s[0]) + 1.0, int(np.sign(np.mean(dQ))),
                               "wraparound", "wraparound", sp))
    else:
        m = len(roots)
        for i in range(m):
            a = roots[i]
            b = roots[(i + 1) % m] + (1.0 if i == m - 1 else 0.0)
            mid = 0.5 * (a + b)
            branches.append(Branch(i, float(a), float(b), int(np.sign(sp.dQ(mid))), "caustic", "caustic", sp))
        for i in range(m):
            r = roots[i]
            caustics.append(Caustic(float(r), float(sp.Q(r) % TWO_PI), float(sp.P(r)), float(sp.h(r)),
                                    ((i - 1) % m, i)))

    clean = float(np.max(np.abs(curve.P))) == 0.0
    zeros = [] if clean else _zero_crossings(curve, sp, branches)
    front = WaveFront(curve, sp, branches, caustics, [], zeros, tol=tol)
    front.maxwell_crossings = _maxwell(front)
    return front


def _zero_crossings(curve, sp, branches):
    roots = sp.zero_roots()
    if len(roots) == 0:
        return []
    if curve.hamiltonian is not None:
        # one Newton correction with exact flows; the action is stationary to first order
        d = 1e-5
        pts = np.concatenate([roots - d, roots, roots + d])
        Q, P, A = endpoint_map(curve.hamiltonian, TWO_PI * pts, np.zeros_like(pts),
                               curve.steps, True, curve.richardson)
        m = len(roots)
        Pm, P0, Pp = P[:m, 0], P[m:2 * m, 0], P[2 * m:, 0]
        Qm, Q0, Qp = Q[:m, 0], Q[m:2 * m, 0], Q[2 * m:, 0]
        Am, A0, Ap = A[:m], A[m:2 * m], A[2 * m:]
        dP = (Pp - Pm) / (2 * d)
        dQ = (Qp - Qm) / (2 * d)
        dA = (Ap - Am) / (2 * d)
        ddA = (Ap - 2 * A0 + Am) / d**2
        ds = -P0 / np.where(dP != 0, dP, 1e-300)
        s_new = roots + ds
        acts = A0 + dA * ds + 0.5 * ddA * ds**2
        qs = Q0 + dQ * ds
    else:
        s_new = roots
        acts = sp.h(roots)
        qs = sp.Q(roots)
        dP = sp.dP(roots)
        dQ = sp.dQ(roots)
    scale = max(np.max(np.abs(curve.dP)), 1e-12)
    out = []
    for k in range(len(roots)):
        transverse = abs(dP[k]) > 1e-6 * scale
        if not transverse:
            warnings.warn(f"tangential zero-section intersection near q={qs[k] % TWO_PI:.6f}",
                          RuntimeWarning, stacklevel=3)
        br = _branch_for(branches, s_new[k])
        out.append(ZeroCrossing(float(s_new[k] % 1.0), float(qs[k] % TWO_PI), float(acts[k]), br,
                                float(dQ[k]), float(dP[k]), bool(transverse)))
    return out


def _branch_for(branches, s):
    s = s % 1.0
    for b in branches:
        if b.s_start <= s < b.s_end or b.s_start <= s + 1.0 < b.s_end:
            return b.id
    return branches[-1].id


def _maxwell(front: WaveFront, n=2048):
    """Equal-height crossings between pairs of sheets, by bisection on the height difference.

    Sheets are ``(branch, lift)`` pairs; a branch longer than one turn carries
    several sheets over the same base point, which may cross each other.  The
    base circle is scanned on ``q in (0, 2 pi)``; across the seam a sheet
    ``(b, k)`` continues as ``(b, k + 1)``.
    """
    q = TWO_PI * (np.arange(n) + 0.5) / n
    H = front.sheet_heights(q)
    keys = sorted(H)
    out = []

    def diff(ka, kb, x):
        return front.sheet_height(ka, x) - front.sheet_height(kb, x)

    for a in range(len(keys)):
        for b in range(a + 1, len(keys)):
            ka, kb = keys[a], keys[b]
            d = H[ka] - H[kb]
            cells = [(k, ka, kb, q[k], q[k + 1], d[k], d[k + 1]) for k in range(n - 1)]
            wa = (ka[0], ka[1] + 1)
            wb = (kb[0], kb[1] + 1)
            if wa in H and wb in H:
                cells.append((n - 1, (ka, wa), (kb, wb), q[-1], q[0] + TWO_PI,
                              d[-1], H[wa][0] - H[wb][0]))
            for k, sa, sb, lo, hi, d0, d1 in cells:
                if not (np.isfinite(d0) and np.isfinite(d1)) or d0 == 0 or np.sign(d0) == np.sign(d1):
                    continue
                if isinstance(sa[0], tuple):
                    def g(x, sa=sa, sb=sb):
                        ia, ib = (sa[0], sb[0]) if x < TWO_PI else (sa[1], sb[1])
                        return diff(ia, ib, x % TWO_PI)
                    pair = (sa[0], sb[0])
                else:
                    def g(x, sa=sa, sb=sb):
                        return diff(sa, sb, x)
                    pair = (sa, sb)
                try:
                    x = brentq(g, lo, hi, xtol=1e-14)
                except ValueError:
                    continue
                if not np.isfinite(g(x)):
                    continue
                xs = x % TWO_PI
                if isinstance(sa[0], tuple) and x >= TWO_PI:
                    pair = (sa[1], sb[1])
                hx = front.sheet_height(pair[0], xs)
                out.append(MaxwellCrossing(float(xs), pair, float(hx), ()))
    for mc in out:
        hs = front.sheet_heights(np.array([mc.q]))
        others = [v[0] for key, v in hs.items() if key not in mc.branches and np.isfinite(v[0])]
        if any(abs(v - mc.height) < 1e3 * front.tol for v in others):
            front.nongeneric.append(("triple_tie", mc.q))
    out.sort(key=lambda m: m.q)
    return out


@dataclass
class ActionSpectrum:
    values: np.ndarray
    multiplicity: np.ndarray
    merged: list

    def contains(self, a, tol):
        return bool(np.any(np.abs(self.values - a) <= tol))

    def distance(self, a):
        return float(np.min(np.abs(self.values - a)))


def action_spectrum(front: WaveFront, tol=None) -> ActionSpectrum:
    """Sorted actions of the zero-section crossings; values closer than ``tol`` are merged."""
    tol = front.tol if tol is None else tol
    a = np.sort([z.action for z in front.zero_crossings])
    vals, mult, merged = [], [], []
    for x in a:
        if vals and abs(x - vals[-1]) <= tol:
            mult[-1] += 1
            merged.append(float(x))
        else:
            vals.append(float(x))
            mult.append(1)
    return ActionSpectrum(np.asarray(vals), np.asarray(mult), merged)


def hausdorff_to_zero_section(curve: LagrangianCurve, refine: int = 8) -> float:
    """Symmetric Hausdorff distance between the curve and ``o_N`` in the flat product metric."""
    sp = CurveSplines(curve)
    m = refine * curve.n
    s = np.arange(m) / m
    Q = sp.Q(s)
    P = sp.P(s)
    d1 = float(np.max(np.abs(P)))
    qg = TWO_PI * np.arange(m) / m
    best = np.full(m, np.inf)
    for start in range(0, m, 512):
        blk = qg[start:start + 512]
        dq = np.mod(blk[:, None] - Q[None, :] + math.pi, TWO_PI) - math.pi
        best[start:start + 512] = np.min(np.sqrt(dq * dq + P[None, :] ** 2), axis=1)
    return max(d1, float(best.max()))


def abort_if_nongeneric(front: WaveFront):
    if front.nongeneric:
        raise DegenerateError(f"non-generic front: {front.nongeneric}")
