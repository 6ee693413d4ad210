"""Filtered Z/2 Floer complexes of curves on the cylinder ``T*S^1``.

For embedded curves on a surface the Floer differential counts immersed
bigons with convex corners.  In the universal cover ``R^2`` such a bigon is a
disc bounded by a simple loop made of one arc ``A`` of the lifted curve and one
segment ``B`` of a lifted test curve (the zero section ``p = 0`` or a vertical
fibre ``q = const``).  With ``omega = dq ^ dp`` its signed area equals
``h(x) - h(y)``, so the bigon runs from the corner of higher action to the one
of lower action.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from lagspec.errors import PreconditionError, StructureError, UnsupportedInputError
from lagspec.flow import LagrangianCurve
from lagspec.front import CurveSplines, WaveFront, decompose_front
from lagspec.phase_space import TWO_PI


@dataclass(frozen=True)
class TestCurve:
    kind: str
    q: float = 0.0

    def __str__(self):
        return "zero_section" if self.kind == "zero_section" else f"fiber({self.q:.6g})"


ZERO_SECTION = TestCurve("zero_section")


def fiber(q) -> TestCurve:
    if hasattr(q, "coordinates"):
        q = q.coordinates[0]
    return TestCurve("fiber", float(q) % TWO_PI)


@dataclass(frozen=True)
class Generator:
    id: int
    s: float
    q: float
    p: float
    action: float
    grading: int
    branch: int = -1


@dataclass(frozen=True)
class Bigon:
    source: int
    target: int
    lift: int
    area: float = math.nan


@dataclass
class FilteredChainComplex:
    """Generators with action levels and a Z/2 differential ``d[y, x] = <dx, y>``."""

    generators: list
    differential: np.ndarray
    test: TestCurve = ZERO_SECTION
    bigons: list = field(default_factory=list)
    tol: float = 1e-9

    def __post_init__(self):
        self.differential = np.asarray(self.differential, dtype=np.uint8) % 2
        n = len(self.generators)
        if self.differential.shape != (n, n):
            raise StructureError("differential shape does not match the generators")

    @property
    def n(self):
        return len(self.generators)

    def boundary(self, i):
        return [j for j in np.nonzero(self.differential[:, i])[0]]

    def d_squared_zero(self) -> bool:
        D = self.differential.astype(np.int64)
        return not np.any((D @ D) % 2)

    def filtration_respected(self) -> bool:
        for x in range(self.n):
            for y in self.boundary(x):
                if not self.generators[y].action < self.generators[x].action:
                    return False
        return True

    def grading_respected(self) -> bool:
        return all(self.generators[y].grading != self.generators[x].grading
                   for x in range(self.n) for y in self.boundary(x))

    def homology_ranks(self):
        """Z/2 Betti numbers per grading ``(b0, b1)``."""
        D = self.differential
        ranks = []
        for g in (0, 1):
            idx = [i for i, z in enumerate(self.generators) if z.grading == g]
            out = _rank2(D[:, idx]) if idx else 0
            into = [i for i, z in enumerate(self.generators) if z.grading != g]
            inc = _rank2(D[np.ix_(idx, into)]) if idx and into else 0
            ranks.append(len(idx) - out - inc)
        return tuple(ranks)

    @property
    def class_markers(self):
        """Grading carrying each class: ``{'fundamental': 1, 'point': 0}`` for ``o_N``."""
        if self.test.kind == "zero_section":
            return {"fundamental": 1, "point": 0}
        return {"point": None}

    def dump(self) -> str:
        lines = [f"# test {self.test}"]
        for g in self.generators:
            lines.append(f"{g.id} {g.q:.12g} {g.p:.12g} {g.action:.12g} {g.grading}")
        lines.append("# differential")
        for x in range(self.n):
            for y in self.boundary(x):
                lines.append(f"{self.generators[x].id} {self.generators[int(y)].id}")
        return "\n".join(lines) + "\n"


def _rank2(M) -> int:
    M = (np.array(M, dtype=np.uint8) % 2).copy()
    r = 0
    rows, cols = M.shape
    for c in range(cols):
        piv = next((i for i in range(r, rows) if M[i, c]), None)
        if piv is None:
            continue
        M[[r, piv]] = M[[piv, r]]
        for i in range(rows):
            if i != r and M[i, c]:
                M[i] ^= M[r]
        r += 1
        if r == rows:
            break
    return r


# ---------------------------------------------------------------------------
# generators


def _generators(front: WaveFront, test: TestCurve):
    sp = front.splines
    gens = []
    if test.kind == "zero_section":
        for k, z in enumerate(sorted(front.zero_crossings, key=lambda z: z.s)):
            if not z.transverse:
                raise PreconditionError(f"non-transverse intersection with the zero section at q={z.q:.6g}")
            # sign of cross((1, 0), (Q', P')) = P'
            gens.append(Generator(k, z.s, z.q, 0.0, z.action, int(z.dP < 0), z.branch))
    else:
        for c in front.caustics:
            if abs((c.q - test.q + math.pi) % TWO_PI - math.pi) < 1e-9:
                raise PreconditionError(f"fiber at q={test.q:.6g} passes through a caustic")
        sheets = sorted(front.sheets_at(test.q), key=lambda t: t[1] % 1.0)
        for k, (b, s) in enumerate(sheets):
            s = s % 1.0
            dq = float(sp.dQ(s))
            if abs(dq) < 1e-9 * max(1.0, float(np.max(np.abs(front.curve.dQ)))):
                raise PreconditionError(f"fiber at q={test.q:.6g} is tangent to the curve")
            # sign of cross((0, 1), (Q', P')) = -Q'
            gens.append(Generator(k, s, test.q, float(sp.P(s)), float(sp.h(s)), int(dq > 0), b))
    return gens


# ---------------------------------------------------------------------------
# bigons


def _cross(a, b):
    return a[0] * b[1] - a[1] * b[0]


def _arc_candidates(gens, test, sp, x, y):
    """Lifted end parameters ``t`` for arcs of the curve from ``s_x`` to ``t ~ s_y``."""
    sx, sy = gens[x].s, gens[y].s
    if test.kind == "zero_section":
        return [t for t in (sy - 1.0, sy, sy + 1.0) if 0.0 < abs(t - sx) < 1.0]
    Qx = float(sp.Q(sx))
    Qy = float(sp.Q(sy))
    k = int(round((Qx - Qy) / TWO_PI))
    return [sy + k]


def _bigon_between(gens, test, sp, x, y, t):
    """Decide whether the loop (arc ``s_x -> t``, then the test segment back) bounds a bigon."""
    sx = gens[x].s
    lo, hi = (sx, t) if t > sx else (t, sx)
    Qx, Px = float(sp.Q(sx)), float(sp.P(sx))
    Qy, Py = float(sp.Q(t)), float(sp.P(t))
    # simplicity: no other lifted generator on the arc may lie inside the segment
    for z in gens:
        for m in range(-2, 3):
            u = z.s + m
            if not (lo < u < hi):
                continue
            if abs(u - sx) < 1e-12 or abs(u - t) < 1e-12:
                continue
            Qu, Pu = float(sp.Q(u)), float(sp.P(u))
            if test.kind == "zero_section":
                if min(Qx, Qy) < Qu < max(Qx, Qy):
                    return False
            else:
                if abs(Qu - Qx) < 1e-6 and min(Px, Py) < Pu < max(Px, Py):
                    return False
    sigma = 1.0 if gens[x].action > gens[y].action else -1.0
    direction = 1.0 if t > sx else -1.0
    tAx = np.array([sp.dQ(sx), sp.dP(sx)], dtype=float) * direction
    tAy = np.array([sp.dQ(t), sp.dP(t)], dtype=float) * direction
    if test.kind == "zero_section":
        tB = np.array([math.copysign(1.0, Qx - Qy), 0.0])  # from y back to x
    else:
        tB = np.array([0.0, math.copysign(1.0, Px - Py)])
    # loop: A from x to y, then B from y to x; interior on the left iff sigma > 0
    convex_x = sigma * _cross(tB, tAx) > 0
    convex_y = sigma * _cross(tAy, tB) > 0
    return bool(convex_x and convex_y)


def polygon_area(sp: CurveSplines, sx, t, samples_per_unit=8192):
    """Signed area (ccw positive) of the loop: curve arc ``sx -> t`` closed by a straight segment."""
    m = max(64, int(math.ceil(abs(t - sx) * samples_per_unit)))
    u = np.linspace(sx, t, m + 1)
    Q = sp.Q(u)
    P = sp.P(u)
    # closing segment is straight, so the shoelace sum over the arc plus its chord is exact for it
    Qc = np.append(Q, Q[0])
    Pc = np.append(P, P[0])
    return 0.5 * float(np.sum(Qc[:-1] * Pc[1:] - Qc[1:] * Pc[:-1]))


def build_complex(curve, test: TestCurve = ZERO_SECTION, front: WaveFront = None,
                  areas: bool = False) -> FilteredChainComplex:
    """Filtered Z/2 complex of ``(L, test)`` with differential from bigon counts.

    ``curve`` may be a :class:`LagrangianCurve` or an already decomposed
    :class:`WaveFront`.  With ``areas=True`` the enclosed area of every counted
    bigon is recorded (used by :func:`check_energy_identity`).
    """
    if isinstance(curve, WaveFront):
        front = curve
    elif front is None:
        front = decompose_front(curve)
    if front.curve.flags.get("self_intersections"):
        raise UnsupportedInputError("curve is not embedded")
    sp = front.splines
    gens = _generators(front, test)
    n = len(gens)
    D = np.zeros((n, n), dtype=np.uint8)
    bigons = []
    for x in range(n):
        for y in range(n):
            if x == y or not gens[x].action > gens[y].action:
                continue
            for t in _arc_candidates(gens, test, sp, x, y):
                if _bigon_between(gens, test, sp, x, y, t):
                    D[y, x] ^= 1
                    area = polygon_area(sp, gens[x].s, t) if areas else math.nan
                    bigons.append(Bigon(x, y, int(round(t - gens[y].s)), area))
    return FilteredChainComplex(gens, D, test, bigons, tol=front.tol)


def check_energy_identity(complex_: FilteredChainComplex, curve=None, test=None) -> float:
    """Max over counted bigons of ``|area - (action(x) - action(y))|``."""
    res = 0.0
    need = any(math.isnan(b.area) for b in complex_.bigons)
    if need:
        if curve is None:
            raise PreconditionError("curve required to measure bigon areas")
        front = curve if isinstance(curve, WaveFront) else decompose_front(curve)
        complex_ = build_complex(front, complex_.test if test is None else test, areas=True)
    g = complex_.generators
    for b in complex_.bigons:
        res = max(res, abs(b.area - (g[b.source].action - g[b.target].action)))
    return float(res)


def check_embedded(curve: LagrangianCurve) -> bool:
    hits = curve.self_intersections()
    curve.flags["self_intersections"] = len(hits)
    return not hits
