"""Independent reference computations used by the test-suite.

None of these route through the front decomposition or the Floer complex:

* ``hopf_lax_selector`` evaluates the fibre min-max of the fold generating
  family ``S(q; u) = -f(q + u) + u^2 / (2K)`` by dense sampling.
* ``gf_spectral`` gets both spectral numbers of a fold family from the
  sublevel sets of ``S`` on the cylinder: one of them is a global extremum,
  the other the bottleneck level at which a sublevel set first joins the two
  ends of the cylinder.
* ``brute_bigons`` rebuilds the differential against the zero section from
  closed-form curve samples, testing each candidate loop as a polygon.
* ``brute_min_max`` enumerates all Z/2 cycles of a complex.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import ndimage
from scipy.optimize import minimize_scalar
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

TWO_PI = 2 * math.pi


def _fold_data(H):
    f = H.f
    K = float(np.asarray(H.K)[0, 0])
    q = np.linspace(0, TWO_PI, 4096, endpoint=False)
    gmax = float(np.max(np.abs(f.value_grad(q[:, None])[1])))
    return f, K, abs(K) * gmax + 0.3


def _S(f, K, q, u):
    q = np.asarray(q, dtype=float)
    u = np.asarray(u, dtype=float)
    x = np.mod(q + u, TWO_PI).reshape(-1, 1)
    v = f.value_grad(x)[0].reshape(np.broadcast(q, u).shape)
    return -v + u * u / (2 * K)


def hopf_lax_selector(H, q, m=4001):
    """Fibre max (``K < 0``) or min (``K > 0``) of the generating family at each ``q``."""
    f, K, U = _fold_data(H)
    sign = 1.0 if K < 0 else -1.0
    u = np.linspace(-U, U, m)
    out = []
    for qi in np.atleast_1d(q):
        vals = sign * _S(f, K, np.full_like(u, qi), u)
        k = int(np.argmax(vals))
        h = u[1] - u[0]
        res = minimize_scalar(lambda x: -sign * float(_S(f, K, qi, x)), bounds=(u[k] - h, u[k] + h),
                              method="bounded", options={"xatol": 1e-12})
        out.append(max(float(vals[k]), -float(res.fun)) * sign)
    return np.array(out)


def _critical_values(f):
    q = np.linspace(0, TWO_PI, 8192, endpoint=False)
    g = f.value_grad(q[:, None])[1][:, 0]
    vals = []
    for i in np.nonzero(np.sign(g) != np.sign(np.roll(g, -1)))[0]:
        a = q[i]
        res = minimize_scalar(lambda x: float(f.value_grad(np.array([[x]]))[1][0, 0]) ** 2,
                              bounds=(a - 1e-3, a + TWO_PI / 8192 + 1e-3), method="bounded",
                              options={"xatol": 1e-13})
        vals.append(-float(f.value_grad(np.array([[res.x]]))[0][0]))
    return np.array(sorted(vals))


def _bottleneck(S, lo_row, hi_row):
    """Least ``c`` such that ``{S <= c}`` joins row ``lo_row`` to ``hi_row``; axis 0 is periodic."""
    def joined(c):
        mask = S <= c
        lab, n = ndimage.label(mask)
        if n == 0:
            return False
        a, b = lab[0], lab[-1]
        keep = (a > 0) & (b > 0)
        pairs = np.stack([a[keep], b[keep]])
        g = coo_matrix((np.ones(pairs.shape[1]), (pairs[0], pairs[1])), shape=(n + 1, n + 1))
        _, comp = connected_components(g, directed=False)
        low = set(comp[lab[:, lo_row][lab[:, lo_row] > 0]])
        high = set(comp[lab[:, hi_row][lab[:, hi_row] > 0]])
        return bool(low & high)

    lo, hi = float(S.min()), float(S.max())
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if joined(mid):
            hi = mid
        else:
            lo = mid
    return hi


def gf_spectral(H, nq=1536, nu=768):
    """``(rho_one, rho_pt, grid_gap)`` of a 1-D fold family from its generating family.

    The bottleneck level is snapped to the nearest critical value of ``S``;
    ``grid_gap`` is the distance that snapping moved it.
    """
    f, K, U = _fold_data(H)
    crit = _critical_values(f)
    q = np.linspace(0, TWO_PI, nq, endpoint=False)
    u = np.linspace(-U, U, nu)
    Q, Uu = np.meshgrid(q, u, indexing="ij")
    S = _S(f, K, Q, Uu)
    if K < 0:
        c = _bottleneck(S, 0, nu - 1)
        rho_one, rho_pt = float(crit.max()), c
    else:
        # the dual family -S has negative fibre: its bottleneck is minus rho_one
        c = -_bottleneck(-S, 0, nu - 1)
        rho_one, rho_pt = c, float(crit.min())
    k = int(np.argmin(np.abs(crit - c)))
    snapped = float(crit[k])
    gap = abs(snapped - c)
    if K < 0:
        return rho_one, snapped, gap
    return snapped, rho_pt, gap


# ---------------------------------------------------------------------------
# bigons from polygons


def _orient(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _arc_samples(H, s0, s1, m):
    s = np.linspace(s0, s1, m + 1)
    Q, P, _ = H.exact_curve(TWO_PI * s[:, None])
    return np.column_stack([Q[:, 0], P[:, 0]])


def _is_bigon(H, s0, s1, per_unit=4096):
    """Loop: curve arc from ``s0`` to ``s1`` then the zero-section chord back; bigon test by polygon geometry."""
    m = max(64, int(abs(s1 - s0) * per_unit))
    arc = _arc_samples(H, s0, s1, m)
    qa, qb = arc[0, 0], arc[-1, 0]
    lo, hi = min(qa, qb), max(qa, qb)
    P = arc[1:-1, 1]
    cross = np.nonzero(np.sign(P[:-1]) * np.sign(P[1:]) < 0)[0]
    for i in cross:
        t = P[i] / (P[i] - P[i + 1])
        qc = arc[1 + i, 0] + t * (arc[2 + i, 0] - arc[1 + i, 0])
        if lo < qc < hi:
            return False
    area = _orient(arc)
    if area == 0.0:
        return False
    sgn = math.copysign(1.0, area)
    # corner at the arc start: incoming chord direction then outgoing arc direction
    chord = np.array([qa - qb, 0.0])
    a_out = arc[min(4, m)] - arc[0]
    a_in = arc[-1] - arc[-1 - min(4, m)]
    c1 = sgn * (chord[0] * a_out[1] - chord[1] * a_out[0])
    c2 = sgn * (a_in[0] * chord[1] - a_in[1] * chord[0])
    return c1 > 0 and c2 > 0


def brute_bigons(H, complex_):
    """Differential of ``(L, o_N)`` rebuilt by testing every generator pair and lift as a polygon."""
    gens = complex_.generators
    n = len(gens)
    D = np.zeros((n, n), dtype=np.uint8)
    for x, y in itertools.permutations(range(n), 2):
        if not gens[x].action > gens[y].action:
            continue
        for m in (-1, 0, 1):
            t = gens[y].s + m
            if 0 < abs(t - gens[x].s) < 1 and _is_bigon(H, gens[x].s, t):
                D[y, x] ^= 1
    return D


# ---------------------------------------------------------------------------
# cycles


def _span2(vectors):
    out = {tuple([0] * len(vectors[0]))} if vectors else set()
    for v in vectors:
        out |= {tuple(a ^ b for a, b in zip(w, v)) for w in out}
    return out


def brute_min_max(complex_, cls):
    """Min over Z/2 cycles of the marked grading, not boundaries, of their top action."""
    n = complex_.n
    D = complex_.differential.astype(int) % 2
    gens = complex_.generators
    if complex_.test.kind == "zero_section":
        g = {"fundamental": 1, "point": 0}[cls]
        idx = [i for i in range(n) if gens[i].grading == g]
    else:
        idx = list(range(n))
    bnd = _span2([tuple(D[:, j]) for j in range(n)])
    best = math.inf
    for r in range(1, len(idx) + 1):
        for sub in itertools.combinations(idx, r):
            v = np.zeros(n, dtype=int)
            v[list(sub)] = 1
            if np.any(D @ v % 2) or tuple(v) in bnd:
                continue
            best = min(best, max(gens[i].action for i in sub))
    return best
