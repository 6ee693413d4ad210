"""Cliff-wall surgery in dimension 2: singular strata, jump covectors and the mod-2 cycle.

A selector field on a square grid is described by a *sheet oracle*: it selects
a sheet at every grid point and continues any sheet to nearby points.  Grid
edges whose end points lie on different sheets carry one point of the
codimension-1 singular set ``S1``.  Each grid cell is cut along ``S1`` into
regions, and the mesh assembled from those regions is closed up by

* ``selector``: fan triangles of the graph of ``df`` over each region,
* ``cliff``: ruled strips joining the two one-sided covectors along ``S1``,
* ``simplex``: one fibre triangle at each triple point.

The mod-2 boundary of the union is computed exactly on vertex ids.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from lagspec.errors import DegenerateError, PreconditionError, ResolutionError, UnsupportedInputError
from lagspec.flow import endpoint_map
from lagspec.phase_space import TWO_PI, BaseLift, Fourier, FoldFamily, wrap_signed

# ---------------------------------------------------------------------------
# sheet oracles


class GeneratingFamily:
    """``S(q; u) = -f(q + u) + u^T K^{-1} u / 2`` with ``K`` definite, or ``S(q) = -f(q)`` when ``K`` is None.

    Critical points in ``u`` are the sheets of ``L`` over ``q``: ``s = q + u``
    is the start point, ``dS/dq = -df(s)`` the covector and ``S`` the action.
    The min-max value is the maximum over ``u`` for negative ``K`` and the
    minimum for positive ``K``.
    """

    def __init__(self, f, K=None, u_step=0.1):
        self.f = f
        self.u_step = u_step
        if K is None:
            self.Kinv, self.sense, self.k = None, 1, 0
            return
        K = np.atleast_2d(np.asarray(K, dtype=float))
        ev = np.linalg.eigvalsh(K)
        if np.all(ev < 0):
            self.sense = 1
        elif np.all(ev > 0):
            self.sense = -1
        else:
            raise PreconditionError("fibre quadratic form must be definite")
        self.Kinv = np.linalg.inv(K)
        self.K = K
        self.k = K.shape[0]

    def _S(self, q, u):
        v, g = self.f.value_grad(q + u)
        if self.Kinv is None:
            return -v, -g
        return -v + 0.5 * np.einsum("ni,ij,nj->n", u, self.Kinv, u), -g

    def _newton(self, q, u, iters=40):
        u = u.copy()
        ok = np.zeros(len(q), dtype=bool)
        for _ in range(iters):
            _, g = self.f.value_grad(q + u)
            r = -g + u @ self.Kinv
            Hs = -self.f.hessian(q + u) + self.Kinv
            du = np.linalg.solve(Hs, r[:, :, None])[:, :, 0]
            u -= du
            ok = np.max(np.abs(du), axis=1) < 1e-13
            if np.all(ok):
                break
        _, g = self.f.value_grad(q + u)
        ok = np.max(np.abs(-g + u @ self.Kinv), axis=1) < 1e-9
        return u, ok

    def follow(self, seed, X):
        """Continue the sheets ``seed`` to the points ``X``; returns ``(value, covector, seed, ok)``."""
        X = np.atleast_2d(X)
        if self.Kinv is None:
            v, cov = self._S(X, np.zeros_like(X))
            return v, cov, seed, np.ones(len(X), dtype=bool)
        u, ok = self._newton(X, seed)
        v, cov = self._S(X, u)
        return v, cov, u, ok

    def same(self, a, b):
        if self.Kinv is None:
            return np.ones(len(a), dtype=bool)
        return np.max(np.abs(a - b), axis=1) < 1e-6

    def _fibre_values(self, U):
        """``x -> f(x + U)`` as an ``(len(x), len(U))`` array; Fourier series use angle addition."""
        if isinstance(self.f, Fourier):
            k, a, ph = self.f._arrays()
            kU = U @ k.T
            cu, su = np.cos(kU).T, np.sin(kU).T

            def values(x):
                arg = x @ k.T + ph
                return (np.cos(arg) * a) @ cu - (np.sin(arg) * a) @ su
            return values

        def values(x):
            return self.f.value_grad((x[:, None, :] + U[None]).reshape(-1, 2))[0].reshape(len(x), -1)
        return values

    def select(self, X, chunk=256):
        """Global min-max over a discretised fibre, polished by Newton from the best local extrema."""
        X = np.atleast_2d(X)
        if self.Kinv is None:
            v, cov = self._S(X, np.zeros_like(X))
            return v, cov, np.zeros((len(X), 0))
        q = (TWO_PI * np.arange(256) / 256)
        grid = np.stack(np.meshgrid(q, q, indexing="ij"), -1).reshape(-1, 2)
        gmax = float(np.max(np.linalg.norm(self.f.value_grad(grid)[1], axis=1)))
        bound = float(np.linalg.norm(self.K, 2)) * gmax + 2 * self.u_step
        m = int(math.ceil(2 * bound / self.u_step)) + 1
        ax = np.linspace(-bound, bound, m)
        U = np.stack(np.meshgrid(ax, ax, indexing="ij"), -1).reshape(-1, 2)
        quad = 0.5 * np.einsum("ni,ij,nj->n", U, self.Kinv, U)
        values = self._fibre_values(U)
        best_u = np.empty_like(X)
        best_v = np.empty(len(X))
        for a in range(0, len(X), chunk):
            x = X[a:a + chunk]
            S = self.sense * (-values(x) + quad).reshape(len(x), m, m)
            pad = np.pad(S, ((0, 0), (1, 1), (1, 1)), constant_values=-np.inf)
            loc = np.ones_like(S, dtype=bool)
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    if di or dj:
                        loc &= S >= pad[:, 1 + di:1 + di + m, 1 + dj:1 + dj + m]
            flat = np.where(loc, S, -np.inf).reshape(len(x), -1)
            top = np.argsort(-flat, axis=1)[:, :4]
            cand_v = np.full((len(x), 4), -np.inf)
            cand_u = np.zeros((len(x), 4, 2))
            for c in range(4):
                valid = np.isfinite(np.take_along_axis(flat, top[:, c:c + 1], 1)[:, 0])
                u, ok = self._newton(x, U[top[:, c]])
                v, _ = self._S(x, u)
                cand_v[:, c] = np.where(valid & ok, self.sense * v, -np.inf)
                cand_u[:, c] = u
            k = np.argmax(cand_v, axis=1)
            if not np.all(np.isfinite(cand_v[np.arange(len(x)), k])):
                raise ResolutionError("fibre min-max did not converge; decrease u_step")
            best_u[a:a + chunk] = cand_u[np.arange(len(x)), k]
            best_v[a:a + chunk] = self.sense * cand_v[np.arange(len(x)), k]
        _, cov = self._S(X, best_u)
        return best_v, cov, best_u


class AffineSheets:
    """Explicit sheets ``value_grad`` callables, selected by min (``sense=-1``) or max (``sense=1``)."""

    def __init__(self, sheets, sense=-1):
        self.sheets = list(sheets)
        self.sense = sense

    def _eval(self, idx, X):
        v = np.empty(len(X))
        g = np.empty((len(X), 2))
        for k, s in enumerate(self.sheets):
            m = idx == k
            if np.any(m):
                v[m], g[m] = s(X[m])
        return v, g

    def select(self, X):
        X = np.atleast_2d(X)
        vals = np.stack([s(X)[0] for s in self.sheets], 1)
        idx = np.argmax(self.sense * vals, axis=1)
        v, g = self._eval(idx, X)
        return v, g, idx[:, None].astype(float)

    def follow(self, seed, X):
        X = np.atleast_2d(X)
        v, g = self._eval(seed[:, 0].astype(int), X)
        return v, g, seed, np.ones(len(X), dtype=bool)

    def same(self, a, b):
        return a[:, 0] == b[:, 0]


def _cross(a, b):
    return float(a[0] * b[1] - a[1] * b[0])


def affine(a, b):
    a = np.asarray(a, dtype=float)

    def fn(X):
        return X @ a + b, np.broadcast_to(a, X.shape).copy()

    return fn


# ---------------------------------------------------------------------------
# fields


@dataclass
class SelectorField2D:
    axis: np.ndarray
    f: np.ndarray
    branch: np.ndarray
    df: np.ndarray
    seed: np.ndarray
    provenance: str
    periodic: bool
    oracle: object
    disc_h: np.ndarray = None
    disc_v: np.ndarray = None
    hamiltonian: object = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.axis)

    @property
    def h(self):
        return float(self.axis[1] - self.axis[0])

    def points(self):
        g1, g2 = np.meshgrid(self.axis, self.axis, indexing="ij")
        return np.stack([g1, g2], -1)

    def fd_residual(self):
        """``|f(b) - f(a) - (df(a) + df(b)) . (b - a) / 2|`` over continuous grid edges."""
        out = 0.0
        h = self.h
        for axis_, disc in ((0, self.disc_h), (1, self.disc_v)):
            fb = np.roll(self.f, -1, axis=axis_)
            db = np.roll(self.df[..., axis_], -1, axis=axis_)
            r = np.abs(fb - self.f - 0.5 * h * (self.df[..., axis_] + db))
            mask = ~disc
            if not self.periodic:
                sl = [slice(None), slice(None)]
                sl[axis_] = slice(None, -1)
                r, mask = r[tuple(sl)], mask[tuple(sl)]
            if np.any(mask):
                out = max(out, float(np.max(r[mask])))
        return out


def _edges(field_):
    """Same-sheet test for every grid edge; ``disc_h[i, j]`` is the edge (i, j)-(i+1, j)."""
    n = field_.n
    P = field_.points().reshape(-1, 2)
    seed = field_.seed.reshape(n * n, -1)
    out = []
    for axis_ in (0, 1):
        nb = np.roll(np.arange(n * n).reshape(n, n), -1, axis=axis_).ravel()
        X = P[nb]
        _, _, u, ok = field_.oracle.follow(seed, X)
        same = ok & field_.oracle.same(u, seed[nb])
        disc = ~same.reshape(n, n)
        if not field_.periodic:
            sl = [slice(None), slice(None)]
            sl[axis_] = -1
            disc[tuple(sl)] = False
        out.append(disc)
    field_.disc_h, field_.disc_v = out
    # branch ids: connected components of the same-sheet graph
    parent = np.arange(n * n)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    idx = np.arange(n * n).reshape(n, n)
    for axis_, disc in ((0, field_.disc_h), (1, field_.disc_v)):
        nb = np.roll(idx, -1, axis=axis_)
        lim = n if field_.periodic else n - 1
        for a, b, d in zip(idx.ravel(), nb.ravel(), disc.ravel()):
            if d:
                continue
            ia = np.unravel_index(a, (n, n))
            if not field_.periodic and ia[axis_] >= lim:
                continue
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
    roots = np.array([find(x) for x in range(n * n)])
    _, lab = np.unique(roots, return_inverse=True)
    field_.branch = lab.reshape(n, n)


def _base_function(H):
    if isinstance(H, FoldFamily) and H.dim == 2:
        return H.f, np.asarray(H.K)
    if isinstance(H, BaseLift) and H.dim == 2:
        return H.f, None
    raise UnsupportedInputError("2-D selector fields are sampled from 2-D fold families or base lifts")


def sample_selector_2d(H, n: int = 128, u_step: float = 0.1, steps: int = 64, flow: bool = True):
    """Selector field of a Hamiltonian on ``T*T^2`` over an ``n x n`` grid.

    ``f`` is the fibre min-max of the generating family of ``H``; the selected
    start points are pushed through the 4-D integrator and the resulting
    endpoint covectors are used as ``df``.
    """
    f, K = _base_function(H)
    oracle = GeneratingFamily(f, K, u_step)
    axis = TWO_PI * np.arange(n) / n
    g1, g2 = np.meshgrid(axis, axis, indexing="ij")
    X = np.stack([g1.ravel(), g2.ravel()], 1)
    val, cov, u = oracle.select(X)
    diag = {}
    if flow:
        s = X + (u if u.shape[1] else 0.0)
        Q, P, A = endpoint_map(H, s, np.zeros_like(s), steps, richardson=True)
        diag["flow_base_residual"] = float(np.max(np.abs(wrap_signed(Q - X))))
        diag["flow_action_residual"] = float(np.max(np.abs(A - val)))
        diag["flow_covector_residual"] = float(np.max(np.abs(P - cov)))
        scale = max(float(np.ptp(val)), 1e-12)
        if diag["flow_base_residual"] > 1e-6 or diag["flow_action_residual"] > 1e-6 * scale:
            raise ResolutionError(f"flowed sheet disagrees with the fibre min-max: {diag}")
        cov = P
    seed = u.reshape(n, n, -1)
    fld = SelectorField2D(axis, val.reshape(n, n), None, cov.reshape(n, n, 2), seed,
                          "flowed" if flow else "generating", True, oracle, hamiltonian=H, diagnostics=diag)
    _edges(fld)
    return fld


def synthetic_field(sheets, n: int = 128, lo: float = -1.0, hi: float = 1.0, sense: int = -1):
    """Selector of explicit sheets on the square patch ``[lo, hi]^2``."""
    oracle = AffineSheets(sheets, sense)
    axis = np.linspace(lo, hi, n)
    g1, g2 = np.meshgrid(axis, axis, indexing="ij")
    X = np.stack([g1.ravel(), g2.ravel()], 1)
    val, cov, idx = oracle.select(X)
    fld = SelectorField2D(axis, val.reshape(n, n), None, cov.reshape(n, n, 2), idx.reshape(n, n, 1),
                          "synthetic", False, oracle)
    _edges(fld)
    return fld


AFFINE3 = (((1.0, 0.0), 0.0), ((-0.5, 0.8), 0.1), ((-0.5, -0.8), -0.05))


def affine3_field(n: int = 128, planes=AFFINE3):
    """Minimum of three affine functions; ``S1`` is three rays from one triple point."""
    return synthetic_field([affine(a, b) for a, b in planes], n)


def affine3_triple_point(planes=AFFINE3):
    A = np.array([[planes[0][0][0] - planes[1][0][0], planes[0][0][1] - planes[1][0][1]],
                  [planes[0][0][0] - planes[2][0][0], planes[0][0][1] - planes[2][0][1]]])
    b = np.array([planes[1][1] - planes[0][1], planes[2][1] - planes[0][1]])
    return np.linalg.solve(A, b)


def vfold_field(n: int = 128, wobble: float = 0.3):
    """Smoothed ``|x|`` fold: ``max(x, -x) + wobble sin(pi y)``, singular along ``x = 0``."""

    def sheet(sign):
        def fn(X):
            v = sign * X[:, 0] + wobble * np.sin(np.pi * X[:, 1])
            g = np.stack([np.full(len(X), float(sign)), wobble * np.pi * np.cos(np.pi * X[:, 1])], 1)
            return v, g
        return fn

    # even n keeps x = 0 off the grid
    return synthetic_field([sheet(1), sheet(-1)], n + (n % 2), sense=1)


def perturbed_product(f1=None, f2=None, K=-1.2, eps=0.05, cross=((1, -1), 0.3), radius=6.0):
    """Fold family on ``T*T^2`` with base function ``f1(q1) + f2(q2) + eps cos(k . q + phase)``."""
    if f1 is None:
        f1 = Fourier(((1,), (2,), (2,)), (1.0, 0.35, 0.05), (0.0, 0.0, -math.pi / 2))
    if f2 is None:
        f2 = Fourier(((1,), (2,), (2,)), (1.0, 0.35, 0.05), (1.0, 2.0, 2.0 - math.pi / 2))
    modes = [(m[0], 0) for m in f1.modes] + [(0, m[0]) for m in f2.modes] + [tuple(cross[0])]
    amps = list(f1.amps) + list(f2.amps) + [eps]
    phases = list(f1.phases) + list(f2.phases) + [cross[1]]
    f = Fourier(tuple(modes), tuple(amps), tuple(phases))
    return FoldFamily(f, ((K, 0.0), (0.0, K)), radius)


# ---------------------------------------------------------------------------
# strata


@dataclass
class Polyline:
    nodes: list
    points: np.ndarray
    closed: bool


@dataclass
class S2Point:
    q: np.ndarray
    tag: str
    covectors: list = field(default_factory=list)
    node: tuple = None


@dataclass
class SingularStratum:
    S1: list
    S2: list
    epoints: dict
    cells: dict
    segments: list
    log: list = field(default_factory=list)

    @property
    def triple_points(self):
        return [p for p in self.S2 if p.tag == "triple"]

    @property
    def caustic_points(self):
        return [p for p in self.S2 if p.tag == "caustic"]

    def to_rows(self):
        rows = []
        for k, pl in enumerate(self.S1):
            for x in pl.points:
                rows.append((k, float(x[0]), float(x[1])))
        return rows


@dataclass
class _EPoint:
    key: tuple
    pos: np.ndarray
    t: float
    cov: tuple          # covector on side 0 / side 1
    value: float
    seeds: tuple
    ok: bool = True
    frame: bool = False


def _edge_geometry(field_, key):
    kind, i, j = key
    h = field_.h
    base = np.array([field_.axis[i], field_.axis[j]])
    d = np.array([h, 0.0]) if kind == "h" else np.array([0.0, h])
    n = field_.n
    far = ((i + 1) % n, j) if kind == "h" else (i, (j + 1) % n)
    return base, d, (i, j), far


def _locate_epoints(field_):
    """Crossing point of the two sheets on every discontinuous edge, by vectorised bisection."""
    keys = [("h", i, j) for i, j in zip(*np.nonzero(field_.disc_h))]
    keys += [("v", i, j) for i, j in zip(*np.nonzero(field_.disc_v))]
    if not keys:
        return {}
    geo = [_edge_geometry(field_, k) for k in keys]
    base = np.array([g[0] for g in geo])
    d = np.array([g[1] for g in geo])
    sa = np.array([field_.seed[g[2]] for g in geo])
    sb = np.array([field_.seed[g[3]] for g in geo])
    orc = field_.oracle
    lo = np.zeros(len(keys))
    hi = np.ones(len(keys))
    good = np.ones(len(keys), dtype=bool)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        X = base + mid[:, None] * d
        va, _, _, oka = orc.follow(sa, X)
        vb, _, _, okb = orc.follow(sb, X)
        good &= oka & okb
        g = orc.sense * (va - vb)
        lo = np.where(g >= 0, mid, lo)
        hi = np.where(g >= 0, hi, mid)
    t = 0.5 * (lo + hi)
    X = base + t[:, None] * d
    va, ca, ua, oka = orc.follow(sa, X)
    vb, cb, ub, okb = orc.follow(sb, X)
    good &= oka & okb
    out = {}
    n = field_.n
    for k, key in enumerate(keys):
        frame = False
        if not field_.periodic:
            _, i, j = key
            frame = (key[0] == "h" and j in (0, n - 1)) or (key[0] == "v" and i in (0, n - 1))
        out[key] = _EPoint(key, X[k], float(t[k]), (ca[k], cb[k]), float(0.5 * (va[k] + vb[k])),
                           (ua[k], ub[k]), bool(good[k]), frame)
    return out


def _cell_edges(field_, i, j):
    n = field_.n
    i1, j1 = (i + 1) % n, (j + 1) % n
    return [("h", i, j), ("v", i1, j), ("h", i, j1), ("v", i, j)]


def _disc(field_, key):
    kind, i, j = key
    return bool(field_.disc_h[i, j] if kind == "h" else field_.disc_v[i, j])


def _cell_corners(field_, i, j):
    n = field_.n
    return [(i, j), ((i + 1) % n, j), ((i + 1) % n, (j + 1) % n), (i, (j + 1) % n)]


def _cell_positions(field_, i, j):
    x, y, h = field_.axis[i], field_.axis[j], field_.h
    return np.array([[x, y], [x + h, y], [x + h, y + h], [x, y + h]])


# cell edge k runs from corner k to corner k+1; canonical side 0 is the base corner
_IN_SIDE = (0, 0, 1, 1)   # side of the canonical edge that touches corner k
_OUT_SIDE = (1, 1, 0, 0)  # side that touches corner k+1


def _triple_point(field_, i, j, seeds):
    orc = field_.oracle
    P = _cell_positions(field_, i, j)
    x = P.mean(0)
    for _ in range(50):
        vals, covs = [], []
        for s in seeds:
            v, c, _, ok = orc.follow(s[None], x[None])
            if not ok[0]:
                return None
            vals.append(v[0])
            covs.append(c[0])
        r = np.array([vals[0] - vals[1], vals[0] - vals[2]])
        J = np.array([covs[0] - covs[1], covs[0] - covs[2]])
        try:
            dx = np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            return None
        x = x - dx
        if np.max(np.abs(dx)) < 1e-15:
            break
    # a sector thinner than a cell shows its triple point in a neighbour cell
    lo, hi = P[0] - field_.h, P[2] + field_.h
    if np.any(x < lo) or np.any(x > hi):
        return None
    return x, covs, float(np.mean(vals))


def extract_strata(field_: SelectorField2D) -> SingularStratum:
    """``S1`` polylines through the sheet-crossing points and ``S2`` triple/caustic points."""
    epts = _locate_epoints(field_)
    log = [f"stencil: sheet continuation failed on edge {k}" for k, e in epts.items() if not e.ok]
    n = field_.n
    ncell = n if field_.periodic else n - 1
    cells = {}
    segments = []
    S2 = []
    orc = field_.oracle
    for i in range(ncell):
        for j in range(ncell):
            ek = _cell_edges(field_, i, j)
            D = [k for k in range(4) if _disc(field_, ek[k])]
            if not D:
                continue
            info = {"D": D, "pairs": [], "triple": None, "end": None}
            corners = _cell_corners(field_, i, j)
            seeds = [field_.seed[c] for c in corners]
            if len(D) == 1:
                k = D[0]
                e = epts[ek[k]]
                pos = _cell_positions(field_, i, j).mean(0)
                cov = 0.5 * (e.cov[0] + e.cov[1])
                info["end"] = (pos, cov)
                S2.append(S2Point(pos, "caustic", [cov], ("X", i, j)))
                segments.append((("E", ek[k]), ("X", i, j)))
            elif len(D) == 2:
                info["pairs"] = [(D[0], D[1])]
                segments.append((("E", ek[D[0]]), ("E", ek[D[1]])))
            elif len(D) == 3:
                # regions: corners grouped between consecutive discontinuous edges
                regions = []
                for a_idx, a in enumerate(D):
                    b = D[(a_idx + 1) % 3]
                    regions.append(((a + 1) % 4, b))  # first corner after edge a, edge b closes it
                rs = [seeds[r[0]] for r in regions]
                tp = _triple_point(field_, i, j, rs)
                if tp is None:
                    raise DegenerateError(f"triple point in cell ({i}, {j}) could not be resolved")
                x, covs, val = tp
                c = np.array(covs)
                area = 0.5 * abs(_cross(c[1] - c[0], c[2] - c[0]))
                if area <= 1e-12 * max(1.0, float(np.max(np.abs(c))) ** 2):
                    raise DegenerateError(f"collinear covectors at the triple point in cell ({i}, {j})")
                info["triple"] = (x, covs, regions)
                S2.append(S2Point(x, "triple", covs, ("T", i, j)))
                for a in D:
                    segments.append((("E", ek[a]), ("T", i, j)))
            else:
                s02 = bool(orc.same(orc.follow(seeds[0][None], _cell_positions(field_, i, j)[2][None])[2],
                                    seeds[2][None])[0])
                s13 = bool(orc.same(orc.follow(seeds[1][None], _cell_positions(field_, i, j)[3][None])[2],
                                    seeds[3][None])[0])
                if not (s02 or s13):
                    raise DegenerateError(f"more than three arcs meet in cell ({i}, {j})")
                ctr = _cell_positions(field_, i, j).mean(0)[None]
                v0 = orc.follow(seeds[0][None], ctr)[0][0]
                v1 = orc.follow(seeds[1][None], ctr)[0][0]
                even_wins = orc.sense * (v0 - v1) >= 0
                if s02 and (even_wins or not s13):
                    info["pairs"] = [(0, 1), (2, 3)]  # corners 1 and 3 cut off
                else:
                    info["pairs"] = [(1, 2), (3, 0)]
                for a, b in info["pairs"]:
                    segments.append((("E", ek[a]), ("E", ek[b])))
            cells[(i, j)] = info
    S1 = _chain(field_, epts, cells, segments, S2)
    return SingularStratum(S1, S2, epts, cells, segments, log)


def _node_pos(field_, node, epts, cells):
    if node[0] == "E":
        return epts[node[1]].pos
    info = cells[(node[1], node[2])]
    return info["triple"][0] if node[0] == "T" else info["end"][0]


def _chain(field_, epts, cells, segments, S2):
    adj = defaultdict(list)
    for k, (a, b) in enumerate(segments):
        adj[a].append((b, k))
        adj[b].append((a, k))
    used = set()
    out = []
    starts = [v for v in adj if len(adj[v]) != 2] + list(adj)
    for s in starts:
        for nb, k in adj[s]:
            if k in used:
                continue
            nodes = [s]
            cur, seg = nb, k
            while True:
                used.add(seg)
                nodes.append(cur)
                nxt = [(v, kk) for v, kk in adj[cur] if kk not in used]
                if len(adj[cur]) != 2 or not nxt:
                    break
                cur, seg = nxt[0]
            closed = nodes[0] == nodes[-1]
            pts = [np.array(_node_pos(field_, nodes[0], epts, cells), dtype=float)]
            for v in nodes[1:]:
                p = np.array(_node_pos(field_, v, epts, cells), dtype=float)
                if field_.periodic:
                    p = pts[-1] + wrap_signed(p - pts[-1])
                pts.append(p)
            out.append(Polyline(nodes, np.array(pts), closed))
    return out


# ---------------------------------------------------------------------------
# jumps


@dataclass
class JumpCovector:
    q: np.ndarray
    tangent: np.ndarray
    df_minus: np.ndarray
    df_plus: np.ndarray
    polyline: int
    node: tuple

    @property
    def jump(self):
        return self.df_minus - self.df_plus

    @property
    def residual(self):
        j = self.jump
        nj = float(np.linalg.norm(j))
        return abs(float(j @ self.tangent)) / nj if nj > 0 else math.inf


def _d1(a, b, c):
    """Derivative at ``b`` of the parabola through ``a, b, c`` in chord-length parameter."""
    h1 = np.linalg.norm(b - a)
    h2 = np.linalg.norm(c - b)
    return -h2 / (h1 * (h1 + h2)) * a + (h2 - h1) / (h1 * h2) * b + h1 / (h2 * (h1 + h2)) * c


def _d1_end(p0, p1, p2):
    """One-sided second-order derivative at ``p0``."""
    h1 = np.linalg.norm(p1 - p0)
    h2 = np.linalg.norm(p2 - p1)
    return -(2 * h1 + h2) / (h1 * (h1 + h2)) * p0 + (h1 + h2) / (h1 * h2) * p1 - h1 / (h2 * (h1 + h2)) * p2


def _tangent(pts, k, closed, min_gap=1e-9):
    """Unit tangent at sample ``k``; neighbours closer than ``min_gap`` (S1 through a grid vertex) are skipped."""
    m = len(pts)
    shift = pts[-1] - pts[0] if closed else None
    period = m - 1

    def at(i):
        if not closed:
            return pts[i] if 0 <= i < m else None
        return pts[i % period] + (i // period) * shift

    def step(d):
        out = []
        i = k
        while len(out) < 2:
            i += d
            if not closed and not 0 <= i < m:
                break
            if closed and abs(i - k) >= period:
                break
            p = at(i)
            ref = out[-1] if out else pts[k]
            if np.linalg.norm(p - ref) > min_gap:
                out.append(p)
        return out

    back, fwd = step(-1), step(1)
    b = pts[k]
    if back and fwd:
        t = _d1(back[0], b, fwd[0])
    elif len(fwd) == 2:
        t = _d1_end(b, fwd[0], fwd[1])
    elif len(back) == 2:
        t = -_d1_end(b, back[0], back[1])
    else:
        t = (fwd[0] - b) if fwd else (b - back[0])
    return t / np.linalg.norm(t)


def _edge_vector(field_, key):
    return _edge_geometry(field_, key)[1]


def jump_covectors(field_: SelectorField2D, strata: SingularStratum):
    """One-sided covectors at every ``S1`` sample; ``df_plus`` is the sheet on the left of the polyline."""
    out = []
    for k, pl in enumerate(strata.S1):
        m = len(pl.points)
        for a, node in enumerate(pl.nodes):
            if node[0] != "E" or (pl.closed and a == m - 1):
                continue
            e = strata.epoints[node[1]]
            if not e.ok:
                strata.log.append(f"stencil: skipped S1 sample on edge {node[1]}")
                continue
            t = _tangent(pl.points, a, pl.closed)
            v = _edge_vector(field_, node[1])
            side1_left = _cross(t, v) > 0
            plus, minus = (e.cov[1], e.cov[0]) if side1_left else (e.cov[0], e.cov[1])
            out.append(JumpCovector(pl.points[a], t, np.asarray(minus), np.asarray(plus), k, node))
    return out


def conormal_residual(jumps, strata: SingularStratum = None, tol: float = None, zero_jump=1e-12):
    """``max |<jump, tangent>| / |jump|`` over the ``S1`` samples; zero jumps are flagged, not counted."""
    res = 0.0
    spurious = []
    for j in jumps:
        if float(np.linalg.norm(j.jump)) <= zero_jump:
            spurious.append(j.node)
            continue
        res = max(res, j.residual)
    if strata is not None and spurious:
        strata.log.append(f"spurious S1 points with zero jump: {len(spurious)}")
    if tol is not None and res > tol:
        raise PreconditionError(f"conormal residual {res:.3g} exceeds {tol:.3g}")
    return res


# ---------------------------------------------------------------------------
# the cycle


@dataclass
class LagrangianCycle:
    vertices: np.ndarray
    keys: list
    selector: list
    cliff: list
    simplices: list
    micro_support: list
    frame: np.ndarray

    def triangles(self):
        for tag, tris in (("selector", self.selector), ("cliff", self.cliff), ("simplex", self.simplices)):
            for t in tris:
                yield tag, t

    def to_off(self) -> str:
        tris = list(self.triangles())
        lines = ["OFF", f"{len(self.vertices)} {len(tris)} 0"]
        lines += [" ".join(f"{x:.12g}" for x in v) for v in self.vertices]
        lines += [f"3 {a} {b} {c} {tag}" for tag, (a, b, c) in tris]
        return "\n".join(lines) + "\n"


class _Mesh:
    def __init__(self, field_):
        self.field = field_
        self.ids = {}
        self.coords = []
        self.frame = []

    def vid(self, key, q, p, frame=False):
        if key not in self.ids:
            self.ids[key] = len(self.coords)
            q = np.mod(q, TWO_PI) if self.field.periodic else np.asarray(q)
            self.coords.append([q[0], q[1], p[0], p[1]])
            self.frame.append(frame)
        return self.ids[key]


def build_cliffwall_cycle(field_: SelectorField2D, strata: SingularStratum, jumps=None,
                          tol: float = 1e-2) -> LagrangianCycle:
    """Selector triangles + cliff strips + triple-point simplices, oriented by the base orientation."""
    if jumps is not None:
        conormal_residual(jumps, strata, tol)
    n = field_.n
    ncell = n if field_.periodic else n - 1
    mesh = _Mesh(field_)
    sel, cliff, simp = [], [], []
    epts = strata.epoints

    def corner(c):
        frame = not field_.periodic and (c[0] in (0, n - 1) or c[1] in (0, n - 1))
        return mesh.vid(("C",) + c, np.array([field_.axis[c[0]], field_.axis[c[1]]]), field_.df[c], frame)

    def ev(key, side):
        e = epts[key]
        return mesh.vid(("E", key, side), e.pos, e.cov[side], e.frame)

    for i in range(ncell):
        for j in range(ncell):
            cs = _cell_corners(field_, i, j)
            ek = _cell_edges(field_, i, j)
            info = strata.cells.get((i, j))
            cv = [corner(c) for c in cs]
            if info is None:
                sel += [(cv[0], cv[1], cv[2]), (cv[0], cv[2], cv[3])]
                continue
            D = info["D"]
            ein = {k: ev(ek[k], _IN_SIDE[k]) for k in D}
            eout = {k: ev(ek[k], _OUT_SIDE[k]) for k in D}
            # boundary walk: corner k, then (in, out) of edge k if it is discontinuous
            if info["end"] is not None:
                k = D[0]
                pos, cov = info["end"]
                x = mesh.vid(("X", i, j), pos, cov)
                poly = [eout[k]] + [cv[(k + 1 + m) % 4] for m in range(4)] + [ein[k]]
                sel += _fan(x, poly)
                cliff.append((ein[k], eout[k], x))
            elif info["triple"] is not None:
                x, covs, regions = info["triple"]
                T = [mesh.vid(("T", i, j, r), x, covs[r]) for r in range(3)]
                for r, (first, last_edge) in enumerate(regions):
                    start_edge = D[r]
                    poly = [eout[start_edge]]
                    c = first
                    while True:
                        poly.append(cv[c])
                        if c == last_edge:
                            break
                        c = (c + 1) % 4
                    poly.append(ein[last_edge])
                    sel += _fan(T[r], poly)
                for r, k in enumerate(D):
                    after, before = r, (r - 1) % 3
                    cliff += [(ein[k], eout[k], T[after]), (ein[k], T[after], T[before])]
                simp.append((T[0], T[1], T[2]))
            else:
                partner = {}
                for a, b in info["pairs"]:
                    partner[a], partner[b] = b, a
                done = set()
                for s in D:
                    if s in done:
                        continue
                    poly = []
                    k = s
                    while True:
                        done.add(k)
                        poly.append(eout[k])
                        c = (k + 1) % 4
                        while c not in D:
                            poly.append(cv[c])
                            c = (c + 1) % 4
                        poly.append(cv[c])
                        poly.append(ein[c])
                        k = partner[c]
                        if k == s:
                            break
                    sel += _fan(poly[0], poly[1:])
                for a, b in info["pairs"]:
                    cliff += [(ein[a], eout[a], ein[b]), (ein[a], ein[b], eout[b])]
    micro = [(j.q, j.df_plus, j.jump) for j in (jumps or [])]
    V = np.array(mesh.coords) if mesh.coords else np.zeros((0, 4))
    return LagrangianCycle(V, list(mesh.ids), sel, cliff, simp, micro, np.array(mesh.frame, dtype=bool))


def _fan(apex, poly):
    """Triangles of the polygon ``apex, poly[0], ..., poly[-1]`` fanned from ``apex``."""
    return [(apex, poly[k], poly[k + 1]) for k in range(len(poly) - 1)]


def _edge_counts(tris, oriented=False):
    c = Counter()
    for a, b, d in tris:
        for u, v in ((a, b), (b, d), (d, a)):
            if oriented:
                c[(u, v)] += 1
                c[(v, u)] -= 1
            else:
                c[frozenset((u, v))] += 1
    return c


def verify_mod2_cycle(cycle: LagrangianCycle):
    """Unmatched edges of the mod-2 boundary (patch-frame edges excluded) and the orientation relation."""
    tris = [t for _, t in cycle.triangles()]
    bad = [t for t in tris if len(set(t)) < 3]
    counts = _edge_counts(tris)
    frame = cycle.frame
    defect = [e for e, m in counts.items() if m % 2 and not all(frame[v] for v in e)]
    # oriented: selector + cliff boundaries cancel on every edge they share
    orient = _edge_counts(cycle.selector + cycle.cliff, oriented=True)
    sel_edges = _edge_counts(cycle.selector)
    cliff_edges = _edge_counts(cycle.cliff)
    shared = [e for e in sel_edges if e in cliff_edges]
    mism = 0
    for e in shared:
        u, v = tuple(e)
        if orient[(u, v)] != 0:
            mism += 1
    return {"check": "mod2_cycle", "defect": len(defect), "degenerate_triangles": len(bad),
            "shared_edges": len(shared), "orientation_mismatches": mism,
            "triangles": {"selector": len(cycle.selector), "cliff": len(cycle.cliff),
                          "simplex": len(cycle.simplices)},
            "pass": len(defect) == 0 and not bad and mism == 0}


# ---------------------------------------------------------------------------
# pipeline


def analyze_field(field_: SelectorField2D, tol: float = 1e-2):
    strata = extract_strata(field_)
    jumps = jump_covectors(field_, strata)
    res = conormal_residual(jumps, strata)
    cycle = build_cliffwall_cycle(field_, strata, jumps, tol=None)
    rep = verify_mod2_cycle(cycle)
    rep.update({"conormal_residual": res, "conormal_tol": tol, "n_S1": len(strata.S1),
                "n_triple": len(strata.triple_points), "n_caustic": len(strata.caustic_points),
                "n_samples": len(jumps), "fd_residual": field_.fd_residual(),
                "log": list(strata.log), "provenance": field_.provenance})
    rep["pass"] = bool(rep["pass"] and res <= tol)
    return strata, jumps, cycle, rep


def eps_sweep(eps_list=(0.0, 0.02, 0.05, 0.1), n: int = 64, **kw):
    """Run the perturbed product for each ``eps``; ``A1 x A1`` points show up as rejections."""
    rows = []
    for eps in eps_list:
        H = perturbed_product(eps=eps, **kw)
        try:
            fld = sample_selector_2d(H, n)
            _, _, _, rep = analyze_field(fld)
            rows.append({"eps": eps, "status": "ok", "n_triple": rep["n_triple"], "defect": rep["defect"],
                         "conormal_residual": rep["conormal_residual"]})
        except DegenerateError as exc:
            rows.append({"eps": eps, "status": "non-generic", "reason": str(exc)})
    return rows
