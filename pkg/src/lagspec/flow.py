"""Hamiltonian flows with simultaneous action accumulation.

The integrator is the implicit midpoint rule, solved by vectorised fixed-point
iteration.  The action ``A(t) = int p dq - int H dt`` is carried as an extra
component, ``dA = p_mid . dq - dt H(t_mid, z_mid)``, so that it is consistent
with the discrete flow to the same (second) order.

Time-one maps of composite Hamiltonians are assembled from their factors:
a product ``H # F`` flows ``F`` and then ``H``, a concatenation runs its halves
in turn, a reflection conjugates by ``(q, p) -> (q, -p)`` and a time reversal
runs the inner flow backwards.  Endpoints and accumulated actions agree with
those of the literal composite flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from lagspec.errors import IntegratorError, PreconditionError
from lagspec.phase_space import (
    TWO_PI,
    BasePoint,
    Concatenate,
    Hamiltonian,
    Inverse,
    Metric,
    PhasePoint,
    Product,
    Reflect,
    Reparametrize,
    TimeReverse,
    Zero,
    wrap_signed,
)

MAX_ITER = 60
MAX_DEPTH = 10


def _midpoint_step(H, t, dt, q, p, depth=0):
    """One implicit-midpoint step for a batch; returns ``(q1, p1, dA)``."""
    tm = t + 0.5 * dt
    _, hq, hp = H.evaluate(tm, q, p)
    qm = q + 0.5 * dt * hp
    pm = p - 0.5 * dt * hq
    scale = 1.0 + np.abs(q).max(axis=1) + np.abs(p).max(axis=1)
    tol = 1e-14 * scale
    err = np.full(q.shape[0], np.inf)
    for _ in range(MAX_ITER):
        _, hq, hp = H.evaluate(tm, qm, pm)
        qn = q + 0.5 * dt * hp
        pn = p - 0.5 * dt * hq
        err = np.maximum(np.abs(qn - qm).max(axis=1), np.abs(pn - pm).max(axis=1))
        qm, pm = qn, pn
        if np.all(err <= tol):
            break
    v = H.evaluate(tm, qm, pm)[0]
    q1 = 2.0 * qm - q
    p1 = 2.0 * pm - p
    dA = np.sum(pm * (q1 - q), axis=1) - dt * v
    bad = ~(err <= 10.0 * tol)
    if np.any(bad):
        if depth >= MAX_DEPTH:
            raise IntegratorError(
                "implicit midpoint iteration did not converge at the step floor",
                {"t": t, "dt": dt, "points": int(bad.sum()), "residual": float(np.nanmax(err))},
            )
        qb, pb = q[bad], p[bad]
        qh, ph, a1 = _midpoint_step(H, t, 0.5 * dt, qb, pb, depth + 1)
        qh, ph, a2 = _midpoint_step(H, t + 0.5 * dt, 0.5 * dt, qh, ph, depth + 1)
        q1[bad], p1[bad], dA[bad] = qh, ph, a1 + a2
    return q1, p1, dA


def _as_batch(q, p):
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    if q.ndim == 1:
        q = q[:, None]
    if p.ndim == 1:
        p = p[:, None]
    return q, p


def flow_points(H: Hamiltonian, q, p, t0: float, t1: float, steps: int, record=False):
    """Integrate ``X_H`` from ``t0`` to ``t1`` (either direction) with ``steps`` equal steps.

    Returns ``(q, p, A)`` at ``t1``; with ``record=True`` also the stacked
    history ``(qs, ps, As)`` of shape ``(steps + 1, n, ...)``.
    """
    q, p = _as_batch(q, p)
    A = np.zeros(q.shape[0])
    if isinstance(H, Zero) or steps == 0 or t0 == t1:
        if record:
            return q, p, A, (q[None], p[None], A[None])
        return q, p, A
    dt = (t1 - t0) / steps
    hist = ([q], [p], [A]) if record else None
    for k in range(steps):
        q, p, dA = _midpoint_step(H, t0 + k * dt, dt, q, p)
        A = A + dA
        if record:
            hist[0].append(q), hist[1].append(p), hist[2].append(A)
    if record:
        return q, p, A, tuple(np.stack(h) for h in hist)
    return q, p, A


def _contains_lazy(H) -> bool:
    if isinstance(H, (Product, Inverse)):
        return True
    return any(_contains_lazy(c) for c in H.children())


def _leaf(H, q, p, steps, forward, richardson):
    t0, t1 = (0.0, 1.0) if forward else (1.0, 0.0)
    a = flow_points(H, q, p, t0, t1, steps)
    if not richardson:
        return a
    b = flow_points(H, q, p, t0, t1, 2 * steps)
    return tuple((4.0 * y - x) / 3.0 for x, y in zip(a, b))


def endpoint_map(H: Hamiltonian, q, p, steps=128, forward=True, richardson=False):
    """Time-one map (or its inverse) with accumulated action.

    ``forward=True`` returns ``(phi_H^1(x), A)``; ``forward=False`` returns
    ``((phi_H^1)^{-1}(x), A~)`` where ``A~`` is the action of the
    time-reversed Hamiltonian along its chord from ``x``.
    """
    q, p = _as_batch(q, p)
    if isinstance(H, Zero):
        return q, p, np.zeros(q.shape[0])
    if isinstance(H, Product):
        order = (H.inner, H.outer) if forward else (H.outer, H.inner)
        q1, p1, a1 = endpoint_map(order[0], q, p, steps, forward, richardson)
        q2, p2, a2 = endpoint_map(order[1], q1, p1, steps, forward, richardson)
        return q2, p2, a1 + a2
    if isinstance(H, Concatenate):
        order = (H.first, H.second) if forward else (H.second, H.first)
        q1, p1, a1 = endpoint_map(order[0], q, p, steps, forward, richardson)
        q2, p2, a2 = endpoint_map(order[1], q1, p1, steps, forward, richardson)
        return q2, p2, a1 + a2
    if isinstance(H, Reflect):
        q1, p1, a1 = endpoint_map(H.inner, q, -p, steps, forward, richardson)
        return q1, -p1, -a1
    if isinstance(H, (TimeReverse, Inverse)):
        return endpoint_map(H.inner, q, p, steps, not forward, richardson)
    if isinstance(H, Reparametrize) and _contains_lazy(H.inner):
        return endpoint_map(H.inner, q, p, steps, forward, richardson)
    if hasattr(H, "tree"):
        return endpoint_map(H.tree, q, p, steps, forward, richardson)
    return _leaf(H, q, p, steps, forward, richardson)


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    action: np.ndarray

    @property
    def samples(self):
        return [(float(t), PhasePoint.of(q, p)) for t, q, p in zip(self.t, self.q, self.p)]

    @property
    def end(self):
        return self.q[-1], self.p[-1], float(self.action[-1])


def _product_history(H: Product, q, p, steps):
    """Samples of ``phi_H^t o phi_F^t`` and its action at ``t_k = k / steps``."""
    _, _, _, (qf, pf, af) = _trajectory_history(H.inner, q, p, steps)
    qf, pf = qf[:, 0], pf[:, 0]
    n = steps + 1
    qs, ps = qf.copy(), pf.copy()
    acc = np.zeros(n)
    dt = 1.0 / steps
    for j in range(steps):
        active = np.arange(n) > j
        # point k runs the outer flow over [0, t_k]; with uniform dt it is active for j < k
        q1, p1, dA = _midpoint_step(H.outer, j * dt, dt, qs[active], ps[active])
        qs[active], ps[active] = q1, p1
        acc[active] += dA
    return qs, ps, af[:, 0] + acc


def _trajectory_history(H, q, p, steps):
    if isinstance(H, Product):
        qs, ps, As = _product_history(H, q, p, steps)
        return qs[-1:], ps[-1:], As[-1:], (qs[:, None], ps[:, None], As[:, None])
    if hasattr(H, "tree"):
        return _trajectory_history(H.tree, q, p, steps)
    return flow_points(H, q, p, 0.0, 1.0, steps, record=True)


def integrate_trajectory(H: Hamiltonian, q0: BasePoint, steps: int = 128, richardson=False) -> Trajectory:
    """Trajectory of the zero-section point ``q0`` with accumulated action."""
    if steps < 16:
        raise PreconditionError("steps must be at least 16")
    if isinstance(q0, BasePoint):
        q = np.asarray(q0.coordinates)[None, :]
    else:
        q = np.atleast_1d(np.asarray(q0, dtype=float))[None, :]
    if q.shape[1] != H.dim:
        raise PreconditionError("base point and Hamiltonian dimensions differ")
    p = np.zeros_like(q)
    _, _, _, (qs, ps, As) = _trajectory_history(H, q, p, steps)
    qs, ps, As = qs[:, 0], ps[:, 0], As[:, 0]
    if richardson:
        _, _, _, (q2, p2, A2) = _trajectory_history(H, q, p, 2 * steps)
        qs = (4.0 * q2[::2, 0] - qs) / 3.0
        ps = (4.0 * p2[::2, 0] - ps) / 3.0
        As = (4.0 * A2[::2, 0] - As) / 3.0
    t = np.linspace(0.0, 1.0, steps + 1)
    return Trajectory(t, qs, ps, As)


# ---------------------------------------------------------------------------
# time-one curves on T*S^1


@dataclass
class LagrangianCurve:
    """Sampled closed curve ``L = phi_H^1(o_N)`` on ``T*S^1`` with actions.

    ``Q`` is a lift to the universal cover with ``Q(s + 1) = Q(s) + 2 pi``.
    When the generating Hamiltonian is attached, :meth:`evaluate` re-flows
    exact points; otherwise periodic splines interpolate the samples.
    """

    s: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    h: np.ndarray
    dQ: np.ndarray = None
    dP: np.ndarray = None
    hamiltonian: Hamiltonian = None
    steps: int = 128
    richardson: bool = True
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        if self.dQ is None or self.dP is None:
            self.dQ, self.dP = _periodic_gradient(self.s, self.Q, self.P)
        self._splines = None

    @property
    def n(self):
        return len(self.s)

    @classmethod
    def from_samples(cls, s, Q, P, h, **kw):
        return cls(np.asarray(s), np.asarray(Q), np.asarray(P), np.asarray(h), **kw)

    def _spline_set(self):
        if self._splines is None:
            ss = np.append(self.s, self.s[0] + 1.0)
            Qs = np.append(self.Q - TWO_PI * self.s, self.Q[0] - TWO_PI * self.s[0])
            self._splines = tuple(
                CubicSpline(ss, np.append(v, v[0]), bc_type="periodic")
                for v in (Qs, self.P, self.h)
            )
        return self._splines

    def evaluate(self, s):
        """``(Q, P, h)`` at parameters ``s`` (array), exact when a Hamiltonian is attached."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if self.hamiltonian is not None:
            Q, P, A = endpoint_map(self.hamiltonian, TWO_PI * s, np.zeros_like(s),
                                   self.steps, True, self.richardson)
            return Q[:, 0], P[:, 0], A
        fr = np.floor(s)
        sq, sp, sh = self._spline_set()
        u = s - fr
        return sq(u) + TWO_PI * s, sp(u), sh(u)

    def circulation(self) -> float:
        """``oint P dQ`` by the trapezoid rule over the closed polygon."""
        Qn = np.append(self.Q, self.Q[0] + TWO_PI)
        Pn = np.append(self.P, self.P[0])
        return float(np.sum(0.5 * (Pn[1:] + Pn[:-1]) * np.diff(Qn)))

    def exactness_residual(self) -> float:
        """Max over sample gaps of ``|dh - P dQ|`` (midpoint rule), relative to the gap."""
        Qn = np.append(self.Q, self.Q[0] + TWO_PI)
        Pn = np.append(self.P, self.P[0])
        hn = np.append(self.h, self.h[0])
        dh = np.diff(hn)
        pdq = 0.5 * (Pn[1:] + Pn[:-1]) * np.diff(Qn)
        return float(np.max(np.abs(dh - pdq)))

    def self_intersections(self):
        """Index pairs of non-adjacent polygon edges that cross on the cylinder."""
        Qn = np.append(self.Q, self.Q[0] + TWO_PI)
        Pn = np.append(self.P, self.P[0])
        a = np.stack([Qn[:-1], Pn[:-1]], 1)
        b = np.stack([Qn[1:], Pn[1:]], 1)
        m = len(a)
        hits = set()
        for shift in (-TWO_PI, 0.0, TWO_PI):
            c = a + [shift, 0.0]
            d = b + [shift, 0.0]
            for i in range(m):
                o1 = _orient(a[i], b[i], c)
                o2 = _orient(a[i], b[i], d)
                o3 = _orient_many(c, d, a[i])
                o4 = _orient_many(c, d, b[i])
                for j in np.nonzero((o1 * o2 < 0) & (o3 * o4 < 0))[0]:
                    j = int(j)
                    if (i - j) % m in (0, 1, m - 1):
                        continue
                    hits.add((min(i, j), max(i, j)))
        return sorted(hits)

    def to_rows(self):
        return [(float(s), float(Q), float(P), float(h))
                for s, Q, P, h in zip(self.s, self.Q, self.P, self.h)]


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[:, 1] - a[1]) - (b[1] - a[1]) * (c[:, 0] - a[0])


def _orient_many(a, b, c):
    return (b[:, 0] - a[:, 0]) * (c[1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[0] - a[:, 0])


def _periodic_gradient(s, Q, P):
    """Non-uniform central differences on the closed parameter circle."""
    sp = np.concatenate([[s[-1] - 1.0], s, [s[0] + 1.0]])
    Qp = np.concatenate([[Q[-1] - TWO_PI], Q, [Q[0] + TWO_PI]])
    Pp = np.concatenate([[P[-1]], P, [P[0]]])
    dQ = np.gradient(Qp, sp)[1:-1]
    dP = np.gradient(Pp, sp)[1:-1]
    return dQ, dP


def time_one_curve(H: Hamiltonian, n: int = 512, steps: int = 128, richardson: bool = True,
                   refine: bool = True) -> LagrangianCurve:
    """Image of the zero section under ``phi_H^1`` with per-point actions.

    Samples start on a uniform grid ``q = 2 pi s``.  Near caustics, where
    ``|dQ/ds|`` drops below 1% of its median, intervals are bisected (two
    rounds) so that folds are resolved.
    """
    if H.dim != 1:
        raise PreconditionError("time_one_curve is defined on T*S^1")
    if n < 256:
        raise PreconditionError("n must be at least 256")
    s = np.arange(n) / n
    Q, P, A = endpoint_map(H, TWO_PI * s, np.zeros(n), steps, True, richardson)
    Q, P = Q[:, 0], P[:, 0]
    if refine:
        for _ in range(2):
            dQ, _ = _periodic_gradient(s, Q, P)
            med = np.median(np.abs(dQ))
            slow = np.abs(dQ) < 1e-2 * med
            if not np.any(slow):
                break
            nxt = np.roll(slow, -1) | slow
            sn = np.append(s, 1.0)
            mids = 0.5 * (sn[:-1] + sn[1:])[nxt]
            Qm, Pm, Am = endpoint_map(H, TWO_PI * mids, np.zeros_like(mids), steps, True, richardson)
            s = np.concatenate([s, mids])
            Q = np.concatenate([Q, Qm[:, 0]])
            P = np.concatenate([P, Pm[:, 0]])
            A = np.concatenate([A, Am])
            order = np.argsort(s)
            s, Q, P, A = s[order], Q[order], P[order], A[order]
    return LagrangianCurve(s, Q, P, A, hamiltonian=H, steps=steps, richardson=richardson)


def flow_grid_2d(H: Hamiltonian, n: int, steps: int = 64, richardson=False):
    """Time-one image of a uniform ``n x n`` zero-section grid on ``T*T^2``.

    Returns ``(s, Q, P, h)`` with ``s`` and ``Q``, ``P`` of shape ``(n, n, 2)``
    and ``h`` of shape ``(n, n)``; ``Q`` is unwrapped.
    """
    if H.dim != 2:
        raise PreconditionError("flow_grid_2d needs a Hamiltonian on T*T^2")
    g = TWO_PI * np.arange(n) / n
    s = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    Q, P, A = endpoint_map(H, s, np.zeros_like(s), steps, True, richardson)
    return s.reshape(n, n, 2), Q.reshape(n, n, 2), P.reshape(n, n, 2), A.reshape(n, n)


# ---------------------------------------------------------------------------
# norms


def _hvalue(H, t, q, p):
    if hasattr(H, "value"):
        return H.value(t, q, p)
    return H.evaluate(t, q, p)[0]


def hofer_norm(H: Hamiltonian, t_samples: int = 64, x_samples: int = 64) -> float:
    """``int_0^1 osc(H_t) dt`` over the support disc bundle plus the value at infinity.

    Time uses the midpoint rule; space a uniform grid in ``q`` and ``p``
    (coarsened to at most 24 points per axis on ``T*T^2``).
    """
    if t_samples < 64 or x_samples < 64:
        raise PreconditionError("sampling resolutions must be at least 64")
    if isinstance(H, Zero):
        return 0.0
    d = H.dim
    R = H.support_radius
    m = x_samples if d == 1 else min(x_samples, 24)
    qg = TWO_PI * np.arange(m) / m
    pg = np.linspace(-R, R, m + 1)
    axes = [qg] * d + [pg] * d
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 2 * d)
    q, p = mesh[:, :d], mesh[:, d:]
    total = 0.0
    for t in (np.arange(t_samples) + 0.5) / t_samples:
        v = _hvalue(H, float(t), q, p)
        cinf = H.c_inf(float(t))
        total += max(v.max(), cinf) - min(v.min(), cinf)
    return float(total / t_samples)


def osc_c0(H: Hamiltonian, n: int = 256, steps: int = 128) -> float:
    """``max_x max(d(phi(x), x), d(phi^{-1}(x), x))`` over a zero-section grid (``phi = phi_H^1``)."""
    if n < 256:
        raise PreconditionError("n must be at least 256")
    if isinstance(H, Zero):
        return 0.0
    d = H.dim
    if d == 1:
        q = (TWO_PI * np.arange(n) / n)[:, None]
    else:
        m = int(math.ceil(math.sqrt(n)))
        g = TWO_PI * np.arange(m) / m
        q = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    p = np.zeros_like(q)
    best = 0.0
    for forward in (True, False):
        Q, P, _ = endpoint_map(H, q, p, steps, forward, False)
        dist = Metric.distance(Q, P, q, p)
        best = max(best, float(dist.max()))
    return best
