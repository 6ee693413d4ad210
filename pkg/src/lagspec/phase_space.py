"""Phase-space model on T*S^1 and T*T^2 and the algebra of Hamiltonians.

Coordinates are canonical ``(q, p)`` with ``omega = dq ^ dp`` so that the
Hamiltonian vector field is ``X_H = (dH/dp, -dH/dq)``.  Every Hamiltonian is
vectorised: ``evaluate(t, q, p)`` takes arrays of shape ``(n, d)`` and returns
``(H, dH/dq, dH/dp)`` with shapes ``(n,)``, ``(n, d)``, ``(n, d)``.

Base angles are carried *unwrapped* during integration; wrapping to
``[0, 2 pi)`` only happens in :class:`BasePoint` and in the metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import ClassVar, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from lagspec.errors import PreconditionError, StructureError

TWO_PI = 2.0 * math.pi

# boundary-flat time reparametrisation: chi(0)=0, chi(1)=1, chi'=chi''=0 at both ends
SMOOTHSTEP = (0.0, 0.0, 0.0, 10.0, -15.0, 6.0)


def wrap_angle(q):
    """Wrap to ``[0, 2 pi)``; tiny negative inputs would otherwise round up to ``2 pi``."""
    w = np.mod(q, TWO_PI)
    return np.where(w >= TWO_PI, 0.0, w) if np.ndim(w) else (0.0 if w >= TWO_PI else w)


def wrap_signed(q):
    """Wrap to ``[-pi, pi)``."""
    return np.mod(np.asarray(q) + math.pi, TWO_PI) - math.pi


@dataclass(frozen=True)
class BasePoint:
    coordinates: tuple

    def __post_init__(self):
        c = tuple(float(x) % TWO_PI for x in np.atleast_1d(self.coordinates))
        if len(c) not in (1, 2):
            raise PreconditionError("base dimension must be 1 or 2")
        object.__setattr__(self, "coordinates", c)

    @property
    def dim(self):
        return len(self.coordinates)

    def distance(self, other: "BasePoint") -> float:
        d = wrap_signed(np.subtract(self.coordinates, other.coordinates))
        return float(np.sqrt(np.sum(d * d)))


@dataclass(frozen=True)
class PhasePoint:
    base: BasePoint
    momentum: tuple

    def __post_init__(self):
        m = tuple(float(x) for x in np.atleast_1d(self.momentum))
        if len(m) != self.base.dim:
            raise PreconditionError("momentum and base dimensions differ")
        if not all(math.isfinite(x) for x in m):
            raise PreconditionError("momentum must be finite")
        object.__setattr__(self, "momentum", m)

    @classmethod
    def of(cls, q, p=None):
        q = np.atleast_1d(q)
        p = np.zeros_like(q, dtype=float) if p is None else p
        return cls(BasePoint(tuple(q)), tuple(np.atleast_1d(p)))


@dataclass(frozen=True)
class Metric:
    """Flat product metric on ``T*T^d``.

    In the flat model ``d(o_q, x) >= max(|p(x)|, d(q, q(x)))`` holds for every
    ``x``, so the admissible radius ``r`` is infinite.
    """

    r: float = math.inf

    @staticmethod
    def distance(q1, p1, q2, p2):
        """Product distance between batches of points, each of shape ``(n, d)`` or ``(d,)``."""
        q1, p1, q2, p2 = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (q1, p1, q2, p2))
        dq = wrap_signed(q1 - q2)
        dp = p1 - p2
        return np.sqrt(np.sum(dq * dq, axis=-1) + np.sum(dp * dp, axis=-1))


# ---------------------------------------------------------------------------
# functions on the base torus


class BaseFunction:
    """Smooth function on ``T^d`` with analytic gradient and Hessian."""

    dim: int = 1

    def __call__(self, q):
        return self.value_grad(q)[0]

    def value_grad(self, q):
        raise NotImplementedError

    def hessian(self, q):
        raise NotImplementedError

    def to_descriptor(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Fourier(BaseFunction):
    """``f(q) = sum_j A_j cos(k_j . q + phi_j)``."""

    modes: tuple
    amps: tuple
    phases: tuple

    def __post_init__(self):
        modes = np.atleast_2d(np.asarray(self.modes, dtype=float))
        if modes.shape[0] == 1 and len(self.amps) > 1:
            modes = modes.T
        if modes.shape[0] != len(self.amps) or len(self.amps) != len(self.phases):
            raise StructureError("fourier modes, amps and phases must have equal length")
        object.__setattr__(self, "modes", tuple(map(tuple, modes.tolist())))
        object.__setattr__(self, "amps", tuple(float(a) for a in self.amps))
        object.__setattr__(self, "phases", tuple(float(a) for a in self.phases))

    @property
    def dim(self):
        return len(self.modes[0])

    @classmethod
    def series(cls, cos=(), sin=()):
        """1-D series ``sum a_k cos(kq) + b_k sin(kq)`` with ``k = 1, 2, ...``."""
        modes, amps, phases = [], [], []
        for k, a in enumerate(cos, start=1):
            if a:
                modes.append((k,)), amps.append(a), phases.append(0.0)
        for k, b in enumerate(sin, start=1):
            if b:
                modes.append((k,)), amps.append(b), phases.append(-math.pi / 2)
        if not modes:
            modes, amps, phases = [(1,)], [0.0], [0.0]
        return cls(tuple(modes), tuple(amps), tuple(phases))

    def _arrays(self):
        return (np.asarray(self.modes, dtype=float), np.asarray(self.amps), np.asarray(self.phases))

    def value_grad(self, q):
        q = np.atleast_2d(q)
        k, a, ph = self._arrays()
        arg = q @ k.T + ph
        val = np.cos(arg) @ a
        grad = -(np.sin(arg) * a) @ k
        return val, grad

    def hessian(self, q):
        q = np.atleast_2d(q)
        k, a, ph = self._arrays()
        c = np.cos(np.atleast_2d(q) @ k.T + ph) * a
        return -np.einsum("nj,ja,jb->nab", c, k, k)

    def critical_points(self, n=4096):
        """Non-degenerate critical points of a 1-D series, Newton-polished."""
        if self.dim != 1:
            raise PreconditionError("critical_points is 1-D only")
        s = np.linspace(0.0, TWO_PI, n, endpoint=False)
        g = self.value_grad(s[:, None])[1][:, 0]
        idx = np.nonzero(np.sign(g) != np.sign(np.roll(g, -1)))[0]
        roots = []
        for i in idx:
            x = s[i] + (s[1] - s[0]) * g[i] / (g[i] - g[(i + 1) % n])
            for _ in range(50):
                gx = self.value_grad(np.array([[x]]))[1][0, 0]
                hx = self.hessian(np.array([[x]]))[0, 0, 0]
                dx = gx / hx
                x -= dx
                if abs(dx) < 1e-15:
                    break
            roots.append(x % TWO_PI)
        return np.sort(np.asarray(roots))

    def to_descriptor(self):
        return {"type": "fourier", "modes": [list(m) for m in self.modes],
                "amps": list(self.amps), "phases": list(self.phases)}


@dataclass(frozen=True)
class SlopeBump(BaseFunction):
    """1-D Morse function whose two critical points sit inside an arc ``B``.

    ``f'(q) = -slope + A * (1 - (x/b)^2)^power`` on ``|x| < b`` and
    ``f' = -slope`` elsewhere, where ``x`` is ``q - center`` wrapped to
    ``[-pi, pi)``; ``A`` makes ``f'`` mean-free.
    """

    slope: float
    half_width: float
    center: float = 0.0
    power: int = 4
    scale: float = 1.0

    def __post_init__(self):
        if not (0 < self.half_width < math.pi) or self.slope <= 0:
            raise PreconditionError("slope must be positive and half_width in (0, pi)")

    @property
    def dim(self):
        return 1

    def _bump(self):
        b = self.half_width
        base = Polynomial([1.0, 0.0, -1.0 / b**2]) ** self.power
        integ = base.integ(lbnd=-b)
        amp = TWO_PI * self.slope / integ(b)
        return base, integ, amp

    def value_grad(self, q):
        q = np.atleast_2d(q)[:, 0]
        x = wrap_signed(q - self.center)
        base, integ, amp = self._bump()
        b = self.half_width
        inside = np.abs(x) < b
        xb = np.clip(x, -b, b)
        val = -self.slope * x + amp * integ(xb)
        grad = -self.slope + np.where(inside, amp * base(xb), 0.0)
        # centre the function so that it is mean-free up to a constant shift
        c0 = -self.slope * (-math.pi)
        return self.scale * (val - c0), self.scale * grad[:, None]

    def hessian(self, q):
        q = np.atleast_2d(q)[:, 0]
        x = wrap_signed(q - self.center)
        base, _, amp = self._bump()
        b = self.half_width
        inside = np.abs(x) < b
        return (self.scale * np.where(inside, amp * base.deriv()(np.clip(x, -b, b)), 0.0))[:, None, None]

    def critical_points(self, n=None):
        base, _, amp = self._bump()
        level = self.slope / amp
        x = self.half_width * math.sqrt(1.0 - level ** (1.0 / self.power))
        return np.sort(np.mod(np.array([self.center - x, self.center + x]), TWO_PI))

    def scaled(self, factor):
        return SlopeBump(self.slope, self.half_width, self.center, self.power, self.scale * factor)

    def to_descriptor(self):
        return {"type": "slope_bump", "slope": self.slope, "half_width": self.half_width,
                "center": self.center, "power": self.power, "scale": self.scale}


def base_function_from_descriptor(d: dict) -> BaseFunction:
    kind = d.get("type")
    if kind == "fourier":
        return Fourier(tuple(map(tuple, d["modes"])), tuple(d["amps"]), tuple(d["phases"]))
    if kind == "slope_bump":
        return SlopeBump(d["slope"], d["half_width"], d.get("center", 0.0), d.get("power", 4),
                         d.get("scale", 1.0))
    raise StructureError(f"unknown base function type {kind!r}")


# ---------------------------------------------------------------------------
# radial cut-off used to make Hamiltonians asymptotically constant


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x**3 * (10.0 - 15.0 * x + 6.0 * x * x), 30.0 * x * x * (1.0 - x) ** 2


def fiber_cutoff(p, radius):
    """``(c, dc/dp)`` for a cut-off equal to 1 on ``|p| <= R/2`` and 0 on ``|p| >= R``."""
    r = np.sqrt(np.sum(p * p, axis=-1))
    inner = 0.5 * radius
    if r.size and r.max() <= inner:
        return np.ones_like(r), np.zeros_like(p)
    s, ds = _smoothstep((r - inner) / (radius - inner))
    c = 1.0 - s
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(r[:, None] > 0, p / r[:, None], 0.0)
    dc = -(ds / (radius - inner))[:, None] * unit
    return c, dc


def _as_state(q, p):
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.ndim == 1:
        q = q[:, None]
    if p.ndim == 1:
        p = p[:, None]
    return q, p


# ---------------------------------------------------------------------------
# Hamiltonians

_REGISTRY: dict = {}


def _register(cls):
    _REGISTRY[cls.kind] = cls
    return cls


class Hamiltonian:
    """Time-dependent, asymptotically constant Hamiltonian on ``T*T^d``."""

    kind: ClassVar[str] = "abstract"
    autonomous: ClassVar[bool] = False

    @property
    def dim(self) -> int:
        raise NotImplementedError

    @property
    def support_radius(self) -> float:
        raise NotImplementedError

    def evaluate(self, t, q, p):
        raise NotImplementedError

    def c_inf(self, t) -> float:
        """Value of ``H(t, .)`` outside the support disc bundle."""
        return 0.0

    @property
    def boundary_flat(self) -> bool:
        return False

    def params(self) -> dict:
        raise NotImplementedError

    def to_descriptor(self) -> dict:
        return {"kind": self.kind, **self.params()}

    def children(self):
        return ()

    # algebra sugar
    def __add__(self, other):
        return Sum((self, other), (1.0, 1.0))

    def __mul__(self, c):
        return Sum((self,), (float(c),))

    __rmul__ = __mul__

    def __neg__(self):
        return Sum((self,), (-1.0,))

    def __sub__(self, other):
        return Sum((self, other), (1.0, -1.0))


@_register
@dataclass(frozen=True)
class Zero(Hamiltonian):
    kind: ClassVar[str] = "zero"
    autonomous: ClassVar[bool] = True
    dimension: int = 1

    @property
    def dim(self):
        return self.dimension

    @property
    def support_radius(self):
        return 1.0

    @property
    def boundary_flat(self):
        return True

    def evaluate(self, t, q, p):
        q, p = _as_state(q, p)
        return np.zeros(q.shape[0]), np.zeros_like(q), np.zeros_like(p)

    def params(self):
        return {"dimension": self.dimension}


@_register
@dataclass(frozen=True)
class TimeConstant(Hamiltonian):
    """``H(t, x) = c(t)`` with ``c`` a polynomial in ``t`` (coefficients low to high)."""

    kind: ClassVar[str] = "constant"
    coeffs: tuple = (1.0,)
    dimension: int = 1

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in np.atleast_1d(self.coeffs)))

    @property
    def dim(self):
        return self.dimension

    @property
    def support_radius(self):
        return 1.0

    def c(self, t):
        return float(Polynomial(self.coeffs)(t))

    def c_inf(self, t):
        return self.c(t)

    def integral(self):
        return float(Polynomial(self.coeffs).integ()(1.0))

    def evaluate(self, t, q, p):
        q, p = _as_state(q, p)
        return np.full(q.shape[0], self.c(t)), np.zeros_like(q), np.zeros_like(p)

    def params(self):
        return {"coeffs": list(self.coeffs), "dimension": self.dimension}


@_register
@dataclass(frozen=True)
class BaseLift(Hamiltonian):
    """``H(x) = f(pi(x))`` inside the disc bundle of radius ``R/2``, cut off to 0 at ``R``."""

    kind: ClassVar[str] = "base_lift"
    autonomous: ClassVar[bool] = True
    f: BaseFunction
    radius: float = 4.0

    @property
    def dim(self):
        return self.f.dim

    @property
    def support_radius(self):
        return self.radius

    def evaluate(self, t, q, p):
        q, p = _as_state(q, p)
        fv, fg = self.f.value_grad(q)
        c, dc = fiber_cutoff(p, self.radius)
        return c * fv, c[:, None] * fg, dc * fv[:, None]

    def params(self):
        return {"f": self.f.to_descriptor(), "radius": self.radius}


@_register
@dataclass(frozen=True)
class Fiberwise(Hamiltonian):
    """``H(x) = eta(p) = p^T K p / 2`` with the same radial cut-off as :class:`BaseLift`."""

    kind: ClassVar[str] = "fiberwise"
    autonomous: ClassVar[bool] = True
    K: tuple = ((1.0,),)
    radius: float = 4.0

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        if K.shape[0] != K.shape[1] or not np.allclose(K, K.T):
            raise StructureError("fiberwise K must be a symmetric square matrix")
        object.__setattr__(self, "K", tuple(map(tuple, K.tolist())))

    @property
    def dim(self):
        return len(self.K)

    @property
    def support_radius(self):
        return self.radius

    def evaluate(self, t, q, p):
        q, p = _as_state(q, p)
        K = np.asarray(self.K)
        Kp = p @ K
        eta = 0.5 * np.sum(p * Kp, axis=-1)
        c, dc = fiber_cutoff(p, self.radius)
        return c * eta, np.zeros_like(q), c[:, None] * Kp + dc * eta[:, None]

    def params(self):
        return {"K": [list(r) for r in self.K], "radius": self.radius}


def _poly_bump(x, power):
    inside = np.abs(x) < 1.0
    xc = np.where(inside, x, 0.0)
    u = 1.0 - xc * xc
    val = np.where(inside, u**power, 0.0)
    der = np.where(inside, -2.0 * power * xc * u ** (power - 1), 0.0)
    return val, der


@_register
@dataclass(frozen=True)
class Bump(Hamiltonian):
    """Compactly supported product bump ``a * b((q-q0)/wq) * b((p-p0)/wp)`` on T*S^1."""

    kind: ClassVar[str] = "bump"
    autonomous: ClassVar[bool] = True
    amplitude: float = 0.1
    q0: float = math.pi
    p0: float = 0.0
    wq: float = 0.5
    wp: float = 1.0
    power: int = 4

    @property
    def dim(self):
        return 1

    @property
    def support_radius(self):
        return abs(self.p0) + self.wp

    def evaluate(self, t, q, p):
        q, p = _as_state(q, p)
        x = wrap_signed(q[:, 0] - self.q0) / self.wq
        y = (p[:, 0] - self.p0) / self.wp
        bx, dbx = _poly_bump(x, self.power)
        by, dby = _poly_bump(y, self.power)
        a = self.amplitude
        return a * bx * by, (a * dbx * by / self.wq)[:, None], (a * bx * dby / self.wp)[:, None]

    def q_support(self):
        """Closed arc ``[q0 - wq, q0 + wq]`` (unwrapped) carrying the bump."""
        return self.q0 - self.wq, self.q0 + self.wq

    def params(self):
        return {"amplitude": self.amplitude, "q0": self.q0, "p0": self.p0, "wq": self.wq,
                "wp": self.wp, "power": self.power}


@_register
@dataclass(frozen=True)
class Tabulated(Hamiltonian):
    """Autonomous 1-D Hamiltonian tabulated on a periodic-in-q grid, bicubic spline.

    ``values[i, j]`` sits at ``q = 2 pi i / nq`` and ``p = -p_max + 2 p_max j / (np-1)``;
    the result is multiplied by the radial cut-off of radius ``p_max``.
    """

    kind: ClassVar[str] = "tabulated"
    autonomous: ClassVar[bool] = True
    values: tuple = ()
    p_max: float = 4.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 8 or v.shape[1] < 4:
            raise StructureError("tabulated values must be a 2-D grid at least 8x4")
        object.__setattr__(self, "values", tuple(map(tuple, v.tolist())))

    @property
    def dim(self):
        return 1

    @property
    def support_radius(self):
        return self.p_max

    def _spline(self):
        from scipy.interpolate import RectBivariateSpline

        v = np.asarray(self.values)
        nq, npp = v.shape
        pad = 4
        qg = TWO_PI * np.arange(-pad, nq + pad) / nq
        pg = np.linspace(-self.p_max, self.p_max, npp)
        vv = np.concatenate([v[-pad:], v, v[:pad]], axis=0)
        return RectBivariateSpline(qg, pg, vv, kx=3, ky=3)

    def evaluate(self, t, q, p):
        q, p = _as_state(q, p)
        sp = self._spline()
        qq = wrap_angle(q[:, 0])
        pp = np.clip(p[:, 0], -self.p_max, self.p_max)
        v = sp.ev(qq, pp)
        vq = sp.ev(qq, pp, dx=1)
        vp = sp.ev(qq, pp, dy=1)
        c, dc = fiber_cutoff(p, self.p_max)
        return c * v, (c * vq)[:, None], (c * vp)[:, None] + dc * v[:, None]

    def params(self):
        return {"values": [list(r) for r in self.values], "p_max": self.p_max}


@_register
@dataclass(frozen=True)
class Sum(Hamiltonian):
    kind: ClassVar[str] = "sum"
    terms: tuple = ()
    weights: tuple = ()

    def __post_init__(self):
        if not self.terms:
            raise StructureError("sum needs at least one term")
        w = tuple(float(x) for x in (self.weights or (1.0,) * len(self.terms)))
        if len(w) != len(self.terms):
            raise StructureError("sum weights and terms differ in length")
        if len({h.dim for h in self.terms}) != 1:
            raise StructureError("sum terms have different dimensions")
        object.__setattr__(self, "weights", w)

    @property
    def autonomous(self):
        return all(h.autonomous for h in self.terms)

    @property
    def dim(self):
        return self.terms[0].dim

    @property
    def support_radius(self):
        return max(h.support_radius for h in self.terms)

    @property
    def boundary_flat(self):
        return all(h.boundary_flat for h in self.terms)

    def c_inf(self, t):
        return sum(w * h.c_inf(t) for w, h in zip(self.weights, self.terms))

    def evaluate(self, t, q, p):
        q, p = _as_state(q, p)
        v = np.zeros(q.shape[0])
        gq = np.zeros_like(q)
        gp = np.zeros_like(p)
        for w, h in zip(self.weights, self.terms):
            a, b, c = h.evaluate(t, q, p)
            v += w * a
            gq += w * b
            gp += w * c
        return v, gq, gp

    def children(self):
        return self.terms

    def params(self):
        return {"terms": [h.to_descriptor() for h in self.terms], "weights": list(self.weights)}


@_register
@dataclass(frozen=True)
class Reparametrize(Hamiltonian):
    """``H^chi(t, x) = chi'(t) H(chi(t), x)``; ``chi`` is a polynomial, low-to-high coefficients."""

    kind: ClassVar[str] = "reparametrize"
    inner: Hamiltonian = None
    chi: tuple = SMOOTHSTEP

    def __post_init__(self):
        if self.inner is None:
            raise StructureError("reparametrize needs an inner Hamiltonian")
        chi = Polynomial(self.chi)
        if abs(chi(0.0)) > 1e-12 or abs(chi(1.0) - 1.0) > 1e-12:
            raise PreconditionError("reparametrization must satisfy chi(0)=0 and chi(1)=1")
        ts = np.linspace(0.0, 1.0, 2049)
        if np.any(chi.deriv()(ts) < -1e-12):
            raise PreconditionError("reparametrization chi must be monotone")
        object.__setattr__(self, "chi", tuple(float(c) for c in self.chi))

    @property
    def dim(self):
        return self.inner.dim

    @property
    def support_radius(self):
        return self.inner.support_radius

    @property
    def boundary_flat(self):
        d = Polynomial(self.chi).deriv()
        return abs(d(0.0)) < 1e-12 and abs(d(1.0)) < 1e-12

    @cached_property
    def _chi(self):
        chi = tuple(self.chi[::-1])
        dchi = tuple(float(c) for c in np.polyder(np.asarray(chi)))
        return chi, dchi

    def _time(self, t):
        # scalar Horner; this sits in the integrator's inner loop
        chi, dchi = self._chi
        t = float(t)
        s = ds = 0.0
        for c in chi:
            s = s * t + c
        for c in dchi:
            ds = ds * t + c
        return s, ds

    def c_inf(self, t):
        s, ds = self._time(t)
        return ds * self.inner.c_inf(s)

    def evaluate(self, t, q, p):
        s, ds = self._time(t)
        v, gq, gp = self.inner.evaluate(s, q, p)
        return ds * v, ds * gq, ds * gp

    def children(self):
        return (self.inner,)

    def params(self):
        return {"inner": self.inner.to_descriptor(), "chi": list(self.chi)}


@_register
@dataclass(frozen=True)
class Concatenate(Hamiltonian):
    """``H * F``: ``H`` on ``[0, 1/2]`` at double speed, then ``F`` on ``[1/2, 1]``."""

    kind: ClassVar[str] = "concatenate"
    first: Hamiltonian = None
    second: Hamiltonian = None

    def __post_init__(self):
        if self.first is None or self.second is None:
            raise StructureError("concatenate needs two Hamiltonians")
        if self.first.dim != self.second.dim:
            raise StructureError("concatenated Hamiltonians have different dimensions")

    @property
    def dim(self):
        return self.first.dim

    @property
    def support_radius(self):
        return max(self.first.support_radius, self.second.support_radius)

    @property
    def boundary_flat(self):
        return self.first.boundary_flat and self.second.boundary_flat

    def c_inf(self, t):
        if t < 0.5:
            return 2.0 * self.first.c_inf(2.0 * t)
        return 2.0 * self.second.c_inf(2.0 * t - 1.0)

    def evaluate(self, t, q, p):
        if t < 0.5:
            v, a, b = self.first.evaluate(2.0 * t, q, p)
        else:
            v, a, b = self.second.evaluate(2.0 * t - 1.0, q, p)
        return 2.0 * v, 2.0 * a, 2.0 * b

    def children(self):
        return (self.first, self.second)

    def params(self):
        return {"first": self.first.to_descriptor(), "second": self.second.to_descriptor()}


@_register
@dataclass(frozen=True)
class Reflect(Hamiltonian):
    """``H^r(t, q, p) = -H(t, q, -p)``."""

    kind: ClassVar[str] = "reflect"
    inner: Hamiltonian = None

    @property
    def autonomous(self):
        return self.inner.autonomous

    @property
    def dim(self):
        return self.inner.dim

    @property
    def support_radius(self):
        return self.inner.support_radius

    @property
    def boundary_flat(self):
        return self.inner.boundary_flat

    def c_inf(self, t):
        return -self.inner.c_inf(t)

    def evaluate(self, t, q, p):
        q, p = _as_state(q, p)
        v, gq, gp = self.inner.evaluate(t, q, -p)
        return -v, -gq, gp

    def children(self):
        return (self.inner,)

    def params(self):
        return {"inner": self.inner.to_descriptor()}


@_register
@dataclass(frozen=True)
class TimeReverse(Hamiltonian):
    """``H~(t, x) = -H(1 - t, x)``; its time-one map is the inverse of that of ``H``."""

    kind: ClassVar[str] = "time_reverse"
    inner: Hamiltonian = None

    @property
    def autonomous(self):
        return self.inner.autonomous

    @property
    def dim(self):
        return self.inner.dim

    @property
    def support_radius(self):
        return self.inner.support_radius

    @property
    def boundary_flat(self):
        return self.inner.boundary_flat

    def c_inf(self, t):
        return -self.inner.c_inf(1.0 - t)

    def evaluate(self, t, q, p):
        v, gq, gp = self.inner.evaluate(1.0 - t, q, p)
        return -v, -gq, -gp

    def children(self):
        return (self.inner,)

    def params(self):
        return {"inner": self.inner.to_descriptor()}


def _jacobian_fd(mapping, q, p, eps=1e-6):
    """Central-difference Jacobian of ``(q, p) -> (q', p')``; shape ``(n, 2d, 2d)``."""
    n, d = q.shape
    J = np.empty((n, 2 * d, 2 * d))
    for j in range(2 * d):
        dq = np.zeros_like(q)
        dp = np.zeros_like(p)
        if j < d:
            dq[:, j] = eps
        else:
            dp[:, j - d] = eps
        q1, p1 = mapping(q + dq, p + dp)
        q0, p0 = mapping(q - dq, p - dp)
        J[:, :, j] = np.concatenate([q1 - q0, p1 - p0], axis=1) / (2 * eps)
    return J


@_register
@dataclass(frozen=True)
class Product(Hamiltonian):
    """``(H # F)(t, x) = H(t, x) + F(t, (phi_H^t)^{-1}(x))``, generating ``phi_H^t o phi_F^t``.

    Evaluation inverts the flow of ``H`` numerically, so values carry the
    integrator tolerance; flows of a product are integrated sequentially.
    """

    kind: ClassVar[str] = "product"
    outer: Hamiltonian = None
    inner: Hamiltonian = None
    steps: int = 128

    def __post_init__(self):
        if self.outer is None or self.inner is None:
            raise StructureError("product needs two Hamiltonians")
        if self.outer.dim != self.inner.dim:
            raise StructureError("product factors have different dimensions")

    @property
    def autonomous(self):
        return False

    @property
    def dim(self):
        return self.outer.dim

    @property
    def support_radius(self):
        return max(self.outer.support_radius, self.inner.support_radius)

    @property
    def boundary_flat(self):
        return self.outer.boundary_flat and self.inner.boundary_flat

    def c_inf(self, t):
        return self.outer.c_inf(t) + self.inner.c_inf(t)

    def evaluate(self, t, q, p):
        from lagspec.flow import flow_points

        q, p = _as_state(q, p)
        steps = max(8, int(math.ceil(self.steps * t)))

        def back(qq, pp):
            return flow_points(self.outer, qq, pp, t, 0.0, steps)[:2]

        y_q, y_p = back(q, p)
        hv, hq, hp = self.outer.evaluate(t, q, p)
        fv, fq, fp = self.inner.evaluate(t, y_q, y_p)
        if t == 0.0:
            return hv + fv, hq + fq, hp + fp
        J = _jacobian_fd(back, q, p)
        g = np.concatenate([fq, fp], axis=1)
        gx = np.einsum("ni,nij->nj", g, J)
        d = q.shape[1]
        return hv + fv, hq + gx[:, :d], hp + gx[:, d:]

    def children(self):
        return (self.outer, self.inner)

    def params(self):
        return {"outer": self.outer.to_descriptor(), "inner": self.inner.to_descriptor(),
                "steps": self.steps}


@_register
@dataclass(frozen=True)
class Inverse(Hamiltonian):
    """``H-bar(t, x) = -H(t, phi_H^t(x))``, generating ``(phi_H^t)^{-1}``."""

    kind: ClassVar[str] = "inverse"
    inner: Hamiltonian = None
    steps: int = 128

    @property
    def dim(self):
        return self.inner.dim

    @property
    def support_radius(self):
        return self.inner.support_radius

    @property
    def boundary_flat(self):
        return self.inner.boundary_flat

    def c_inf(self, t):
        return -self.inner.c_inf(t)

    def evaluate(self, t, q, p):
        from lagspec.flow import flow_points

        q, p = _as_state(q, p)
        steps = max(8, int(math.ceil(self.steps * t)))

        def fwd(qq, pp):
            return flow_points(self.inner, qq, pp, 0.0, t, steps)[:2]

        y_q, y_p = fwd(q, p)
        v, gq, gp = self.inner.evaluate(t, y_q, y_p)
        if t == 0.0:
            return -v, -gq, -gp
        J = _jacobian_fd(fwd, q, p)
        g = np.concatenate([gq, gp], axis=1)
        gx = np.einsum("ni,nij->nj", g, J)
        d = q.shape[1]
        return -v, -gx[:, :d], -gx[:, d:]

    def children(self):
        return (self.inner,)

    def params(self):
        return {"inner": self.inner.to_descriptor(), "steps": self.steps}


@_register
@dataclass(frozen=True)
class FoldFamily(Hamiltonian):
    """Parametric fold family: flow of ``f o pi`` followed by the fibre shear ``p^T K p / 2``.

    Both halves run with a boundary-flat smoothstep profile, so the result is
    ``Reparametrize(BaseLift(f)) * Reparametrize(Fiberwise(K))``.  The time-one
    image of the zero section is known in closed form (:meth:`exact_curve`),
    which the test-suite uses as an oracle for the integrator.
    """

    kind: ClassVar[str] = "fold"
    f: BaseFunction = None
    K: tuple = ((-1.0,),)
    radius: float = 6.0

    def __post_init__(self):
        if self.f is None:
            raise StructureError("fold family needs a base function")
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        if K.shape != (self.f.dim, self.f.dim):
            raise StructureError("fold K must be d x d with d the base dimension")
        object.__setattr__(self, "K", tuple(map(tuple, K.tolist())))

    @cached_property
    def tree(self) -> Hamiltonian:
        return Concatenate(Reparametrize(BaseLift(self.f, self.radius)),
                           Reparametrize(Fiberwise(self.K, self.radius)))

    @property
    def dim(self):
        return self.f.dim

    @property
    def support_radius(self):
        return self.radius

    @property
    def boundary_flat(self):
        return True

    def evaluate(self, t, q, p):
        return self.tree.evaluate(t, q, p)

    def exact_curve(self, s):
        """Closed-form ``(Q, P, h)`` of the time-one image of the zero-section point ``s``."""
        s = np.atleast_2d(np.asarray(s, dtype=float))
        if s.shape[1] != self.dim:
            s = s.T
        fv, fg = self.f.value_grad(s)
        P = -fg
        KP = P @ np.asarray(self.K)
        Q = s + KP
        h = -fv + 0.5 * np.sum(P * KP, axis=-1)
        return Q, P, h

    def max_momentum(self, n=4096):
        s = np.linspace(0.0, TWO_PI, n, endpoint=False)
        if self.dim == 1:
            pts = s[:, None]
        else:
            g = np.linspace(0.0, TWO_PI, 256, endpoint=False)
            pts = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
        return float(np.max(np.linalg.norm(self.f.value_grad(pts)[1], axis=-1)))

    def params(self):
        return {"f": self.f.to_descriptor(), "K": [list(r) for r in self.K], "radius": self.radius}


# ---------------------------------------------------------------------------
# descriptors


def from_descriptor(d: dict) -> Hamiltonian:
    """Rebuild a Hamiltonian from its JSON descriptor (``{"kind": ..., ...}``)."""
    if not isinstance(d, dict) or "kind" not in d:
        raise StructureError("Hamiltonian descriptor must be a mapping with a 'kind'")
    kind = d["kind"]
    cls = _REGISTRY.get(kind)
    if cls is None:
        raise StructureError(f"unknown Hamiltonian kind {kind!r}")
    args = {k: v for k, v in d.items() if k != "kind"}
    try:
        if kind in ("base_lift", "fold"):
            args["f"] = base_function_from_descriptor(args["f"])
        if kind == "sum":
            args["terms"] = tuple(from_descriptor(t) for t in args["terms"])
            args["weights"] = tuple(args.get("weights", ()))
        for key in ("inner", "outer", "first", "second"):
            if key in args:
                args[key] = from_descriptor(args[key])
        for key in ("K", "values"):
            if key in args:
                args[key] = tuple(map(tuple, np.atleast_2d(args[key]).tolist()))
        if "coeffs" in args:
            args["coeffs"] = tuple(args["coeffs"])
        if "chi" in args:
            args["chi"] = tuple(args["chi"])
        return cls(**args)
    except (KeyError, TypeError) as exc:
        raise StructureError(f"malformed descriptor for {kind!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# spec-level operations


def eval_hamiltonian(spec: Hamiltonian, t: float, x: PhasePoint):
    """``(H(t, x), dH/dq, dH/dp)`` at a single phase point."""
    if not (0.0 <= t <= 1.0):
        raise PreconditionError("t must lie in [0, 1]")
    if not isinstance(spec, Hamiltonian):
        raise StructureError("not a Hamiltonian")
    q = np.asarray(x.base.coordinates)[None, :]
    p = np.asarray(x.momentum)[None, :]
    v, gq, gp = spec.evaluate(t, q, p)
    return float(v[0]), gq[0].copy(), gp[0].copy()


def compose_product(H: Hamiltonian, F: Hamiltonian) -> Hamiltonian:
    """``H # F``; zero factors are dropped so ``H # 0 == H`` exactly."""
    if isinstance(F, Zero):
        return H
    if isinstance(H, Zero):
        return F
    return Product(H, F)


def concatenate(H: Hamiltonian, F: Hamiltonian) -> Hamiltonian:
    """``H * F``; both factors must be boundary flat (see :func:`transform`)."""
    for name, h in (("first", H), ("second", F)):
        if not h.boundary_flat:
            raise PreconditionError(
                f"{name} factor is not boundary flat; apply transform(h, 'reparametrize') first")
    return Concatenate(H, F)


def transform(H: Hamiltonian, which: str, chi: Sequence[float] = SMOOTHSTEP) -> Hamiltonian:
    """Apply ``reflect``, ``time_reverse``, ``inverse`` or ``reparametrize``."""
    if which == "reflect":
        if isinstance(H, Zero):
            return H
        if isinstance(H, Reflect):
            return H.inner
        return Reflect(H)
    if which == "time_reverse":
        if isinstance(H, Zero):
            return H
        if isinstance(H, TimeReverse):
            return H.inner
        return TimeReverse(H)
    if which == "inverse":
        return H if isinstance(H, Zero) else Inverse(H)
    if which == "reparametrize":
        return Reparametrize(H, tuple(chi))
    raise StructureError(f"unknown transform {which!r}")
