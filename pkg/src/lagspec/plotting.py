"""SVG figures for reports: wave fronts with the selector, torus strata and capacity tables.

Figures are written with a fixed hash salt and no date stamp so that the
same data gives byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from lagspec.phase_space import TWO_PI  # noqa: E402

plt.rcParams["svg.hashsalt"] = "lagspec"
plt.rcParams["svg.fonttype"] = "none"


def save_svg(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _split_on_wrap(x, y):
    """Break a polyline where the wrapped coordinate jumps."""
    jumps = np.nonzero(np.abs(np.diff(x)) > np.pi)[0] + 1
    return zip(np.split(x, jumps), np.split(y, jumps))


def plot_front(front, field_=None, path="front.svg", samples=2000):
    """Multivalued ``(q, height)`` graph, with caustics, crossings and the selector in bold."""
    fig, ax = plt.subplots(figsize=(7, 4.2))
    sp = front.splines
    for b in front.branches:
        s = np.linspace(b.s_start, b.s_end, max(16, int(samples * (b.s_end - b.s_start))))
        q = np.mod(sp.Q(s), TWO_PI)
        for xs, ys in _split_on_wrap(q, sp.h(s)):
            ax.plot(xs, ys, color="0.55", lw=0.9)
    if front.caustics:
        ax.plot([c.q % TWO_PI for c in front.caustics], [c.h for c in front.caustics], "x", color="tab:red",
                ms=7, label="caustic")
    if front.maxwell_crossings:
        ax.plot([m.q % TWO_PI for m in front.maxwell_crossings], [m.height for m in front.maxwell_crossings], "o",
                mfc="none", color="tab:blue", ms=7, label="Maxwell crossing")
    if front.zero_crossings:
        ax.plot([z.q % TWO_PI for z in front.zero_crossings], [z.action for z in front.zero_crossings], ".",
                color="tab:green", ms=8, label="critical point")
    if field_ is not None:
        order = np.argsort(field_.grid)
        ax.plot(field_.grid[order], field_.f[order], color="k", lw=2.2, label="selector")
    ax.set_xlim(0, TWO_PI)
    ax.set_xlabel("q")
    ax.set_ylabel("height")
    ax.legend(loc="best", fontsize=8, frameon=False)
    fig.tight_layout()
    return save_svg(fig, path)


def plot_torus(field_, strata, path="torus.svg"):
    """Selector values on the base with the singular set overlaid."""
    fig, ax = plt.subplots(figsize=(5.2, 4.6))
    a = field_.axis
    ext = (a[0], a[-1] + (field_.h if field_.periodic else 0.0))
    im = ax.imshow(field_.f.T, origin="lower", extent=(*ext, *ext), cmap="viridis", interpolation="nearest")
    fig.colorbar(im, ax=ax, shrink=0.85, label="f")
    for pl in strata.S1:
        pts = np.mod(pl.points, TWO_PI) if field_.periodic else pl.points
        jumps = np.nonzero(np.any(np.abs(np.diff(pts, axis=0)) > np.pi, axis=1))[0] + 1
        for seg in np.split(pts, jumps):
            ax.plot(seg[:, 0], seg[:, 1], color="w", lw=1.3)
    for p in strata.S2:
        q = np.mod(p.q, TWO_PI) if field_.periodic else p.q
        ax.plot(q[0], q[1], "^" if p.tag == "triple" else "s", color="tab:red", ms=7)
    ax.set_xlabel("q1")
    ax.set_ylabel("q2")
    fig.tight_layout()
    return save_svg(fig, path)


def plot_capacity(arcs, path="capacity.svg"):
    """``gamma`` against ``osc_c0`` per arc, with the linear bound ``(2 osc f / C) osc_c0``."""
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    for k, arc in enumerate(arcs):
        rows = [r for r in arc["table"]["rows"] if r.get("osc_c0")]
        if not rows:
            continue
        x = np.array([r["osc_c0"] for r in rows])
        y = np.array([r["gamma"] for r in rows])
        line, = ax.loglog(x, y, "o-", label=f"B = [{arc['B'][0]:g}, {arc['B'][1]:g}]")
        ax.loglog(x, arc["ratio_bound"] * x, "--", color=line.get_color(), lw=0.8)
    ax.set_xlabel("osc_C0")
    ax.set_ylabel("gamma")
    ax.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    return save_svg(fig, path)


PLOTTERS = {
    "front": lambda d, p: plot_front(d["front"], d.get("field"), p),
    "capacity": lambda d, p: plot_capacity(d["arcs"], p),
}


def render(name, payload, path):
    if name.startswith("torus"):
        return plot_torus(payload["field"], payload["strata"], path)
    return PLOTTERS[name](payload, path)
