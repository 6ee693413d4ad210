"""Scenario files: schema, built-in scenarios and the pipelines that run them.

A scenario is a JSON mapping validated against :data:`SCHEMA`.  Running it
returns a :class:`Result` holding a JSON-ready report, CSV tables and plot
payloads; nothing time- or host-dependent goes into the report, so the same
scenario and seed give a byte-identical ``report.json``.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from lagspec import capacity as cap
from lagspec import cliffwall as cw
from lagspec.errors import DegenerateError, LagspecError, ResolutionError, StructureError
from lagspec.floer import build_complex, check_energy_identity, fiber
from lagspec.front import hausdorff_to_zero_section
from lagspec.phase_space import (
    BaseLift,
    FoldFamily,
    Fourier,
    from_descriptor,
)
from lagspec.selector import (
    basic_phase_function,
    transfer_map,
    verify_comparison,
    verify_lipschitz,
    verify_reflection,
    verify_selector_axioms,
)
from lagspec.spectral import (
    analyze,
    brute_force_spectral_number,
    reparametrized,
    spectral_number,
    spectral_numbers,
    tolerance,
    verify_convergence,
    verify_duality,
    verify_invariance,
    verify_spectrality,
    verify_triangle,
)

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
CHECKS = ("front", "spectral", "selector", "duality", "triangle", "capacity", "cliffwall", "convergence")

SCHEMA = {
    "type": "object",
    "required": ["name", "kind"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "kind": {"enum": ["curve", "suite", "capacity", "torus"]},
        "description": {"type": "string"},
        "hamiltonian": {"type": "object", "required": ["kind"]},
        "partner": {"type": "object", "required": ["kind"]},
        "resolution": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 256},
                "steps": {"type": "integer", "minimum": 16},
                "grid": {"type": "integer", "minimum": 16},
            },
        },
        "checks": {"type": "array", "items": {"enum": list(CHECKS)}, "uniqueItems": True},
        "seed": {"type": "integer", "minimum": 0},
        "count": {"type": "integer", "minimum": 1},
        "pairs": {"type": "integer", "minimum": 0},
        "members": {"type": "array", "items": {"type": "object", "required": ["kind"]}},
        "golden": {"type": "boolean"},
        "arcs": {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                            "minItems": 2, "maxItems": 2}},
        "amplitudes": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "slope": {"type": "number", "exclusiveMinimum": 0},
        "tube_radius": {"type": "number", "exclusiveMinimum": 0},
        "eps": {"type": "number"},
        "eps_sweep": {"type": "array", "items": {"type": "number"}},
    },
}

DEFAULT_RESOLUTION = {"n": 512, "steps": 128, "grid": 256}

FIGURE1 = FoldFamily(Fourier(((1,), (2,), (2,)), (1.0, 0.35, 0.05), (0.0, 0.0, -math.pi / 2)),
                     ((-1.2,),), 6.0)


def _builtins():
    fig1 = FIGURE1.to_descriptor()
    return {
        "zero": {"name": "zero", "kind": "curve", "hamiltonian": {"kind": "zero", "dimension": 1},
                 "checks": ["front", "spectral", "selector", "duality"]},
        "constant": {"name": "constant", "kind": "curve",
                     "hamiltonian": {"kind": "constant", "coeffs": [0.3, 0.2], "dimension": 1},
                     "checks": ["front", "spectral", "selector", "duality"]},
        "base-lift": {"name": "base-lift", "kind": "curve",
                      "hamiltonian": BaseLift(Fourier(((1,), (2,)), (0.6, 0.2), (0.0, 1.0))).to_descriptor(),
                      "checks": ["front", "spectral", "selector", "duality", "triangle"]},
        "figure1": {"name": "figure1", "kind": "curve", "hamiltonian": fig1, "golden": True,
                    "checks": ["front", "spectral", "selector", "duality", "triangle", "convergence"]},
        "fold-family": {"name": "fold-family", "kind": "suite", "count": 50, "pairs": 30, "seed": 0,
                        "checks": ["front", "spectral", "selector"]},
        "capacity-sweep": {"name": "capacity-sweep", "kind": "capacity", "arcs": [[2.0, 4.0], [1.0, 2.5]],
                           "amplitudes": [0.05, 0.005, 2.5e-5, 0.0], "slope": 0.1, "tube_radius": 1.5,
                           "checks": ["capacity"]},
        "torus-cliffwall": {"name": "torus-cliffwall", "kind": "torus", "eps": 0.05,
                            "eps_sweep": [0.0, 0.01, 0.05, 0.1], "resolution": {"grid": 128},
                            "checks": ["cliffwall"]},
        "duality-suite": {"name": "duality-suite", "kind": "suite", "count": 6, "seed": 1, "pairs": 0,
                          "members": [fig1, BaseLift(Fourier(((1,),), (0.5,), (0.3,))).to_descriptor()],
                          "checks": ["duality", "triangle", "spectral"]},
    }


BUILTINS = _builtins()


def list_scenarios():
    return sorted(BUILTINS)


def load_scenario(src) -> dict:
    """Built-in name, path to a JSON file, or an already parsed mapping; validated against :data:`SCHEMA`."""
    if isinstance(src, dict):
        sc = copy.deepcopy(src)
    elif src in BUILTINS:
        sc = copy.deepcopy(BUILTINS[src])
    else:
        try:
            with open(src) as fh:
                sc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise StructureError(f"cannot read scenario {src!r}: {exc}") from exc
    try:
        jsonschema.validate(sc, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise StructureError(f"scenario does not match the schema: {exc.message}") from exc
    for key in ("hamiltonian", "partner"):
        if key in sc:
            from_descriptor(sc[key])
    if sc["kind"] == "curve" and "hamiltonian" not in sc:
        raise StructureError("curve scenarios need a 'hamiltonian'")
    return sc


# ---------------------------------------------------------------------------
# seeded fold families


def random_fold_family(rng: np.random.Generator) -> FoldFamily:
    m = int(rng.integers(2, 4))
    amps = rng.uniform(0.1, 1.0, m) / np.arange(1, m + 1)
    phases = rng.uniform(0.0, 2 * math.pi, m)
    K = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.4, 1.6))
    f = Fourier(tuple((k,) for k in range(1, m + 1)), tuple(map(float, amps)), tuple(map(float, phases)))
    return FoldFamily(f, ((K,),), 6.0)


def nudge(H: FoldFamily, rng: np.random.Generator, size=0.05) -> FoldFamily:
    """Nearby fold family: relative amplitude and phase changes of order ``size``."""
    f = H.f
    amps = tuple(float(a * (1 + size * rng.uniform(-1, 1))) for a in f.amps)
    phases = tuple(float(p + size * rng.uniform(-1, 1)) for p in f.phases)
    return FoldFamily(Fourier(f.modes, amps, phases), H.K, H.radius)


def fold_suite(count: int, seed: int, resolution=None, max_tries=4):
    """``count`` generic fold families; non-generic draws are replaced and logged."""
    res = dict(DEFAULT_RESOLUTION, **(resolution or {}))
    rng = np.random.default_rng(seed)
    out, skipped = [], []
    while len(out) < count:
        H = random_fold_family(rng)
        try:
            analyze(H, n=res["n"], steps=res["steps"])
            out.append(H)
        except (DegenerateError, ResolutionError, StructureError) as exc:
            skipped.append(str(exc))
            if len(skipped) > max_tries * count:
                raise
    return out, skipped


# ---------------------------------------------------------------------------
# results


@dataclass
class Result:
    name: str
    report: dict
    tables: dict = field(default_factory=dict)
    plots: list = field(default_factory=list)
    passed: bool = True


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    return x


def _residual(check):
    """Largest ``residual`` (or ``energy_residual``) reported by a check, ``None`` if it has none."""
    vals = [check[k] for k in ("residual", "energy_residual") if check.get(k) is not None]
    vals += [it["residual"] for it in check.get("items", []) if it.get("residual") is not None]
    return max(vals) if vals else None


def _passed(items):
    return all(v.get("pass", True) for v in items if isinstance(v, dict))


# ---------------------------------------------------------------------------
# complex checks shared by the curve and suite pipelines


def complex_checks(H, an, tol, brute_max=12):
    cx = an.complex
    if cx is None:
        return {"check": "complex", "clean": True, "pass": True}
    fb = build_complex(an.front, fiber(0.5 + 1e-3))
    energy = check_energy_identity(cx, an.front)
    out = {"check": "complex", "clean": False, "generators": cx.n,
           "d_squared_zero": cx.d_squared_zero() and fb.d_squared_zero(),
           "filtration": cx.filtration_respected(), "grading": cx.grading_respected(),
           "homology_zero_section": sum(cx.homology_ranks()), "homology_fiber": sum(fb.homology_ranks()),
           "energy_residual": energy, "tol": tol}
    ok = out["d_squared_zero"] and out["homology_zero_section"] == 2 and out["homology_fiber"] == 1
    ok = ok and energy <= tol
    if cx.n <= brute_max:
        r1, rp = spectral_number(cx, "fundamental"), spectral_number(cx, "point")
        bf1 = brute_force_spectral_number(cx, "fundamental")
        bfp = brute_force_spectral_number(cx, "point")
        out["brute_force"] = {"rho_one": bf1, "rho_pt": bfp}
        ok = ok and bf1 == r1 and bfp == rp
    out["pass"] = bool(ok)
    return out


def golden_chain(an, field_, sn, tol):
    """Figure-1 structure: labels ``z0..z3`` in cyclic base order with ``z1`` realising ``rho(pt)``."""
    cx = an.complex
    gens = sorted(cx.generators, key=lambda g: g.q)
    if len(gens) != 4:
        return {"check": "golden", "pass": False, "reason": f"{len(gens)} generators"}
    k1 = min(range(4), key=lambda k: gens[k].action)
    z = [gens[(k1 - 1 + m) % 4] for m in range(4)]
    idx = {g.id: m for m, g in enumerate(z)}

    def bd(g):
        return sorted(idx[int(y)] for y in cx.boundary(g.id))

    D = {f"z{m}": bd(z[m]) for m in range(4)}
    structure = D == {"z0": [1, 3], "z1": [], "z2": [1, 3], "z3": []}
    lo, hi = field_.min(), field_.max()
    counts = {"zero_crossings": len(an.front.zero_crossings), "caustics": len(an.front.caustics),
              "maxwell": len(an.front.maxwell_crossings)}
    items = {
        "counts": counts, "boundaries": D, "structure": structure,
        "rho_pt_is_z1": abs(sn.rho_pt - z[1].action) <= tol,
        "rho_one_is_max_f": abs(sn.rho_one - hi) <= tol,
        "margin_low": lo - sn.rho_pt, "margin_mid": hi - lo, "tol": tol,
        "actions": {f"z{m}": z[m].action for m in range(4)},
    }
    ok = (counts == {"zero_crossings": 4, "caustics": 2, "maxwell": 1} and structure
          and items["rho_pt_is_z1"] and items["rho_one_is_max_f"]
          and items["margin_low"] >= 10 * tol and items["margin_mid"] >= 10 * tol)
    return dict(items, check="golden", **{"pass": bool(ok)})


# ---------------------------------------------------------------------------
# pipelines


def run_curve(sc, res, tol_scale=1.0):
    H = from_descriptor(sc["hamiltonian"])
    checks = sc.get("checks", ["front", "spectral"])
    n, steps, grid = res["n"], res["steps"], res["grid"]
    an = analyze(H, n=n, steps=steps)
    tol = tol_scale * tolerance(an)
    rep = {"hamiltonian": sc["hamiltonian"]}
    tables, plots, items = {}, [], []
    front = an.front
    rep["front"] = {"zero_crossings": len(front.zero_crossings), "caustics": len(front.caustics),
                    "maxwell": len(front.maxwell_crossings), "branches": len(front.branches),
                    "hausdorff_to_zero_section": hausdorff_to_zero_section(an.curve),
                    "nongeneric": list(front.nongeneric)}
    tables["curve"] = (["s", "Q", "P", "h"], an.curve.to_rows())
    tables["front"] = (["branch", "q", "height"], front.to_rows())
    sn = spectral_numbers(H, n=n, steps=steps)
    rep["spectral"] = dict(sn.to_dict(), tol=tol)
    if "spectral" in checks:
        items.append(verify_spectrality(H, 1e-4 * tol_scale, n=n, steps=steps))
        items.append(complex_checks(H, an, tol))
        if an.complex is not None:
            rep["complex"] = an.complex.dump()
    field_ = None
    if "selector" in checks:
        field_ = basic_phase_function(H, grid, n=n, steps=steps)
        tables["selector"] = (["q", "f", "branch", "sigma"], field_.to_rows())
        rep["selector"] = {"min": field_.min(), "max": field_.max(),
                           "singular": [{"q": s.q, "value": s.value, "covectors": [s.covector_minus, s.covector_plus]}
                                        for s in field_.sing_locus]}
        items.append(verify_comparison(H, field_))
        items.append(verify_selector_axioms(H, field_))
        if H.dim == 1 and an.complex is not None:
            items.append(transfer_map(H, field_, steps))
    if "duality" in checks:
        items.append(verify_duality(H, 1e-4 * tol_scale, n=n, steps=steps))
        items.append(verify_invariance(H, reparametrized(H), 1e-4 * tol_scale, n=n, steps=steps))
        if "selector" in checks:
            items.append(verify_reflection(H, grid))
    if "triangle" in checks:
        F = from_descriptor(sc["partner"]) if "partner" in sc else BaseLift(Fourier(((1,),), (0.3,), (1.0,)))
        items.append(verify_triangle(H, F, 1e-4 * tol_scale, n=n, steps=steps))
    if "convergence" in checks:
        items.append(verify_convergence(H, n=n))
    if sc.get("golden"):
        field_ = field_ or basic_phase_function(H, grid, n=n, steps=steps)
        items.append(golden_chain(an, field_, sn, tol))
    plots.append(("front", {"front": front, "field": field_}))
    rep["checks"] = items
    return Result(sc["name"], rep, tables, plots, _passed(items))


def run_suite(sc, res, tol_scale=1.0):
    checks = sc.get("checks", ["spectral", "selector"])
    n, steps, grid = res["n"], res["steps"], res["grid"]
    members = [from_descriptor(d) for d in sc.get("members", [])]
    drawn, skipped = fold_suite(sc.get("count", 10), sc.get("seed", 0), res)
    members += drawn
    rows, items = [], []
    for k, H in enumerate(members):
        an = analyze(H, n=n, steps=steps)
        tol = tol_scale * tolerance(an)
        sn = spectral_numbers(H, n=n, steps=steps)
        row = {"member": k, "rho_one": sn.rho_one, "rho_pt": sn.rho_pt, "gamma": sn.gamma,
               "generators": an.complex.n if an.complex is not None else 0}
        sub = []
        if "spectral" in checks:
            sub += [verify_spectrality(H, 1e-4 * tol_scale, n=n, steps=steps), complex_checks(H, an, tol)]
        if "selector" in checks:
            fld = basic_phase_function(H, grid, n=n, steps=steps)
            cmp_ = verify_comparison(H, fld)
            row.update(min_f=fld.min(), max_f=fld.max())
            sub.append(cmp_)
        if "duality" in checks:
            sub.append(verify_duality(H, 1e-4 * tol_scale, n=n, steps=steps))
            sub.append(verify_invariance(H, reparametrized(H), 1e-4 * tol_scale, n=n, steps=steps))
            sub.append(verify_reflection(H, grid))
        if "triangle" in checks and k + 1 < len(members):
            sub.append(verify_triangle(H, members[k + 1], 1e-4 * tol_scale, n=n, steps=steps))
        row["tol"] = tol
        for c in sub:
            r = _residual(c)
            if r is not None:
                row[f"{c['check']}_residual"] = r
        row["pass"] = _passed(sub)
        row["failed"] = [c["check"] for c in sub if not c.get("pass", True)]
        rows.append(row)
        items += sub
    lip = []
    rng = np.random.default_rng(sc.get("seed", 0) + 10_000)
    for k in range(min(sc.get("pairs", 0), len(drawn))):
        H = drawn[k]
        K = nudge(H, rng)
        try:
            r = verify_lipschitz(H, K, grid, rel_tol=1e-3)
        except (DegenerateError, ResolutionError) as exc:
            r = {"check": "lipschitz", "skipped": str(exc), "pass": True}
        lip.append(dict(r, pair=k))
    items += lip
    rep = {"members": len(members), "skipped_draws": skipped,
           "violations": sum(not r["pass"] for r in rows) + sum(not r.get("pass", True) for r in lip),
           "rows": rows, "lipschitz": lip}
    cols = sorted(set().union(*rows)) if rows else []
    tables = {"suite": (cols, [[r.get(c) for c in cols] for r in rows])}
    if lip:
        tables["lipschitz"] = (["pair", "gap", "hofer", "tol", "pass"],
                               [[r["pair"], r.get("gap"), r.get("hofer"), r.get("tol"), r["pass"]] for r in lip])
    return Result(sc["name"], rep, tables, [], _passed(items))


def run_capacity(sc, res, tol_scale=1.0):
    rows_all, items, per_arc = [], [], []
    slope, T = sc.get("slope", 0.1), sc.get("tube_radius", 1.5)
    amps = sc.get("amplitudes", [0.05, 0.005, 2.5e-5, 0.0])
    for B in sc.get("arcs", [[2.0, 4.0]]):
        B = tuple(B)
        f, scn = cap.default_scenario(max(a for a in amps if a > 0), B=B, slope=slope, T_radius=T)
        tube = cap.verify_tube_identity(scn.H, B, T)
        shift = cap.verify_shift_lemma(scn)
        shift0 = cap.verify_shift_lemma(cap.CapacityScenario(f, B, T, cap.b_supported_bump(B, 0.0)))
        table = cap.continuity_experiment(f, B, T, amps, n=max(res["n"], 1024))
        lam = 0.5
        scaled = cap.constant_C(f.scaled(lam), B) / (lam * scn.C)
        ok = (all(r["pass"] for r in table["rows"]) and table["monotone"]
              and table["final_over_initial"] is not None and table["final_over_initial"] < 1e-3)
        per_arc.append({"B": list(B), "C": scn.C, "osc_f": scn.osc_f, "ratio_bound": scn.ratio_bound,
                        "tube_identity": tube, "shift_lemma": shift, "shift_lemma_zero": shift0,
                        "conformal_ratio": scaled, "table": table, "pass": bool(ok and tube["pass"] and
                                                                                 shift["pass"] and shift0["pass"])})
        for r in table["rows"]:
            rows_all.append([list(B), r["amplitude"], r["osc_c0"], r["gamma"], r["ratio"], r["bound"], r["pass"]])
        items.append(per_arc[-1])
    rep = {"arcs": per_arc}
    tables = {"convergence": (["B", "amplitude", "osc_c0", "gamma", "ratio", "bound", "pass"], rows_all)}
    return Result(sc["name"], rep, tables, [("capacity", {"arcs": per_arc})], _passed(items))


def run_torus(sc, res, tol_scale=1.0):
    grid = res.get("grid", 128)
    out, items, plots, tables = {}, [], [], {}
    H = cw.perturbed_product(eps=sc.get("eps", 0.05))
    cases = [("flowed", lambda: cw.sample_selector_2d(H, grid), 1e-2),
             ("affine3", lambda: cw.affine3_field(grid), 1e-12),
             ("vfold", lambda: cw.vfold_field(grid), 1e-12)]
    for name, make, tol in cases:
        fld = make()
        strata, jumps, cycle, rep = cw.analyze_field(fld, tol * tol_scale)
        if name == "affine3":
            tp = cw.affine3_triple_point()
            rep["triple_point_error"] = (float(np.max(np.abs(strata.triple_points[0].q - tp)))
                                         if strata.triple_points else None)
            rep["pass"] = bool(rep["pass"] and rep["n_triple"] == 1 and len(strata.S1) == 3)
        rep["diagnostics"] = fld.diagnostics
        out[name] = rep
        items.append(rep)
        tables[f"{name}_strata"] = (["polyline", "q1", "q2"], strata.to_rows())
        plots.append((f"torus_{name}", {"field": fld, "strata": strata}))
        out[name]["mesh_vertices"] = int(len(cycle.vertices))
        if name == "flowed":
            out["mesh_off"] = cycle.to_off()
    if sc.get("eps_sweep"):
        out["eps_sweep"] = cw.eps_sweep(tuple(sc["eps_sweep"]), n=64)
    rep = {"cases": out, "hamiltonian": H.to_descriptor()}
    return Result(sc["name"], rep, tables, plots, _passed(items))


RUNNERS = {"curve": run_curve, "suite": run_suite, "capacity": run_capacity, "torus": run_torus}


def run(sc: dict, resolution=None, tol_scale: float = 1.0, seed=None) -> Result:
    """Execute a validated scenario; numerical failures become a failing report with a diagnostic."""
    sc = copy.deepcopy(sc)
    if seed is not None:
        sc["seed"] = int(seed)
    res = dict(DEFAULT_RESOLUTION, **sc.get("resolution", {}), **(resolution or {}))
    try:
        result = RUNNERS[sc["kind"]](sc, res, tol_scale)
    except LagspecError as exc:
        log.error("scenario %s failed: %s", sc["name"], exc)
        result = Result(sc["name"], {"error": type(exc).__name__, "message": str(exc)}, passed=False)
        result.report["numerical_failure"] = True
    result.report.update({
        "scenario": sc["name"], "schema_version": REPORT_SCHEMA_VERSION, "resolution": res,
        "seed": sc.get("seed", 0), "checks_requested": sc.get("checks", []), "pass": result.passed,
        "tolerance_policy": {"relative": 1e-4 * tol_scale, "scale": "action scale of the time-one curve",
                             "lipschitz": "1e-3 * hofer + 1e-6 * action scale",
                             "conormal": {"flowed": 1e-2 * tol_scale, "synthetic": 1e-12 * tol_scale},
                             "tol_scale": tol_scale},
    })
    result.report = _clean(result.report)
    return result
