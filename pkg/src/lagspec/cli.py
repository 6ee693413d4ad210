"""Command-line entry point: ``lagspec {run,list,plot,verify}``.

Each scenario writes into ``<out-dir>/<name>/``: ``report.json`` (sorted keys,
no timestamps), one CSV per table, SVG plots and, for torus scenarios, the
cycle mesh as ``cycle.off``.

Exit status: 0 all checks pass, 1 a check failed, 2 usage or schema error,
3 numerical failure (a diagnostic report is still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from lagspec import scenarios
from lagspec.errors import StructureError

log = logging.getLogger("lagspec")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

ALL_CHECKS = {
    "curve": ["front", "spectral", "selector", "duality", "triangle", "convergence"],
    "suite": ["spectral", "selector", "duality", "triangle"],
    "capacity": ["capacity"],
    "torus": ["cliffwall"],
}


def parse_resolution(text):
    """``"1024"`` sets the curve sampling; ``"n=1024,grid=512,steps=64"`` sets named fields."""
    if text is None:
        return None
    out = {}
    for part in text.split(","):
        key, _, val = part.partition("=")
        if not val:
            key, val = "n", key
        if key not in ("n", "grid", "steps"):
            raise argparse.ArgumentTypeError(f"unknown resolution field {key!r}")
        out[key] = int(val)
    return out


def write_outputs(result, out_dir, plots=True, report=True):
    os.makedirs(out_dir, exist_ok=True)
    rep = dict(result.report)
    cases = rep.get("cases")
    if isinstance(cases, dict) and "mesh_off" in cases:
        cases = dict(cases)
        with open(os.path.join(out_dir, "cycle.off"), "w") as fh:
            fh.write(cases.pop("mesh_off"))
        rep["cases"] = cases
    if "complex" in rep:
        with open(os.path.join(out_dir, "complex.txt"), "w") as fh:
            fh.write(rep.pop("complex"))
    if report:
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump(rep, fh, sort_keys=True, indent=1)
            fh.write("\n")
        for name, (header, rows) in sorted(result.tables.items()):
            with open(os.path.join(out_dir, f"{name}.csv"), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for r in rows:
                    w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    if plots:
        from lagspec import plotting

        for name, payload in result.plots:
            plotting.render(name, payload, os.path.join(out_dir, f"{name}.svg"))


def _job(args):
    sc, res, tol_scale, seed, out_dir, plots, report = args
    result = scenarios.run(sc, res, tol_scale, seed)
    write_outputs(result, os.path.join(out_dir, sc["name"]), plots, report)
    return sc["name"], result.passed, bool(result.report.get("numerical_failure"))


def _execute(ns, mode):
    try:
        scs = [scenarios.load_scenario(s) for s in ns.scenarios]
    except StructureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if mode == "verify":
        for sc in scs:
            sc["checks"] = ALL_CHECKS[sc["kind"]]
            if sc["kind"] == "curve" and sc["hamiltonian"].get("kind") == "fold":
                sc.setdefault("golden", sc["name"] == "figure1")
    plots = mode in ("run", "plot", "verify") and not getattr(ns, "no_plots", False)
    report = mode != "plot"
    jobs = [(sc, ns.resolution, ns.tol_scale, ns.seed, ns.out_dir, plots, report) for sc in scs]
    if ns.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=ns.jobs) as ex:
            results = list(ex.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    status = EXIT_OK
    for name, passed, numeric in results:
        print(f"{name}: {'PASS' if passed else 'FAIL'}")
        if numeric:
            status = max(status, EXIT_NUMERIC)
        elif not passed and status == EXIT_OK:
            status = EXIT_FAIL
    return status


def build_parser():
    p = argparse.ArgumentParser(prog="lagspec", description="Spectral invariants, graph selectors and "
                                "cliff-wall cycles of exact Lagrangians in T*S^1 and T*T^2.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("list", help="list built-in scenarios")
    for verb, hlp in (("run", "run the checks requested by each scenario"),
                      ("plot", "write the SVG figures only"),
                      ("verify", "run every check for each scenario; nonzero exit on any failure")):
        s = sub.add_parser(verb, help=hlp)
        s.add_argument("scenarios", nargs="+", help="built-in name or path to a scenario JSON file")
        s.add_argument("--out-dir", default="lagspec-out")
        s.add_argument("--resolution", type=parse_resolution, default=None,
                       help="curve samples N, or n=N,grid=G,steps=S")
        s.add_argument("--tol-scale", type=float, default=1.0, help="multiplies every tolerance")
        s.add_argument("--jobs", type=int, default=1, help="scenarios run in parallel")
        s.add_argument("--seed", type=int, default=None, help="overrides the scenario seed")
        if verb != "plot":
            s.add_argument("--no-plots", action="store_true")
    return p


def main(argv=None):
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if ns.verb == "list":
        for name in scenarios.list_scenarios():
            sc = scenarios.BUILTINS[name]
            print(f"{name}\t{sc['kind']}\t{','.join(sc.get('checks', []))}")
        return EXIT_OK
    return _execute(ns, ns.verb)


if __name__ == "__main__":
    sys.exit(main())
