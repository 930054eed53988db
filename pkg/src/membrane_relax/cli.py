"""Configuration-driven experiment runner.

``membrane-relax run config.json [--out DIR] [--seed N] [--threads N]``

Each run validates the JSON config, executes one experiment kind, and writes
CSV tables, ``report.json``, ``summary.txt`` and ``manifest.json`` into the
output directory.  Exit status is 0 when every check passes, 1 when a check
fails and 2 when the config is invalid.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .cell_problem import CellMeshSpec, cell_quasiconvex_estimate
from .densities import rank_one_double_well
from .energy_models import (FiberSolverConfig, SampleSpec, base_density, check_density_properties,
                            fiber_relax, fiber_relax_batch, fiber_relax_constrained,
                            fiber_relax_grid_oracle, inverse_square_barrier, make_barrier_energy,
                            normal_field, sample_nondegenerate, sample_rank_deficient)
from .envelopes import LaminateParams, laminate_envelope, laminate_step, two_point_value
from .microstructure import (TOP_WEDGE_NOTE, LaminateGeometry, Rect, classify_points, closed_form_energy,
                             laminate_energy_quadrature, perturbed_direction, region_measures,
                             region_raster, sigma_lp_bound, sigma_lp_norm, verify_cell_refinement)
from .thin_film import (FilmConfig, gamma_gap_report, identity_ansatz, recovery_experiment,
                        sine_director_ansatz)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
E12 = np.eye(3)[:, :2]


class Table:
    """A CSV table with a fixed header; floats are written with ``%.17g``."""

    def __init__(self, name, header):
        self.name = name
        self.header = list(header)
        self.rows = []

    def add(self, *values):
        self.rows.append(values)

    def render(self) -> str:
        def fmt(v):
            if isinstance(v, (bool, np.bool_)):
                return "1" if v else "0"
            if isinstance(v, (int, np.integer)):
                return str(int(v))
            if isinstance(v, (float, np.floating)):
                return "%.17g" % float(v)
            return str(v)

        lines = [",".join(self.header)]
        lines += [",".join(fmt(v) for v in row) for row in self.rows]
        return "\n".join(lines) + "\n"


class Run:
    def __init__(self, config, seed):
        self.config = config
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.tables = []
        self.checks = []
        self.report = {}
        self.extra_files = {}

    def table(self, name, header):
        t = Table(name, header)
        self.tables.append(t)
        return t

    def check(self, name, passed, detail=""):
        self.checks.append({"check": name, "passed": bool(passed), "detail": detail})


def load_schema() -> dict:
    text = resources.files("membrane_relax").joinpath("run_config.schema.json").read_text()
    return json.loads(text)


def validate_config(config):
    """Schema violations as parallel lists of field paths and messages."""
    validator = jsonschema.Draft202012Validator(load_schema())
    errs = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    return ["/".join(str(p) for p in e.absolute_path) or "<root>" for e in errs], [e.message for e in errs]


def _model(config):
    m = config.get("model", {})
    return make_barrier_energy(inverse_square_barrier(), float(m.get("p", 2.0)))


def _density(config, W):
    if config.get("density", "barrier") == "double-well":
        return rank_one_double_well(E12, [1.0, 0.0], [1.0, 0.0, 0.0]), E12
    return base_density(W), None


def _samples(run, default_count):
    s = run.config.get("samples", {})
    return sample_nondegenerate(run.rng, s.get("count", default_count), s.get("scale", 0.5),
                                s.get("min_wedge", 0.2))


def _flat(xi):
    return [float(v) for v in np.asarray(xi).ravel()]


XI_COLS = [f"xi{i}{j}" for i in range(1, 4) for j in range(1, 3)]


# --- experiment kinds --------------------------------------------------------------


def run_fiber(run: Run):
    W = _model(run.config)
    X = _samples(run, 20)
    oc = run.config.get("oracle", {})
    use_oracle = oc.get("enabled", True)
    tol = oc.get("tol", 1e-3)
    t = run.table("fiber", XI_COLS + ["w0", "oracle", "abs_gap"])
    gaps = []
    for xi in X:
        v = float(fiber_relax(W, xi))
        o = float(fiber_relax_grid_oracle(W, xi, oc.get("half_width", 5.0), oc.get("step", 0.01))[0]) \
            if use_oracle else math.nan
        gaps.append(abs(v - o))
        t.add(*_flat(xi), v, o, abs(v - o))
    if use_oracle:
        run.check("oracle gap", max(gaps) <= tol, f"max gap {max(gaps):.3e} (tol {tol:g})")

    n_def = run.config.get("samples", {}).get("rank_deficient", 20)
    if n_def:
        D = sample_rank_deficient(run.rng, n_def)
        vals = fiber_relax_batch(W, D)
        td = run.table("fiber_degenerate", XI_COLS + ["w0"])
        for xi, v in zip(D, vals):
            td.add(*_flat(xi), float(v))
        run.check("rank-deficient gives +inf", bool(np.all(np.isinf(vals))),
                  f"{int(np.sum(np.isinf(vals)))}/{n_def} infinite")

    js = run.config.get("constrained_j")
    if js:
        tc = run.table("fiber_constrained", ["sample", "j", "value", "unconstrained"])
        mono, close = True, True
        for k, xi in enumerate(X):
            v0 = float(fiber_relax(W, xi))
            prev = math.inf
            for j in js:
                v = float(fiber_relax_constrained(W, xi, j))
                mono &= v <= prev + 1e-12
                prev = v
                tc.add(k, j, v, v0)
            close &= abs(prev - v0) <= 1e-3
        run.check("constrained values nonincreasing in j", mono)
        run.check("largest j within 1e-3 of unconstrained", close)
        if 1 in js:
            v = float(fiber_relax_constrained(W, E12, 1))
            run.report["constrained_e1e2_j1"] = v
            run.check("constrained value at (e1|e2), j=1 is 3", abs(v - 3.0) <= 1e-6, f"{v:.17g}")
    run.report["model"] = W.name


def run_envelope(run: Run):
    W = _model(run.config)
    f, mid = _density(run.config, W)
    depth = run.config.get("depth", 3)
    X = _samples(run, 10) if mid is None else mid[None]
    t = run.table("envelope", XI_COLS + ["f"] + [f"R{i}" for i in range(1, depth + 1)])
    mono = below = True
    for xi in X:
        f0 = float(f(xi))
        vals = [float(v) for v in laminate_envelope(f, xi, depth)]
        below &= all(v <= f0 + 1e-9 for v in vals)
        mono &= all(b <= a + 1e-9 for a, b in zip(vals, vals[1:]))
        t.add(*_flat(xi), f0, *vals)
    run.check("R_i <= f", below)
    run.check("R_{i+1} <= R_i", mono)
    if mid is not None:
        r1 = float(laminate_step(f, mid)[0])
        run.check("double well relaxes at depth 1", r1 <= 1e-3, f"R1 = {r1:.3e}")


def run_cell(run: Run):
    W = _model(run.config)
    f, mid = _density(run.config, W)
    mc = run.config.get("mesh", {})
    spec = CellMeshSpec(m=mc.get("m", 16), starts=mc.get("starts", 1), max_iter=mc.get("max_iter", 300),
                        tol=mc.get("tol", 1e-10), seed=run.seed)
    rel = mc.get("rel_tol", 0.05)
    X = _samples(run, 10) if mid is None else mid[None]
    t = run.table("cell", XI_COLS + ["f", "laminate", "cell", "bound"])
    below = close = lam_below = True
    for xi in X:
        f0 = float(f(xi))
        lam, params = laminate_step(f, xi)
        lam_below &= float(lam) <= f0 + 1e-9
        seed = params if mc.get("seeded", True) else None
        c = float(cell_quasiconvex_estimate(f, xi, spec, seed_construction=seed))
        # a laminate value at the relaxed-to-zero level has no relative scale; use f(xi)
        bound = float(lam) + rel * (float(lam) if float(lam) > 1e-3 else f0)
        below &= c <= f0 + 1e-9
        close &= c <= bound
        t.add(*_flat(xi), f0, float(lam), c, bound)
    run.check("cell estimate <= f", below)
    run.check("laminate value <= f", lam_below)
    run.check("cell estimate <= laminate + tolerance", close)


def run_micro(run: Run):
    W = _model(run.config)
    f, mid = _density(run.config, W)
    g = run.config.get("geometry", {})
    xi = E12 if mid is None else mid
    b = np.asarray(g.get("b", [1.0, 0.0, 0.0] if mid is not None else [0.3, 0.2, 0.0]))
    angle = g.get("angle", 0.0)
    t = run.table("micro", ["n", "t", "quadrature", "closed_form", "abs_err", "area_sum"])
    worst = 0.0
    for n in g.get("n_seq", [4, 8, 16]):
        for tt in g.get("t_seq", [0.25, 0.5, 0.75]):
            geom = LaminateGeometry(n, tt, angle)
            q = float(laminate_energy_quadrature(f, xi, geom, b))
            c = float(closed_form_energy(f, xi, geom, b))
            err = abs(q - c)
            worst = max(worst, err / max(abs(c), 1e-300))
            t.add(n, tt, q, c, err, math.fsum(region_measures(geom).values()))
    run.check("quadrature equals closed form", worst <= 1e-12, f"max rel err {worst:.3e}")

    ts = run.table("sigma_norm", ["n", "t", "p", "integral", "bound"])
    ok = True
    for n in g.get("n_seq", [4, 8, 16]):
        for tt in g.get("t_seq", [0.25, 0.5, 0.75]):
            for p in g.get("p_seq", [1.0, 2.0, 3.0]):
                geom = LaminateGeometry(n, tt)
                val, bd = sigma_lp_norm(geom, p), sigma_lp_bound(geom, p)
                ok &= val <= bd + 1e-12
                ts.add(n, tt, p, val, bd)
    run.check("sigma L^p bound", ok)

    mc = g.get("mc_points", 0)
    if mc:
        tm = run.table("monte_carlo", ["n", "t", "region", "frequency", "measure", "sigma3"])
        ok = True
        for n in g.get("n_seq", [4, 8, 16]):
            for tt in g.get("t_seq", [0.25, 0.5, 0.75]):
                geom = LaminateGeometry(n, tt, angle)
                codes = classify_points(geom, run.rng.uniform(size=(mc, 2)))[0]
                for r, p in region_measures(geom).items():
                    freq = float(np.mean(codes == r.value))
                    s3 = 3.0 * math.sqrt(p * (1.0 - p) / mc)
                    ok &= abs(freq - p) <= s3 + 1e-12
                    tm.add(n, tt, r.name, freq, p, s3)
        run.check("Monte Carlo frequencies within 3 sigma", ok)

    lim = run.config.get("limit")
    if lim:
        params = LaminateParams.from_angle(angle, b, lim.get("t", 0.4))
        b_ell = perturbed_direction(b, xi, lim.get("ell", 1000))
        target = float(two_point_value(f, xi, params))
        ns = lim.get("n_seq", [4, 8, 16, 32, 64])
        tl = run.table("limit", ["n", "quadrature", "two_point", "abs_gap"])
        gaps = []
        for n in ns:
            q = float(laminate_energy_quadrature(f, xi, LaminateGeometry(n, params.t, angle), b_ell))
            gaps.append(abs(q - target))
            tl.add(n, q, target, gaps[-1])
        slope = float(np.polyfit(np.log(ns), np.log(np.maximum(gaps, 1e-300)), 1)[0])
        st = lim.get("slope_tol", 0.2)
        run.check("lamination limit slope -1", abs(slope + 1.0) <= st, f"slope {slope:.5f} (tol {st:g})")
        scale = abs(target) if abs(target) > 1e-3 else float(f(xi))
        rt = lim.get("rel_tol", 0.05)
        run.check("lamination limit within tolerance at largest n", gaps[-1] <= rt * scale,
                  f"gap {gaps[-1]:.4g} vs {rt:g} * {scale:.4g}")
        run.report["limit_slope"] = slope

    ref = run.config.get("refinement")
    if ref:
        params = LaminateParams.from_angle(angle, b, ref.get("t", 0.5))
        rows = verify_cell_refinement(f, xi, params, Rect(0.0, 0.0, 1.0, 1.0), ref.get("n_seq", [64]),
                                      ref.get("ell_seq", [1000]), ref.get("q_seq", [32]))
        tr = run.table("refinement", ["n", "ell", "q", "t", "energy", "closed_form", "abs_err"])
        for r in rows:
            tr.add(r["n"], r["ell"], r["q"], r["t"], r["energy"], r["closed_form"], r["abs_err"])
        last = rows[-1]
        scale = max(abs(last["closed_form"]), float(f(xi)))
        rel = ref.get("rel_tol", 0.05)
        run.check("refinement reaches target", last["abs_err"] <= rel * scale,
                  f"abs err {last['abs_err']:.4g} vs {rel:g} * {scale:.4g}")
    if g.get("raster", 0):
        geom = LaminateGeometry(g.get("n_seq", [4])[0], g.get("t_seq", [0.5])[0])
        run.extra_files["regions.txt"] = region_raster(geom, g["raster"]) + "\n"
    run.report["geometry_note"] = TOP_WEDGE_NOTE


def run_film(run: Run):
    W = _model(run.config)
    fc = run.config.get("film", {})
    cfg = FilmConfig(eps=tuple(fc.get("eps", [1e-1, 1e-2, 1e-3, 1e-4])), j=fc.get("j", 1),
                     planar_order=fc.get("planar_order", 4), transverse_order=fc.get("transverse_order", 2))
    if fc.get("ansatz", "sine-director") == "identity":
        u = identity_ansatz()
    else:
        u = sine_director_ansatz(amplitude=fc.get("amplitude", 0.1))
    rep = recovery_experiment(W, u, cfg)
    t = run.table("film", ["eps", "energy", "min_det", "limit", "abs_gap"])
    for r in rep.rows():
        t.add(r["eps"], r["energy"], r["min_det"], r["limit"], r["abs_gap"])
    run.check("det margin below threshold", rep.margins_pass, f"threshold {rep.threshold:.6g}")
    run.check("midplane average equals v", rep.projection_error <= 1e-12,
              f"max deviation {rep.projection_error:.3e}")
    if fc.get("ansatz", "sine-director") == "identity":
        run.check("identity energy is exactly 3", all(e == 3.0 for e in rep.energies))
    if "slope_target" in fc:
        target, tol = fc["slope_target"], fc.get("slope_tol", 0.2)
        run.check("gap slope", abs(rep.slope - target) <= tol,
                  f"slope {rep.slope:.5f} vs {target:g} +- {tol:g}")
    run.report["film"] = json.loads(rep.to_json())


def run_gamma_gap(run: Run):
    W = _model(run.config)
    gc = run.config.get("gamma_gap", {})
    A = np.asarray(gc.get("xi", E12.tolist()), dtype=float)
    scales = gc.get("director_scales", list(np.linspace(0.05, 2.0, 391)))
    Z = np.outer(scales, normal_field(A))
    rep = gamma_gap_report(W, A, Z, tuple(gc.get("js", [1, 2, 5, 10, 100, 1000])))
    t = run.table("gamma_gap", ["j", "a_j", "b_j", "a", "c"])
    for j, aj, bj in zip(rep["js"], rep["a_j"], rep["b_j"]):
        t.add(j, aj, bj, rep["a"], rep["c"])
    run.check("a >= c", rep["a_ge_c"])
    run.check("a_j >= b_j", rep["a_j_ge_b_j"])
    run.check("b_j nonincreasing", rep["b_monotone"])
    run.check("b_j -> c", rep["b_to_c"] <= 1e-3, f"gap {rep['b_to_c']:.3e}")
    run.report["gamma_gap"] = rep


def run_properties(run: Run):
    W = _model(run.config)
    pc = run.config.get("properties_check", {})
    spec = SampleSpec(n_samples=pc.get("n_samples", 200), deltas=tuple(pc.get("deltas", [0.1, 0.5, 1.0])),
                      seed=run.seed)
    rep = check_density_properties(W, spec, FiberSolverConfig())
    t = run.table("properties", ["delta", "growth_constant", "violations"])
    for d in spec.deltas:
        t.add(d, rep.growth_constants[d], rep.growth_violations[d])
    tc = run.table("continuity", ["radius", "max_oscillation"])
    for r, osc in rep.continuity.items():
        tc.add(r, osc)
    run.check("coercivity", rep.coercivity_margin >= 1.0 - 1e-12, f"min W0/|xi|^p = {rep.coercivity_margin:.6g}")
    run.check("conditional growth", sum(rep.growth_violations.values()) == 0)
    radii = sorted(rep.continuity)
    run.check("continuity", rep.continuity[radii[0]] <= rep.continuity[radii[-1]] + 1e-12)


RUNNERS = {
    "fiber": run_fiber,
    "envelope": run_envelope,
    "cell": run_cell,
    "micro": run_micro,
    "film": run_film,
    "gamma-gap": run_gamma_gap,
    "properties": run_properties,
}


def config_hash(config: dict, seed: int) -> str:
    payload = json.dumps({"config": config, "seed": seed}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()


def emit_manifest(config: dict, seed: int, out: Path, artifacts: list, threads: int) -> Path:
    manifest = {
        "config_sha256": config_hash(config, seed),
        "seed": seed,
        "version": __version__,
        "threads": threads,
        "artifacts": sorted(artifacts),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def execute(config: dict, out: Path, seed: int, threads: int = 1) -> int:
    """Run a validated config and write all artifacts; returns the exit status."""
    run = Run(config, seed)
    t0 = time.perf_counter()
    RUNNERS[config["kind"]](run)
    elapsed = time.perf_counter() - t0
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    for table in run.tables:
        name = f"{table.name}.csv"
        (out / name).write_text(table.render())
        artifacts.append(name)
    for name, text in run.extra_files.items():
        (out / name).write_text(text)
        artifacts.append(name)
    passed = all(c["passed"] for c in run.checks)
    report = {"kind": config["kind"], "seed": seed, "passed": passed, "checks": run.checks,
              "details": run.report}
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n")
    lines = [f"kind: {config['kind']}  seed: {seed}  elapsed: {elapsed:.2f}s"]
    for c in run.checks:
        lines.append(f"[{'PASS' if c['passed'] else 'FAIL'}] {c['check']}" + (f": {c['detail']}" if c["detail"] else ""))
    lines.append("overall: " + ("PASS" if passed else "FAIL"))
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    artifacts += ["report.json", "summary.txt"]
    emit_manifest(config, seed, out, artifacts, threads)
    print("\n".join(lines))
    return EXIT_OK if passed else EXIT_FAIL


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.bool_,)):
        return bool(o)
    return str(o)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="membrane-relax", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment from a JSON config")
    r.add_argument("config", type=Path)
    r.add_argument("--out", type=Path, default=None, help="output directory (default: config 'out' or ./runs/<kind>)")
    r.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    r.add_argument("--threads", type=int, default=1, help="worker thread budget recorded in the manifest")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = json.loads(args.config.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    paths, messages = validate_config(config)
    if paths:
        for p, m in zip(paths, messages):
            print(f"config error at {p}: {m}", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    out = args.out or Path(config.get("out", os.path.join("runs", config["kind"])))
    return execute(config, out, seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())
