"""
Command line front end.

    nilflows algebra check <spec>
    nilflows tower build <manifest> [--out DIR]
    nilflows run <manifest> [--seed N] [--samples N] [--out DIR]

Exit codes: 0 success, 2 validation failure, 3 numerical failure
(quadrature, root finding, fixed points, progression search), 4 tower
construction failure.
"""
import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import diagnostics as dg
from .dynamics import QuadratureError, birkhoff_integral, trace_orbit
from .lie_core import ValidationError, descending_series, jacobi_residual
from .manifest import Context, RunManifest, check_regimes, parse_grid, validate_runs
from .specs import load_algebra, parse_scalar
from .towers import TowerError, dump_tower

log = logging.getLogger("nilflows.cli")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_TOWER = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# algebra check

def cmd_algebra_check(spec):
    alg = load_algebra(spec)
    res = jacobi_residual(alg)
    series = descending_series(alg)
    dims = [len(s) for s in series]
    print(f"algebra: {alg.name or spec}")
    print(f"dim: {alg.dim}")
    print("antisymmetry: ok")
    print(f"jacobi residual: {res}")
    print(f"descending series dims: {dims}")
    print(f"step: {alg.step}")
    if res != 0:
        print("FAIL: Jacobi identity violated")
        return EXIT_VALIDATION
    print("PASS")
    return EXIT_OK


# ---------------------------------------------------------------------------
# tower build

def cmd_tower(manifest, out=None):
    m = RunManifest.load(manifest, out=out)
    ctx = Context(m)
    tower = ctx.tower
    out = m.out
    out.mkdir(parents=True, exist_ok=True)
    data = json.loads(dump_tower(tower, seed=ctx.tower_seed))
    data["manifest_sha256"] = m.sha256
    path = out / f"{m.name}.tower.json"
    path.write_text(json.dumps(data, indent=2) + "\n")
    print(f"tower height {tower.height}, envelope dims {tower.envelope_dims()} -> {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# run

def _grid(r, key, default=None):
    if key not in r:
        if default is None:
            raise ValidationError(f"run {r['name']!r} needs {key!r}")
        return np.asarray(default, dtype=float)
    return parse_grid(r[key])


def _est(m, r, **kw):
    samples = m.samples if m._samples_override else int(r.get("samples", m.samples))
    seed = m.seed if m._seed_override else int(r.get("seed", m.seed))
    return dg.EstimatorConfig(samples=samples, seed=seed, workers=int(r.get("workers", m.workers)),
                              nodes=int(r.get("nodes", 8)), quad=m.quad, **kw)


def _num(r, key, default=None):
    if key not in r:
        if default is None:
            raise ValidationError(f"run {r['name']!r} needs {key!r}")
        return default
    return float(parse_scalar(r[key]))


def write_table(path, header, cols, names):
    with open(path, "w") as fh:
        fh.write(f"# {header}\n")
        fh.write(",".join(names) + "\n")
        for i in range(len(cols[0])):
            fh.write(",".join(format(float(c[i]), ".17g") for c in cols) + "\n")


def _execute(ctx, r, results):
    """Run one manifest entry; returns (CurveReport or table, extra meta)."""
    m = ctx.m
    est_name = r["estimator"]
    cfg = ctx.flow(r.get("alpha", 1.0)) if est_name != "conjugacy" else None
    extra = {}
    if est_name == "correlate":
        rep = dg.correlation_curve(ctx.obs(r["f"]), ctx.obs(r["g"]), cfg,
                                   _est(m, r, t_grid=_grid(r, "t_grid")))
    elif est_name == "shear":
        rep = dg.shear_integral_distribution(ctx.obs(r["f"]), r.get("W", "Z"), cfg, _num(r, "s", 1.0),
                                             _num(r, "t"), _est(m, r, eta=_grid(r, "eta")))
    elif est_name == "sublevel":
        C = _num(r, "C", 1.0)
        if r.get("functional", "birkhoff") == "D":
            rep = dg.sublevel_shear(cfg, C, _grid(r, "t_grid" if "t_grid" in r else "T_grid"), _est(m, r))
        else:
            rep = dg.sublevel_birkhoff(ctx.obs(r["f"]), cfg, C, _grid(r, "T_grid" if "T_grid" in r else "t_grid"),
                                       _est(m, r))
    elif est_name == "cesaro":
        rep = dg.cesaro_curve(ctx.obs(r["f"]), cfg, _num(r, "C", 1.0), _grid(r, "T_grid"), _est(m, r),
                              points=int(r.get("points", 65)))
    elif est_name == "progression":
        est = _est(m, r, t0_grid=_grid(r, "t0_grid"))
        try:
            res = dg.find_progression(ctx.obs(r["f"]), cfg, _num(r, "C", 1.0), _num(r, "epsilon", 0.2),
                                      int(r.get("ell", 1)), est)
        except dg.ProgressionNotFound as exc:
            results[r["name"]] = exc.best
            exc.best.table.meta.update(found=False)
            raise
        results[r["name"]] = res
        rep = res.table
        extra = {"t0": res.t0, "found": res.found, "estimates": res.estimates, "stderrs": res.stderr}
    elif est_name == "decouple":
        t = r.get("t")
        if isinstance(t, dict):
            t = results[t["from"]].t0
            extra["t_from"] = r["t"]["from"]
        else:
            t = _num(r, "t")
        rep = dg.decoupling_measure(ctx.obs(r["f"]), cfg, _num(r, "C", 1.0), float(t), _grid(r, "T_grid"),
                                    _est(m, r))
    elif est_name == "trigsub":
        p = ctx.obs(r["p"])
        delta = _grid(r, "delta")
        est = _est(m, r)
        fit = dg.trig_sublevel_exponent(p, delta, est)
        orc = dg.fiber_sublevel_oracle(p, delta, est.with_(samples=min(est.samples, 2000)),
                                       grid=int(r.get("oracle_grid", 10 ** 4)))
        rep = fit.report(est, p.tag)
        rep.extra = {"oracle": orc.mu, "oracle_se": orc.stderr}
        extra = {"oracle_d": orc.d, "oracle_Delta": orc.Delta}
    elif est_name == "quasi":
        s_grid = _grid(r, "s_grid")
        q = dg.quasi_invariance_ratio(cfg, _num(r, "t"), s_grid, _est(m, r))
        per = q.per_s if q.per_s is not None else np.full(len(s_grid), np.nan)
        rep = dg.CurveReport(s_grid, per, np.zeros(len(s_grid)),
                             dg._meta("quasi", _est(m, r), worst=q.worst, degenerate=q.degenerate,
                                      n_used=q.n_used, note=q.note))
    elif est_name == "compare":
        c = dg.comparison_and_distortion(cfg, _num(r, "t"), _est(m, r, delta=_grid(r, "delta")))
        rep = c.report(_est(m, r, delta=_grid(r, "delta")))
    elif est_name == "conjugacy":
        c1, c2 = ctx.flow(r.get("alpha1", 1.0)), ctx.flow(r.get("alpha2", 1.0))
        est = _est(m, r, t_grid=_grid(r, "tau_grid", np.linspace(0.0, 50.0, 38)))
        worst, rep = dg.conjugacy_check(c1, c2, ctx.obs(r["u"]), est)
        extra = {"max_defect": worst}
    elif est_name == "factorlift":
        est = _est(m, r, t_grid=_grid(r, "t_grid"))
        rep = dg.factor_lift_check(ctx.level, ctx.obs(r["f"]), ctx.obs(r["g"]), cfg, est)
        extra = {"max_ratio": float(np.max(rep.estimate / np.maximum(rep.stderr, 1e-300)))}
    elif est_name == "orbit":
        times = _grid(r, "t_grid")
        x0 = np.array([float(parse_scalar(v)) for v in r["x0"]])
        pts = trace_orbit(x0, cfg, times)
        names = ["t"] + [f"x{i + 1}" for i in range(pts.shape[1])]
        return ("table", names, [times] + [pts[:, i] for i in range(pts.shape[1])]), \
            {"estimator": "orbit", "x0": x0.tolist()}
    elif est_name == "birkhoff":
        est = _est(m, r)
        T = _grid(r, "T_grid")
        x = est.draw(ctx.lat)
        order = np.argsort(T, kind="stable")
        F = np.empty((len(T), len(x)), dtype=complex)
        F[order] = birkhoff_integral(ctx.obs(r["f"]), x, cfg, None, est.quad, times=T[order])
        rep = dg.CurveReport(T, F.real.mean(axis=1), F.real.std(axis=1) / np.sqrt(len(x)),
                             dg._meta("birkhoff", est, f=str(r["f"])),
                             {"mean_abs": np.abs(F).mean(axis=1),
                              "mean_abs_se": np.abs(F).std(axis=1) / np.sqrt(len(x))})
    else:                                     # unreachable after validation
        raise ValidationError(f"unknown estimator {est_name!r}")
    return rep, extra


def cmd_run(manifest, seed=None, samples=None, out=None):
    m = RunManifest.load(manifest, seed=seed, samples=samples, out=out)
    runs = validate_runs(m)
    ctx = Context(m)
    check_regimes(ctx, runs)
    m.out.mkdir(parents=True, exist_ok=True)
    results = {}
    header = f"manifest_sha256={m.sha256}"
    for r, _ in runs:
        name = r["name"]
        t0 = time.perf_counter()
        log.info("run %s (%s)", name, r["estimator"])
        try:
            rep, extra = _execute(ctx, r, results)
        except dg.ProgressionNotFound as exc:
            best = exc.best
            _emit(m, name, r, best.table, {"found": False, "t0": best.t0}, header, time.perf_counter() - t0)
            raise
        _emit(m, name, r, rep, extra, header, time.perf_counter() - t0)
    return EXIT_OK


def _emit(m, name, r, rep, extra, header, elapsed):
    meta = {"manifest": str(m.path), "manifest_sha256": m.sha256, "run": name, "run_spec": r,
            "seed": m.seed, "samples_override": m.samples if m._samples_override else None,
            "version": __version__, "elapsed_seconds": round(elapsed, 3)}
    csv = m.out / f"{name}.csv"
    js = m.out / f"{name}.meta.json"
    if isinstance(rep, tuple) and rep[0] == "table":
        _, names, cols = rep
        write_table(csv, f"{header} run={name}", cols, names)
        meta.update(extra)
        js.write_text(json.dumps(meta, indent=2, sort_keys=True, default=dg._json_default) + "\n")
    else:
        rep.to_csv(csv, f"{header} run={name}")
        meta.update(extra)
        rep.write_meta(js, meta)
    print(f"{name}: {csv} ({elapsed:.1f} s)")


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="nilflows", description=__doc__.split("\n\n")[0].strip())
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    a = sub.add_parser("algebra", help="algebra spec operations")
    asub = a.add_subparsers(dest="action", required=True)
    ac = asub.add_parser("check", help="validate an algebra spec")
    ac.add_argument("spec")
    t = sub.add_parser("tower", help="tower construction")
    tsub = t.add_subparsers(dest="action", required=True)
    tb = tsub.add_parser("build", help="build and serialize a maximal tower")
    tb.add_argument("manifest")
    tb.add_argument("--out")
    r = sub.add_parser("run", help="run the estimators of a manifest")
    r.add_argument("manifest")
    r.add_argument("--seed", type=int)
    r.add_argument("--samples", type=int)
    r.add_argument("--out")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "algebra":
            return cmd_algebra_check(args.spec)
        if args.command == "tower":
            return cmd_tower(args.manifest, args.out)
        return cmd_run(args.manifest, args.seed, args.samples, args.out)
    except TowerError as exc:
        print(f"tower error: {exc}", file=sys.stderr)
        return EXIT_TOWER
    except (QuadratureError, dg.ConvergenceError, dg.ProgressionNotFound) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
