"""Experiment runner.

Subcommands wrap the estimator modules with seeded determinism and
result persistence: each run writes its primary data file, a JSON
summary, gnuplot-ready two-column plot data where a figure is
natural, and a manifest embedding the resolved configuration and
derived constants.  Identical (subcommand, config, seed) produce
byte-identical data files at any worker count; only the manifest's
wall clock differs between reruns.

Exit codes: 0 success, 1 invariant failure, 2 usage or configuration
error, 3 numeric hard error.  Hard errors are also serialized into
the manifest of the failed run.

CSV schemas (fixed per subcommand):
  spectrum: orbit_id, q0_coords, top, central, bottom, se_top,
            se_central, se_bottom, crossings
  central:  orbit_id, q0_coords, estimate, stderr, min_summand,
            visits_V, case_histogram
  ugibbs:   point coordinates (x, y, s on the suspension; the four
            matrix entries on the geodesic model), weight
  visits:   return_time, count
  basin:    orbit_id, observable, mean, se
"""

__all__ = ["main"]

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .bump import BumpProfile
from .config import ConfigError, config_fields, manifest_for, parse_config
from .gibbs import (ChartBox, CoordinateObservable, EmpiricalMeasure,
                    UnstableDisk, WholeSpace, _orbit_points, marginal_ks)
from .lyapunov import (CASE_LABELS, _batch_means, _record, central_exponent,
                       qr_spectrum, slope_audit, xi_field)
from .perturbation import (PerturbationParams, closeness_audit,
                           inversion_audit, t_schedule)
from .rng import stream
from .runner import run_tasks
from .systems import CatSuspension, GeodesicSurface, make_chart


def _fmt(x):
    """Floats at 17 significant digits round-trip double precision."""
    if isinstance(x, float):
        return "%.17g" % x
    return str(x)


def _coords_text(q):
    return " ".join(_fmt(float(v)) for v in np.asarray(q).ravel())


class _Outputs:
    """File namer and registry for one run.

    All of a run's files share a directory and a stem, so the default
    layout is out_dir/<subcommand>*.{csv,json,dat}; --out moves and
    renames the whole set.  Names carry no timestamps: reruns
    overwrite, which is what reproducibility wants.
    """

    def __init__(self, cfg, subcommand, out_flag, primary_ext):
        if out_flag:
            self.dir = os.path.dirname(out_flag) or "."
            stem = os.path.basename(out_flag)
            for ext in (".csv", ".json", ".dat"):
                if stem.endswith(ext):
                    stem = stem[:-len(ext)]
            self.stem = stem
        else:
            self.dir = cfg.out_dir
            self.stem = subcommand
        os.makedirs(self.dir, exist_ok=True)
        self.files = []
        self.primary = self.path("", primary_ext)

    def path(self, suffix, ext):
        name = self.stem + suffix + ext
        self.files.append(name)
        return os.path.join(self.dir, name)


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_dat(path, pairs):
    with open(path, "w", encoding="utf-8") as fh:
        for x, y in pairs:
            fh.write("%s %s\n" % (_fmt(float(x)), _fmt(float(y))))


_PROFILE = None
_CERT = None


def _get_profile():
    # table construction and the certificate sups are not free; one
    # profile serves the whole process
    global _PROFILE, _CERT
    if _PROFILE is None:
        _PROFILE = BumpProfile()
        _CERT = _PROFILE.certificate()
    return _PROFILE, _CERT


def _build_problem(cfg, need_chart=False):
    """System, chart, perturbation and resolved shear strength.

    The shear acts on the suspension model only; geodesic runs are
    the unperturbed analytic control.  t resolves 'auto' to the
    vanishing-closeness schedule.
    """
    profile, cert = _get_profile()
    if cfg.t == "auto":
        t_used = t_schedule(cfg.eps, cert["C"])
    else:
        t_used = float(cfg.t)
    if cfg.system == "cat":
        system = CatSuspension(roof=cfg.roof)
        chart = make_chart(system, np.array(cfg.chart_base), cfg.gamma)
        params = None
        if t_used != 0.0:
            params = PerturbationParams(chart, profile, cfg.eps, t_used)
    else:
        system = GeodesicSurface()
        chart = None
        params = None
        if need_chart:
            raise ConfigError("this subcommand needs the suspension "
                              "model (--system cat)")
    return profile, system, chart, params, t_used


def _draw_start(system, seed, task):
    rng = stream(seed, task, "start")
    if isinstance(system, CatSuspension):
        q = rng.random(3)
        q[2] *= system.roof
        return q
    shear, off, length = rng.uniform(-0.2, 0.2, size=3)
    upper = np.array([[1.0, shear], [0.0, 1.0]])
    diag = np.diag([np.exp(length / 2.0), np.exp(-length / 2.0)])
    lower = np.array([[1.0, 0.0], [off, 1.0]])
    return system.reduce(upper @ diag @ lower)


def _pooled(values, fallback_se):
    vals = np.asarray(values, dtype=float)
    if len(vals) >= 2:
        return float(vals.mean()), float(vals.std(ddof=1)
                                         / np.sqrt(len(vals)))
    return float(vals.mean()), float(fallback_se)


def _xi_values(system, params, q, n):
    # the swept slope field has n+1 entries, one per orbit point; the
    # per-step stretch compares consecutive direction vectors (1, s)
    sig, _, _, _, _, _ = _record(system, params, q, n)
    r2 = (1.0 + sig[1:] * sig[1:]) / (1.0 + sig[:-1] * sig[:-1])
    return np.expm1(0.5 * np.log(r2))


# ---------------------------------------------------------------- runs


def _cmd_spectrum(cfg, args):
    _, system, _, params, t_used = _build_problem(cfg)
    out = _Outputs(cfg, "spectrum", args.out, ".csv")

    def one(i):
        q = _draw_start(system, cfg.seed, i)
        sp = qr_spectrum(system, q, cfg.steps, params=params,
                         n_settle=cfg.settle, n_batches=cfg.batches)
        return q, sp

    results = run_tasks(one, [(i,) for i in range(cfg.orbits)],
                        threads=args.threads)
    rows = []
    for i, (q, sp) in enumerate(results):
        rows.append([i, _coords_text(q), *sp.exponents, *sp.stderr,
                     "" if sp.crossings is None else sp.crossings])
    _write_csv(out.primary,
               ["orbit_id", "q0_coords", "top", "central", "bottom",
                "se_top", "se_central", "se_bottom", "crossings"],
               rows)
    names = ("top", "central", "bottom")
    summary = {"orbits": cfg.orbits, "steps": cfg.steps,
               "t_used": t_used}
    pooled = []
    for j, name in enumerate(names):
        est, se = _pooled([sp.exponents[j] for _, sp in results],
                          results[0][1].stderr[j])
        summary[name] = est
        summary["se_" + name] = se
        pooled.append(est)
    _write_json(out.path("_summary", ".json"), summary)
    _write_dat(out.path("_plot", ".dat"),
               [(j + 1, v) for j, v in enumerate(pooled)])
    return 0, out, {"t_used": t_used}


def _cmd_central(cfg, args):
    _, system, _, params, t_used = _build_problem(cfg)
    out = _Outputs(cfg, "central", args.out, ".csv")

    def one(i):
        q = _draw_start(system, cfg.seed, i)
        ce = central_exponent(system, params, q, cfg.steps,
                              n_settle=cfg.settle,
                              n_batches=cfg.batches)
        return q, ce

    results = run_tasks(one, [(i,) for i in range(cfg.orbits)],
                        threads=args.threads)
    rows = []
    for i, (q, ce) in enumerate(results):
        hist = " ".join("%s:%d" % (k, ce.cases[k]) for k in CASE_LABELS)
        rows.append([i, _coords_text(q), ce.estimate, ce.stderr,
                     ce.min_summand, ce.visits, hist])
    _write_csv(out.primary,
               ["orbit_id", "q0_coords", "estimate", "stderr",
                "min_summand", "visits_V", "case_histogram"],
               rows)

    ests = [ce.estimate for _, ce in results]
    pooled, pooled_se = _pooled(ests, results[0][1].stderr)
    summary = {
        "orbits": cfg.orbits,
        "steps": cfg.steps,
        "t_used": t_used,
        "pooled_estimate": pooled,
        "pooled_se": pooled_se,
        "positive_beyond_3se": bool(pooled > 3.0 * pooled_se),
        "min_summand": min(ce.min_summand for _, ce in results),
        "total_visits": int(sum(ce.visits for _, ce in results)),
    }
    _write_json(out.path("_summary", ".json"), summary)

    xi = _xi_values(system, params, results[0][0], cfg.steps)
    counts, edges = np.histogram(xi, bins=60)
    centers = 0.5 * (edges[:-1] + edges[1:])
    _write_dat(out.path("_xi_hist", ".dat"),
               list(zip(centers, counts.astype(float))))

    if cfg.eps_list:
        profile, cert = _get_profile()
        chart = (params.chart if params is not None
                 else make_chart(system, np.array(cfg.chart_base),
                                 cfg.gamma))
        trend = []
        for eps in cfg.eps_list:
            t_eps = (t_schedule(eps, cert["C"]) if cfg.t == "auto"
                     else float(cfg.t))
            pp = None
            if t_eps != 0.0:
                pp = PerturbationParams(chart, profile, eps, t_eps)
            seeds = [(i,) for i in range(cfg.orbits)]

            def one_eps(i, _pp=pp):
                q = _draw_start(system, cfg.seed, i)
                return central_exponent(system, _pp, q, cfg.steps,
                                        n_settle=cfg.settle,
                                        n_batches=cfg.batches).estimate

            vals = run_tasks(one_eps, seeds, threads=args.threads)
            trend.append((eps, float(np.mean(vals))))
        _write_dat(out.path("_vs_eps", ".dat"), trend)
    return 0, out, {"t_used": t_used}


def _cmd_perturb_audit(cfg, args):
    profile, system, chart, params, t_used = _build_problem(
        cfg, need_chart=True)
    if params is None:
        params = PerturbationParams(chart, profile, cfg.eps, 0.0)
    out = _Outputs(cfg, "perturb-audit", args.out, ".json")
    rep = closeness_audit(system, params, grid=cfg.grid)
    inv_err = inversion_audit(params, n=10 ** 4, seed=cfg.seed)
    payload = {
        "closeness": rep.as_dict(),
        "inversion_max_error": inv_err,
        "inversion_ok": bool(inv_err <= 1e-12),
    }
    payload["ok"] = bool(rep.ok and payload["inversion_ok"])
    _write_json(out.primary, payload)
    return (0 if payload["ok"] else 1), out, {"t_used": t_used}


def _cloud_chunk(system, params, starts, iters):
    parts = [_orbit_points(system, params, p, iters) for p in starts]
    return np.concatenate(parts)


def _cmd_ugibbs(cfg, args):
    _, system, _, params, t_used = _build_problem(cfg)
    out = _Outputs(cfg, "ugibbs", args.out, ".csv")
    disk = UnstableDisk(system, np.array(cfg.disk_base), cfg.disk_len,
                        cfg.samples, seed=cfg.seed)
    starts = disk.points()
    # fixed chunk size keeps the cloud independent of the pool width
    chunk = 256
    tasks = [(system, params, starts[i:i + chunk], cfg.iters)
             for i in range(0, len(starts), chunk)]
    cloud = np.concatenate(run_tasks(_cloud_chunk, tasks,
                                     threads=args.threads))
    n_pts = len(cloud)
    mu = EmpiricalMeasure(cloud, np.full(n_pts, 1.0 / n_pts),
                          "disk-pushforward")

    flat = mu.points.reshape(n_pts, -1)
    if isinstance(system, CatSuspension):
        header = ["x", "y", "s", "weight"]
    else:
        header = ["m00", "m01", "m10", "m11", "weight"]
    # generator keeps the full cloud out of memory a second time
    _write_csv(out.primary, header,
               ([*flat[i], mu.weights[i]] for i in range(n_pts)))

    summary = {
        "provenance": mu.provenance,
        "samples": cfg.samples,
        "iters": cfg.iters,
        "points": n_pts,
        "weight_sum": float(mu.weights.sum()),
        "t_used": t_used,
    }
    if isinstance(system, CatSuspension):
        kx, ky, ks = marginal_ks(mu, system)
        summary.update(marginal_ks_x=kx, marginal_ks_y=ky,
                       marginal_ks_s=ks)
    _write_json(out.path("_summary", ".json"), summary)
    return 0, out, {"t_used": t_used}


def _region_for(cfg, system, chart):
    spec_text = cfg.region.strip()
    if spec_text == "all":
        return WholeSpace()
    if chart is None:
        raise ConfigError("region %r needs the suspension chart"
                          % spec_text)
    if spec_text == "support":
        return ChartBox(chart, 2.0 * cfg.eps, "V")
    if spec_text == "chart":
        return ChartBox(chart, chart.gamma, "U")
    if spec_text.startswith("box:"):
        try:
            half = float(spec_text[4:])
        except ValueError:
            raise ConfigError("bad box half-width in %r" % spec_text)
        return ChartBox(chart, half, spec_text)
    raise ConfigError("unknown region %r (use all, support, chart, "
                      "or box:<half>)" % spec_text)


def _cmd_visits(cfg, args):
    from .gibbs import visit_frequency

    _, system, chart, params, t_used = _build_problem(cfg)
    region = _region_for(cfg, system, chart)
    out = _Outputs(cfg, "visits", args.out, ".csv")
    q = _draw_start(system, cfg.seed, 0)
    vs = visit_frequency(system, q, cfg.steps, region, params=params)
    pairs = sorted(vs.return_histogram.items())
    _write_csv(out.primary, ["return_time", "count"], pairs)
    _write_dat(out.path("_plot", ".dat"),
               [(k, float(v)) for k, v in pairs])
    _write_json(out.path("_summary", ".json"), {
        "region": vs.region,
        "count": vs.count,
        "steps": vs.n_steps,
        "frequency": vs.frequency,
        "min_return": vs.min_return,
        "t_used": t_used,
    })
    return 0, out, {"t_used": t_used}


def _basin_observables(cfg, system, chart, params):
    obs = {}
    if isinstance(system, CatSuspension):
        for j, name in enumerate(("x", "y", "s")):
            obs[name] = CoordinateObservable(j, name)
        if chart is not None:
            from .gibbs import BoxIndicator

            obs["inV"] = BoxIndicator(ChartBox(chart, 2.0 * cfg.eps,
                                               "V"))
    else:
        for j in range(4):
            obs["m%d%d" % divmod(j, 2)] = CoordinateObservable(j)
    return obs


def _basin_task(system, params, chart, cfg, i):
    q = _draw_start(system, cfg.seed, i)
    pts = _orbit_points(system, params, q, cfg.steps)
    row = {}
    for name, obs in _basin_observables(cfg, system, chart,
                                        params).items():
        vals = np.asarray(obs.batch(pts), dtype=float)
        nb = min(cfg.batches, len(vals))
        se = float(np.std(_batch_means(vals, nb), ddof=1)
                   / np.sqrt(nb)) if nb >= 2 else 0.0
        row[name] = (float(vals.mean()), se)
    if params is not None:
        thin = pts[::cfg.stretch_stride]
        vals = np.array([np.log1p(xi_field(system, params, p).xi)
                         for p in thin])
        nb = min(cfg.batches, len(vals))
        se = float(np.std(_batch_means(vals, nb), ddof=1)
                   / np.sqrt(nb)) if nb >= 2 else 0.0
        row["log_stretch"] = (float(vals.mean()), se)
    return q, row


def _cmd_basin(cfg, args):
    _, system, chart, params, t_used = _build_problem(cfg)
    if cfg.orbits < 2:
        raise ConfigError("basin dispersion needs at least 2 orbits")
    out = _Outputs(cfg, "basin", args.out, ".csv")
    results = run_tasks(_basin_task,
                        [(system, params, chart, cfg, i)
                         for i in range(cfg.orbits)],
                        threads=args.threads)
    names = list(results[0][1])
    rows = []
    for i, (_, row) in enumerate(results):
        for name in names:
            mean, se = row[name]
            rows.append([i, name, mean, se])
    _write_csv(out.primary, ["orbit_id", "observable", "mean", "se"],
               rows)
    summary = {"orbits": cfg.orbits, "steps": cfg.steps,
               "t_used": t_used, "observables": {}}
    for name in names:
        means = np.array([row[name][0] for _, row in results])
        ses = [row[name][1] for _, row in results]
        summary["observables"][name] = {
            "mean": float(means.mean()),
            "dispersion": float(means.std(ddof=1)),
            "max_gap": float(np.ptp(means)),
            "mean_within_se": float(np.mean(ses)),
        }
    _write_json(out.path("_summary", ".json"), summary)
    return 0, out, {"t_used": t_used}


def _verify_suites(cfg, suite):
    profile, cert = _get_profile()
    checks = {}

    if suite in ("bump", "all"):
        checks["bump"] = {"ok": all(cert["flags"].values()),
                          "certificate": cert}

    if suite in ("shear", "all"):
        system = CatSuspension(roof=cfg.roof)
        chart = make_chart(system, np.array(cfg.chart_base), cfg.gamma)
        t_used = (t_schedule(cfg.eps, cert["C"]) if cfg.t == "auto"
                  else float(cfg.t))
        pp = PerturbationParams(chart, profile, cfg.eps, t_used)
        rep = closeness_audit(system, pp, grid=32)
        inv = inversion_audit(pp, n=2000, seed=cfg.seed)
        checks["shear"] = {
            "ok": bool(rep.ok and inv <= 1e-12),
            "closeness": rep.as_dict(),
            "inversion_max_error": inv,
        }

    if suite in ("neutral", "all"):
        cat = CatSuspension(roof=cfg.roof)
        q = _draw_start(cat, cfg.seed, 0)
        ce = central_exponent(cat, None, q, 2 * 10 ** 4)
        geo = GeodesicSurface()
        sp = qr_spectrum(geo, _draw_start(geo, cfg.seed, 1), 10 ** 4)
        ok = abs(ce.estimate) <= 1e-12 and abs(sp.exponents[1]) <= 1e-3
        checks["neutral"] = {
            "ok": bool(ok),
            "cat_unperturbed_central": ce.estimate,
            "geodesic_middle_exponent": sp.exponents[1],
        }

    if suite in ("slopes", "all"):
        cat = CatSuspension(roof=cfg.roof)
        chart = make_chart(cat, np.array(cfg.chart_base), cfg.gamma)
        strong = 0.9 / (4.0 * cert["C"])
        pp = PerturbationParams(chart, profile, cfg.eps, strong)
        rep = slope_audit(cat, pp, _draw_start(cat, cfg.seed, 2),
                          5 * 10 ** 4)
        checks["slopes"] = {
            "ok": bool(rep.ok),
            "blocks": rep.n_blocks,
            "max_identity_error": rep.max_identity_error,
            "bound_violations": rep.n_bound_violations,
            "monotone_violations": rep.n_monotone_violations,
        }

    return checks


def _cmd_verify(cfg, args):
    suite = args.suite
    out = _Outputs(cfg, "verify", args.out, ".json")
    checks = _verify_suites(cfg, suite)
    ok = all(c["ok"] for c in checks.values())
    if suite == "bump":
        # the certificate itself is the promised payload
        payload = checks["bump"]["certificate"]
    else:
        payload = {"suite": suite, "ok": ok, "checks": checks}
    _write_json(out.primary, payload)
    return (0 if ok else 1), out, {"t_used": None}


# ----------------------------------------------------------- plumbing

_COMMANDS = {
    "spectrum": (_cmd_spectrum,
                 ["system", "roof", "eps", "t", "steps", "settle",
                  "orbits", "batches", "seed", "gamma", "chart_base"]),
    "central": (_cmd_central,
                ["system", "roof", "eps", "t", "steps", "settle",
                 "orbits", "batches", "seed", "gamma", "chart_base",
                 "eps_list"]),
    "perturb-audit": (_cmd_perturb_audit,
                      ["eps", "t", "grid", "seed", "gamma",
                       "chart_base", "roof"]),
    "ugibbs": (_cmd_ugibbs,
               ["system", "roof", "eps", "t", "disk_base", "disk_len",
                "samples", "iters", "seed", "gamma", "chart_base"]),
    "visits": (_cmd_visits,
               ["system", "roof", "eps", "t", "region", "steps",
                "seed", "gamma", "chart_base"]),
    "basin": (_cmd_basin,
              ["system", "roof", "eps", "t", "orbits", "steps",
               "batches", "stretch_stride", "seed", "gamma",
               "chart_base"]),
    "verify": (_cmd_verify,
               ["eps", "t", "seed", "gamma", "chart_base", "roof"]),
}


def _build_parser():
    fields = config_fields()
    parser = argparse.ArgumentParser(
        prog="hypexp",
        description="kicked-flow laboratory experiment runner")
    parser.add_argument("--version", action="version",
                        version="hypexp " + __version__)
    subs = parser.add_subparsers(dest="subcommand", required=True)
    for name, (_fn, keys) in _COMMANDS.items():
        sub = subs.add_parser(name)
        for key in keys:
            default, help_text = fields[key]
            sub.add_argument("--" + key.replace("_", "-"),
                             dest=key, default=None, metavar="V",
                             help="%s (default %s)" % (help_text,
                                                       default))
        sub.add_argument("--config", default=None,
                         help="key = value config file")
        sub.add_argument("--out", default=None,
                         help="primary output file; siblings follow "
                              "its stem")
        sub.add_argument("--out-dir", dest="out_dir", default=None,
                         help="output directory when --out is not "
                              "given (default %s)"
                              % fields["out_dir"][0])
        sub.add_argument("--threads", default=None,
                         help="worker threads (default HYPEXP_THREADS "
                              "or 1)")
        if name == "verify":
            sub.add_argument("--suite", default="all",
                             choices=["bump", "shear", "neutral",
                                      "slopes", "all"])
    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2

    fn, keys = _COMMANDS[args.subcommand]
    overrides = {k: getattr(args, k) for k in keys
                 if getattr(args, k) is not None}
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    try:
        cfg = parse_config(args.config, overrides)
        args.threads = (None if args.threads is None
                        else int(args.threads))
    except (ConfigError, ValueError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2

    profile, _ = _get_profile()
    started = time.perf_counter()
    try:
        code, out, derived = fn(cfg, args)
        manifest = manifest_for(args.subcommand, cfg, profile,
                                derived.get("t_used"))
        manifest.outputs = out.files
    except ConfigError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except (RuntimeError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        # numeric hard error: leave a manifest recording what failed
        manifest = manifest_for(args.subcommand, cfg, profile, None)
        manifest.error = "%s: %s" % (type(exc).__name__, exc)
        manifest.wall_clock_s = time.perf_counter() - started
        os.makedirs(cfg.out_dir, exist_ok=True)
        manifest.write(os.path.join(cfg.out_dir, args.subcommand
                                    + "_manifest.json"))
        print("error: %s" % manifest.error, file=sys.stderr)
        return 3
    except ValueError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    manifest.wall_clock_s = time.perf_counter() - started
    manifest.outputs.append(out.stem + "_manifest.json")
    manifest.write(os.path.join(out.dir, out.stem + "_manifest.json"))
    return code


if __name__ == "__main__":
    sys.exit(main())
