"""Command-line pipeline: ingest, simulate, fit, calibrate, predict,
diagnose, evaluate, explore.

Each stage reads and writes the documented CSV/JSON/SVG artifacts (see
FORMATS.md) and echoes its effective configuration into the output
directory, so any run is reproducible byte-for-byte from the echo.  Errors
exit nonzero with a single machine-parseable line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import basis as basis_mod
from . import evaluation, ingest, predict, sim
from .calibration import build_field, load_field, save_field
from .config import RunConfig, load_config, save_config
from .fieldfit import FitConfig, HourlyParams, fit_series
from .noise_model import (estimate_noise_model, load_noise_model,
                          read_colocated_csv, save_noise_model, screen_sensors,
                          write_colocated_csv)
from .robust import HuberConfig
from .spatial_cov import ExpCov
from ._svg import boxplot_svg, heatmap_svg, scatter_svg


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if overrides:
        import dataclasses
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def _echo(out_dir, cfg: RunConfig):
    save_config(Path(out_dir) / "config_used.json", cfg)


def _fit_config(cfg: RunConfig) -> FitConfig:
    return FitConfig(
        huber=HuberConfig(c=cfg.huber_c, max_iter=cfg.huber_max_iter, tol=cfg.huber_tol),
        H=cfg.h_bins(), delta=cfg.delta, min_pairs=cfg.min_pairs,
        mcd_h_frac=cfg.mcd_h_frac, mcd_subsets=cfg.mcd_subsets,
        lam_bracket=(cfg.lambda_min, cfg.lambda_max), seed=cfg.seed)


# ---------------------------------------------------------------------------
# params table I/O

def write_params_csv(path, params_list):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        K = len(params_list[0].alpha) if params_list else 0
        w.writerow(["hour", "v2", "lambda", "huber_scale", "huber_converged",
                    "cov_degenerate", "cov_pinned"]
                   + [f"alpha_{k}" for k in range(K)])
        for p in params_list:
            w.writerow([p.t, repr(p.cov.v2), repr(p.cov.lam), repr(p.huber_scale),
                        int(p.huber_converged), int(p.cov_degenerate),
                        int(p.cov_pinned)] + [repr(float(a)) for a in p.alpha])


def read_params_csv(path, series, basis):
    """Rebuild HourlyParams from the audit table plus the panel data."""
    panel_by_t = {p.t: p for p in series.panels}
    phi_full = basis_mod.evaluate(basis, series.airbox.xy)
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            t = int(row["hour"])
            panel = panel_by_t[t]
            alpha = np.array([float(row[k]) for k in row if k.startswith("alpha_")])
            present = panel.airbox_present
            resid = panel.airbox_values[present] - phi_full[present] @ alpha
            out.append(HourlyParams(
                t=t, alpha=alpha, beta=np.zeros(0),
                cov=ExpCov(v2=float(row["v2"]), lam=float(row["lambda"])),
                residuals=resid, present=present,
                huber_scale=float(row["huber_scale"]),
                huber_converged=bool(int(row["huber_converged"])),
                cov_degenerate=bool(int(row["cov_degenerate"])),
                cov_pinned=bool(int(row["cov_pinned"]))))
    return out


def _load_fit(fit_dir, series):
    d = Path(fit_dir)
    basis = basis_mod.from_text((d / "basis.txt").read_text(encoding="utf-8"))
    params = read_params_csv(d / "params.csv", series, basis)
    noise = load_noise_model(d / "noise.txt")
    return basis, params, noise


def _windows(series_hours, window_hours):
    """Split the hour axis into consecutive fixed-size windows."""
    if window_hours <= 0:
        return {"all": list(series_hours)}
    out = {}
    for i in range(0, len(series_hours), window_hours):
        chunk = series_hours[i:i + window_hours]
        out[f"w{i // window_hours:03d}"] = list(chunk)
    return out


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(args):
    cfg = _load_run_config(args)
    doc = {}
    if args.sim_config:
        with open(args.sim_config, encoding="utf-8") as f:
            doc = json.load(f)
    sim_cfg = sim.sim_config_from_dict({**doc, "seed": doc.get("seed", cfg.seed)})
    series, _truth = sim.simulate(sim_cfg)
    out = Path(args.out)
    ingest.save_panel_series(out, series)
    coloc_doc = doc.get("colocated", {})
    coloc_cfg = sim.colocated_config_from_dict(
        {**coloc_doc, "seed": coloc_doc.get("seed", sim_cfg.seed + 1)},
        default_noise=sim_cfg.noise)
    write_colocated_csv(out / "colocated.csv", sim.colocated_sim(coloc_cfg))
    with open(out / "sim_config_used.json", "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    _echo(out, cfg)
    print(f"simulated {sim_cfg.n_hours} hours, {sim_cfg.n_airbox} sensor and "
          f"{sim_cfg.m_epa} reference sites -> {out}")
    return 0


def cmd_ingest(args):
    cfg = _load_run_config(args)
    air_raw = ingest.parse_records(args.airbox)
    epa_raw = ingest.parse_records(args.epa)
    air_clean, air_dropped = ingest.clean(air_raw)
    epa_clean, epa_dropped = ingest.clean(epa_raw)
    series = ingest.aggregate_hourly(air_clean, epa_clean)
    series = ingest.filter_hours(series, cfg.min_airbox, cfg.min_epa)
    out = Path(args.out)
    ingest.save_panel_series(out, series)
    _echo(out, cfg)
    print(f"cleaned: dropped {air_dropped} sensor and {epa_dropped} reference records; "
          f"{len(series.panels)} hours retained -> {out}")
    return 0


def cmd_fit(args):
    cfg = _load_run_config(args)
    series = ingest.load_panel_series(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    basis = basis_mod.build_basis(series.airbox.xy, cfg.n_basis, seed=cfg.basis_seed)
    (out / "basis.txt").write_text(basis_mod.to_text(basis), encoding="utf-8")

    if args.colocated:
        coloc = read_colocated_csv(args.colocated)
        screened, dropped = screen_sensors(coloc, min_corr=cfg.min_corr)
        fit = estimate_noise_model(screened, trim=cfg.trim, min_hours=cfg.noise_min_hours)
        noise = fit.model
        save_noise_model(out / "noise.txt", noise)
        with open(out / "noise_points.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["level", "variance"])
            for lv, s2 in fit.points:
                w.writerow([repr(float(lv)), repr(float(s2))])
        print(f"noise model {noise}; {len(dropped)} sensors screened out")
    elif args.noise:
        noise = load_noise_model(args.noise)
        save_noise_model(out / "noise.txt", noise)
    else:
        raise ValueError("fit requires --colocated (to estimate the noise model) "
                         "or --noise (a fitted one)")

    result = fit_series(series, basis, _fit_config(cfg), n_threads=cfg.threads)
    write_params_csv(out / "params.csv", result.params)
    _echo(out, cfg)
    print(f"fitted {len(result.params)} hours ({len(result.failures)} failures) -> {out}")
    return 0


def cmd_calibrate(args):
    cfg = _load_run_config(args)
    series = ingest.load_panel_series(args.data)
    basis, params, noise = _load_fit(args.fit, series)
    mode = args.mode or cfg.calibration_mode
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    windows = _windows([p.t for p in params], cfg.window_hours)
    with open(out / "windows.json", "w", encoding="utf-8") as f:
        json.dump(windows, f, indent=2, sort_keys=True)
        f.write("\n")
    for label, hours in windows.items():
        field = build_field(series, params, basis, noise, hours, mode,
                            min_hours=cfg.min_anchor_hours)
        save_field(out / label, field)
    _echo(out, cfg)
    print(f"calibrated {len(windows)} window(s) in {mode} mode -> {out}")
    return 0


def _grid(series, nx, ny):
    xy = np.vstack([series.airbox.xy, series.epa.xy])
    xs = np.linspace(xy[:, 0].min(), xy[:, 0].max(), nx)
    ys = np.linspace(xy[:, 1].min(), xy[:, 1].max(), ny)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def _field_for_hour(field_dir, hour):
    d = Path(field_dir)
    windows = json.loads((d / "windows.json").read_text(encoding="utf-8"))
    for label, hours in windows.items():
        if hour in hours:
            return load_field(d / label)
    raise ValueError(f"hour {hour} is not covered by any calibration window")


def cmd_predict(args):
    cfg = _load_run_config(args)
    series = ingest.load_panel_series(args.data)
    basis, params, noise = _load_fit(args.fit, series)
    by_t = {p.t: p for p in params}
    if args.hour not in by_t:
        raise ValueError(f"hour {args.hour} has no fitted parameters")
    field = _field_for_hour(args.field, args.hour)
    targets = _grid(series, cfg.grid_nx, cfg.grid_ny)
    panel = {p.t: p for p in series.panels}[args.hour]

    if args.fused:
        surface = predict.predict_fused(by_t[args.hour], panel, basis,
                                        series.airbox.xy, series.epa.xy, noise,
                                        field, cfg.sigma_xi2, targets)
    else:
        surface = predict.predict_airbox_only(by_t[args.hour], panel, basis,
                                              series.airbox.xy, noise, field, targets)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "surface.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["x", "y", "mean", "variance"])
        for (x, y), m, v in zip(surface.xy, surface.mean, surface.variance):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(m)), repr(float(v))])
    (out / "mean.svg").write_text(
        heatmap_svg(surface.xy[:, 0], surface.xy[:, 1], surface.mean,
                    title=f"{surface.method} mean, hour {args.hour}"), encoding="utf-8")
    (out / "variance.svg").write_text(
        heatmap_svg(surface.xy[:, 0], surface.xy[:, 1], surface.variance,
                    title=f"{surface.method} variance, hour {args.hour}"), encoding="utf-8")
    _echo(out, cfg)
    print(f"predicted {len(targets)} targets at hour {args.hour} "
          f"({surface.method}, {surface.n_clamped} clamped) -> {out}")
    return 0


def cmd_diagnose(args):
    cfg = _load_run_config(args)
    series = ingest.load_panel_series(args.data)
    basis, params, noise = _load_fit(args.fit, series)
    panel_by_t = {p.t: p for p in series.panels}
    hours = [p.t for p in params] if not args.hours else args.hours
    by_t = {p.t: p for p in params}

    n = len(series.airbox)
    collected = [[] for _ in range(n)]
    excluded = 0
    for t in hours:
        field = _field_for_hour(args.field, t)
        diag = predict.standardized_residuals(by_t[t], panel_by_t[t], basis,
                                              series.airbox.xy, series.epa.xy,
                                              noise, field, cfg.sigma_xi2)
        idx = np.flatnonzero(panel_by_t[t].airbox_present)
        for i, r, ex in zip(idx, diag.r, diag.excluded):
            if ex:
                excluded += 1
            elif np.isfinite(r):
                collected[i].append(r)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .robust import mad as robust_mad
    with open(out / "residual_summary.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["id", "x", "y", "n_hours", "median_r", "mad_r"])
        for sid, (x, y), rs in zip(series.airbox.ids, series.airbox.xy, collected):
            if not rs:
                continue
            arr = np.array(rs)
            w.writerow([sid, repr(float(x)), repr(float(y)), len(rs),
                        repr(float(np.median(arr))), repr(robust_mad(arr))])
    _echo(out, cfg)
    print(f"diagnostics over {len(hours)} hours ({excluded} zero-noise rows excluded) -> {out}")
    return 0


def cmd_evaluate(args):
    cfg = _load_run_config(args)
    series = ingest.load_panel_series(args.data)
    basis, params, noise = _load_fit(args.fit, series)
    art = evaluation.EvalArtifacts(series=series, params_list=tuple(params),
                                   basis=basis, noise=noise, sigma_xi2=cfg.sigma_xi2,
                                   min_anchor_hours=cfg.min_anchor_hours)
    windows = _windows([p.t for p in params], cfg.window_hours)
    methods = tuple(args.methods.split(",")) if args.methods else evaluation.METHODS
    rows = evaluation.replicate(art, windows, n_reps=cfg.n_reps, seed=cfg.seed,
                                methods=methods)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["window", "method", "rep", "rmspe"])
        for r in rows:
            w.writerow([r["window"], r["method"], r["rep"], repr(r["rmspe"])])
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["window", "method", "n", "mean", "median", "q25", "q75"])
        for s in evaluation.summarize(rows):
            w.writerow([s["window"], s["method"], s["n"], repr(s["mean"]),
                        repr(s["median"]), repr(s["q25"]), repr(s["q75"])])
    for label in windows:
        groups = [(m, [r["rmspe"] for r in rows
                       if r["window"] == label and r["method"] == m])
                  for m in methods]
        (out / f"boxplot_{label}.svg").write_text(
            boxplot_svg(groups, title=f"RMSPE, window {label}", ylabel="RMSPE (ppm)"),
            encoding="utf-8")
    _echo(out, cfg)
    print(f"evaluated {len(methods)} methods x {cfg.n_reps} reps x "
          f"{len(windows)} window(s) -> {out}")
    return 0


def cmd_explore(args):
    cfg = _load_run_config(args)
    series = ingest.load_panel_series(args.data)
    report = evaluation.explore(series, radius_km=cfg.explore_radius_km,
                                min_neighbors=cfg.explore_min_neighbors)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["station", "n_neighbors", "nearest", "nearest_km",
                    "r2_nearest", "intercept_nearest", "slope_nearest", "n_nearest",
                    "r2_avg", "intercept_avg", "slope_avg", "n_avg"])
        for row in report:
            ns, av = row["nearest_stats"], row["avg_stats"]
            w.writerow([row["station"], row["n_neighbors"], row["nearest"],
                        repr(row["nearest_km"])]
                       + ([repr(ns["r2"]), repr(ns["intercept"]), repr(ns["slope"]),
                           ns["n_hours"]] if ns else ["", "", "", 0])
                       + ([repr(av["r2"]), repr(av["intercept"]), repr(av["slope"]),
                           av["n_hours"]] if av else ["", "", "", 0]))
    # per-station scatter of paired hourly values, identity and OLS lines
    panel_vals = {
        "epa": np.array([p.epa_values for p in series.panels]),
        "epa_ok": np.array([p.epa_present for p in series.panels]),
        "air": np.array([p.airbox_values for p in series.panels]),
        "air_ok": np.array([p.airbox_present for p in series.panels]),
    }
    id_to_col = {sid: i for i, sid in enumerate(series.airbox.ids)}
    for row in report:
        if not row["nearest_stats"]:
            continue
        j = series.epa.ids.index(row["station"])
        i = id_to_col[row["nearest"]]
        ok = panel_vals["epa_ok"][:, j] & panel_vals["air_ok"][:, i]
        ns = row["nearest_stats"]
        svg = scatter_svg(panel_vals["epa"][ok, j], panel_vals["air"][ok, i],
                          title=f"{row['station']} vs nearest sensor",
                          xlabel="reference (ppm)", ylabel="sensor (ppm)",
                          lines=[(0.0, 1.0, "blue"),
                                 (ns["intercept"], ns["slope"], "red")])
        (out / f"scatter_{row['station']}.svg").write_text(svg, encoding="utf-8")
    flagged = " (no qualifying stations)" if not report else ""
    _echo(out, cfg)
    print(f"explored {len(report)} stations{flagged} -> {out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(
        prog="spatcal",
        description="Calibrate a dense noisy sensor network against sparse "
                    "reference stations and predict calibrated surfaces.")
    p.add_argument("--config", help="run configuration JSON (defaults otherwise)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, help="worker threads (determinism-safe)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate synthetic two-network data")
    s.add_argument("--sim-config", help="simulation config JSON")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("ingest", help="parse, clean, aggregate raw record CSVs")
    s.add_argument("--airbox", required=True, help="raw sensor records CSV")
    s.add_argument("--epa", required=True, help="raw reference records CSV")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("fit", help="fit per-hour parameters and the noise model")
    s.add_argument("--data", required=True, help="panel directory")
    s.add_argument("--colocated", help="colocated sensor CSV for the noise model")
    s.add_argument("--noise", help="pre-fitted noise model file")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("calibrate", help="fit calibration fields per window")
    s.add_argument("--data", required=True)
    s.add_argument("--fit", required=True, help="fit output directory")
    s.add_argument("--mode", choices=["global", "adaptive"])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("predict", help="predict a calibrated surface for one hour")
    s.add_argument("--data", required=True)
    s.add_argument("--fit", required=True)
    s.add_argument("--field", required=True, help="calibrate output directory")
    s.add_argument("--hour", type=int, required=True)
    s.add_argument("--fused", action="store_true",
                   help="fuse reference data into the predictor")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("diagnose", help="standardized residual diagnostics")
    s.add_argument("--data", required=True)
    s.add_argument("--fit", required=True)
    s.add_argument("--field", required=True)
    s.add_argument("--hours", type=int, nargs="*", default=[])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("evaluate", help="hold-out comparison of methods M1..M6")
    s.add_argument("--data", required=True)
    s.add_argument("--fit", required=True)
    s.add_argument("--methods", help="comma-separated subset of M1..M6")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("explore", help="raw nearest-sensor and neighborhood comparison")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_explore)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
