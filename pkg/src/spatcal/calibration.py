"""Estimation of the calibration fields.

A global calibration pools every (station, hour) pair into one OLS line.
The spatially adaptive calibration fits one OLS line per reference station
(anchors, with classical standard errors), then kriges the anchor
intercepts and slopes across the domain with the anchor SEs entering as
heteroscedastic nuggets, so noisy stations are shrunk harder.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg as sla

from .core import pairwise_distances
from .predict import HourPredictor, _dot_rows, _quad_rows
from .spatial_cov import ExpCov, fit_expcov_ml

SE_FLOOR = 1e-6  # keeps ML nuggets valid when a station fits exactly


@dataclass(frozen=True)
class StationAnchor:
    id: str
    x: float
    y: float
    f0: float
    f1: float
    se_f0: float
    se_f1: float
    n_hours: int


def fit_global(pred, ref):
    """Pooled OLS of reference values on predicted values: (intercept, slope)."""
    y = np.asarray(pred, dtype=float).ravel()
    z = np.asarray(ref, dtype=float).ravel()
    if y.size != z.size or y.size < 2:
        raise ValueError("need >= 2 paired values of equal length")
    ybar, zbar = y.mean(), z.mean()
    sxx = float(np.sum((y - ybar) ** 2))
    if sxx == 0.0:
        raise ValueError("predictor values have zero variance; slope undefined")
    f1 = float(np.sum((y - ybar) * (z - zbar))) / sxx
    f0 = zbar - f1 * ybar
    return f0, f1


def _station_ols(y, z):
    """Per-station OLS with classical standard errors."""
    n = y.size
    ybar, zbar = y.mean(), z.mean()
    sxx = float(np.sum((y - ybar) ** 2))
    f1 = float(np.sum((y - ybar) * (z - zbar))) / sxx
    f0 = zbar - f1 * ybar
    resid = z - f0 - f1 * y
    s2 = float(resid @ resid) / max(n - 2, 1)
    se_f1 = np.sqrt(s2 / sxx)
    se_f0 = np.sqrt(s2 * (1.0 / n + ybar**2 / sxx))
    return f0, f1, max(se_f0, SE_FLOOR), max(se_f1, SE_FLOOR)


def fit_anchors(pred, ref, paired, epa_registry, min_hours=24):
    """Per-station calibration anchors from paired hourly values.

    pred and ref are (T, m) arrays with paired a boolean mask of usable
    (hour, station) cells.  Stations with fewer than min_hours pairs or a
    degenerate predictor variance are skipped and reported.
    """
    pred = np.asarray(pred, dtype=float)
    ref = np.asarray(ref, dtype=float)
    anchors, skipped = [], []
    for j, sid in enumerate(epa_registry.ids):
        ok = paired[:, j]
        n = int(ok.sum())
        if n < min_hours:
            skipped.append((sid, f"only {n} paired hours"))
            continue
        y, z = pred[ok, j], ref[ok, j]
        if np.var(y) == 0.0:
            skipped.append((sid, "degenerate predictor variance"))
            continue
        f0, f1, se0, se1 = _station_ols(y, z)
        x, yy = epa_registry.xy[j]
        anchors.append(StationAnchor(id=sid, x=float(x), y=float(yy), f0=f0, f1=f1,
                                     se_f0=se0, se_f1=se1, n_hours=n))
    return anchors, skipped


@dataclass(frozen=True)
class KrigeSpec:
    """One kriged coefficient surface: ordinary kriging with anchor nuggets."""

    anchor_xy: np.ndarray
    values: np.ndarray
    nugget: np.ndarray
    cov: ExpCov
    mean: float
    idw: bool = False

    def predict(self, targets_xy):
        targets_xy = np.asarray(targets_xy, dtype=float)
        if self.idw:
            return self._idw(targets_xy), np.full(len(targets_xy), np.nan)
        S = self.cov.v2 * np.exp(-pairwise_distances(self.anchor_xy, self.anchor_xy)
                                 / self.cov.lam)
        S[np.diag_indices(len(self.values))] += self.nugget
        factor = sla.cho_factor(S, lower=True, check_finite=False)
        w = sla.cho_solve(factor, self.values - self.mean, check_finite=False)
        G = sla.cho_solve(factor, np.eye(len(self.values)), check_finite=False)
        ones = np.ones(len(self.values))
        si_1 = G @ ones
        C = self.cov.v2 * np.exp(-pairwise_distances(targets_xy, self.anchor_xy)
                                 / self.cov.lam)
        mean = self.mean + _dot_rows(C, w)
        # OK variance: plug-in part plus the unknown-constant-mean correction
        q = _quad_rows(C, G)
        lagrange = (1.0 - _dot_rows(C, si_1)) ** 2 / float(ones @ si_1)
        var = np.maximum(self.cov.v2 - q + lagrange, 0.0)
        return mean, var

    def _idw(self, targets_xy):
        d = pairwise_distances(targets_xy, self.anchor_xy)
        out = np.empty(len(targets_xy))
        exact = d.min(axis=1) == 0.0
        out[exact] = self.values[np.argmin(d[exact], axis=1)]
        rest = ~exact
        if rest.any():
            w = 1.0 / d[rest] ** 2
            out[rest] = (w @ self.values) / w.sum(axis=1)
        return out


def krige_field(anchors, which, targets_xy=None):
    """Fit one coefficient surface from anchors; optionally evaluate it.

    which selects 'f0' or 'f1'.  The exponential covariance is fitted by ML
    with each anchor's squared SE as its nugget; if the ML fit fails the
    surface falls back to inverse-distance weighting, flagged on the spec.
    """
    if len(anchors) < 5:
        raise ValueError(f"need >= 5 anchors, got {len(anchors)}")
    if which not in ("f0", "f1"):
        raise ValueError(f"which must be 'f0' or 'f1', got {which!r}")
    xy = np.array([[a.x, a.y] for a in anchors])
    values = np.array([getattr(a, which) for a in anchors])
    se = np.array([getattr(a, f"se_{which}") for a in anchors])
    nugget = np.maximum(se, SE_FLOOR) ** 2
    try:
        ml = fit_expcov_ml(values, xy, nugget=nugget, estimate_mean=True)
        spec = KrigeSpec(anchor_xy=xy, values=values, nugget=nugget,
                         cov=ml.cov, mean=ml.mean)
    except Exception:
        spec = KrigeSpec(anchor_xy=xy, values=values, nugget=nugget,
                         cov=ExpCov(v2=1.0, lam=1.0), mean=float(values.mean()),
                         idw=True)
    if targets_xy is None:
        return spec
    mean, var = spec.predict(targets_xy)
    return mean, var, spec


@dataclass(frozen=True)
class CalibrationField:
    """Evaluable calibration pair (f0, f1): global constants or kriged surfaces."""

    mode: str                   # "global" | "adaptive"
    f0_const: float = 0.0
    f1_const: float = 1.0
    f0_spec: KrigeSpec | None = None
    f1_spec: KrigeSpec | None = None
    anchors: tuple = ()

    def evaluate(self, targets_xy):
        targets_xy = np.asarray(targets_xy, dtype=float)
        if self.mode == "global":
            n = len(targets_xy)
            return np.full(n, self.f0_const), np.full(n, self.f1_const)
        f0, _ = self.f0_spec.predict(targets_xy)
        f1, _ = self.f1_spec.predict(targets_xy)
        return f0, f1


def identity_field() -> CalibrationField:
    return CalibrationField(mode="global", f0_const=0.0, f1_const=1.0)


def global_field(f0: float, f1: float) -> CalibrationField:
    return CalibrationField(mode="global", f0_const=float(f0), f1_const=float(f1))


def predictions_at_stations(series, params_list, basis, noise, covariates_by_hour=None):
    """Hidden-field EBLP at every reference station for each fitted hour.

    Returns (hours, pred, paired): pred is (T_f, m) with the per-hour EBLP of
    the hidden field at the station locations, paired marks cells where the
    station also reported.  Only sensor data enter the predictions.
    """
    panel_by_t = {p.t: p for p in series.panels}
    epa_xy = series.epa.xy
    hours, rows, paired = [], [], []
    for i, params in enumerate(params_list):
        panel = panel_by_t[params.t]
        cov = None if covariates_by_hour is None else covariates_by_hour[i]
        hp = HourPredictor(params, panel, basis, series.airbox.xy, noise, cov)
        rows.append(hp.hidden_mean(epa_xy))
        paired.append(panel.epa_present)
        hours.append(params.t)
    return hours, np.array(rows), np.array(paired)


def build_field(series, params_list, basis, noise, hours, mode,
                min_hours=24, covariates_by_hour=None,
                station_values=None) -> CalibrationField:
    """Fit the calibration field for a window of hours.

    hours is the set of panel hour stamps in the window; params_list must
    cover them (hours without fitted parameters are skipped).  station_values
    optionally overrides the reference values (T_f, m) used for fitting,
    which evaluation uses to restrict to training stations.
    """
    hours = set(hours)
    in_window = [p for p in params_list if p.t in hours]
    if not in_window:
        raise ValueError("empty calibration window: no fitted hours in range")
    hs, pred, paired = predictions_at_stations(series, in_window, basis, noise,
                                               covariates_by_hour)
    panel_by_t = {p.t: p for p in series.panels}
    ref = np.array([panel_by_t[t].epa_values for t in hs])
    if station_values is not None:
        sv = np.asarray(station_values, dtype=float)
        if sv.shape != ref.shape:
            raise ValueError(f"station_values shape {sv.shape} != {ref.shape}")
        ref = sv
        paired = paired & np.isfinite(ref)

    if mode == "global":
        mask = paired.ravel()
        f0, f1 = fit_global(pred.ravel()[mask], ref.ravel()[mask])
        return global_field(f0, f1)
    if mode != "adaptive":
        raise ValueError(f"unknown calibration mode {mode!r}")
    anchors, _skipped = fit_anchors(pred, ref, paired, series.epa, min_hours=min_hours)
    if not anchors:
        raise ValueError("adaptive calibration: no station produced an anchor")
    f0_spec = krige_field(anchors, "f0")
    f1_spec = krige_field(anchors, "f1")
    return CalibrationField(mode="adaptive", f0_spec=f0_spec, f1_spec=f1_spec,
                            anchors=tuple(anchors))


# ---------------------------------------------------------------------------
# serialization

def save_field(out_dir, field: CalibrationField):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"mode": field.mode}
    if field.mode == "global":
        doc["f0"] = field.f0_const
        doc["f1"] = field.f1_const
    else:
        for name in ("f0", "f1"):
            spec = getattr(field, f"{name}_spec")
            doc[name] = {"v2": spec.cov.v2, "lam": spec.cov.lam,
                         "mean": spec.mean, "idw": spec.idw}
        with open(out / "anchors.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["id", "x", "y", "f0", "se_f0", "f1", "se_f1", "n_hours"])
            for a in field.anchors:
                w.writerow([a.id, repr(a.x), repr(a.y), repr(a.f0), repr(a.se_f0),
                            repr(a.f1), repr(a.se_f1), a.n_hours])
    with open(out / "field.json", "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_field(in_dir) -> CalibrationField:
    d = Path(in_dir)
    with open(d / "field.json", encoding="utf-8") as f:
        doc = json.load(f)
    if doc["mode"] == "global":
        return global_field(doc["f0"], doc["f1"])
    anchors = []
    with open(d / "anchors.csv", newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            anchors.append(StationAnchor(
                id=row["id"], x=float(row["x"]), y=float(row["y"]),
                f0=float(row["f0"]), se_f0=float(row["se_f0"]),
                f1=float(row["f1"]), se_f1=float(row["se_f1"]),
                n_hours=int(row["n_hours"])))
    xy = np.array([[a.x, a.y] for a in anchors])
    specs = {}
    for name in ("f0", "f1"):
        values = np.array([getattr(a, name) for a in anchors])
        nugget = np.maximum(np.array([getattr(a, f"se_{name}") for a in anchors]),
                            SE_FLOOR) ** 2
        info = doc[name]
        specs[name] = KrigeSpec(anchor_xy=xy, values=values, nugget=nugget,
                                cov=ExpCov(v2=info["v2"], lam=info["lam"]),
                                mean=info["mean"], idw=info["idw"])
    return CalibrationField(mode="adaptive", f0_spec=specs["f0"], f1_spec=specs["f1"],
                            anchors=tuple(anchors))
