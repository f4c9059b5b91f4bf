"""Hold-out evaluation of the competing predictors, plus raw-data exploration.

Reference stations are split per hour into training (2/3 of the non-missing
values, ceil on ties) and test thirds.  Six predictors are compared by
pooled RMSPE per window: the uncalibrated sensor-only predictor, sensor-only
and fused predictors under global calibration, the same pair under the
spatially adaptive calibration, and reference-only ordinary kriging.
Calibration fields are refit per replication from training stations only;
the per-hour trend/covariance fits use sensor data alone and are shared.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .calibration import build_field, identity_field
from .core import pairwise_distances
from .predict import FusedSystem, HourPredictor, _dot_rows
from .spatial_cov import fit_expcov_ml

METHODS = ("M1", "M2", "M3", "M4", "M5", "M6")


def rmspe(pred, actual) -> float:
    """Root mean squared prediction error over paired values."""
    p = np.asarray(pred, dtype=float).ravel()
    a = np.asarray(actual, dtype=float).ravel()
    if p.size == 0 or p.size != a.size:
        raise ValueError(f"need equal nonempty inputs, got {p.size} and {a.size}")
    d = p - a
    return float(np.sqrt(np.mean(d * d)))


@dataclass(frozen=True)
class SplitPlan:
    """Per-hour train/test partition of the non-missing reference stations."""

    rep: int
    train: dict
    test: dict

    def __post_init__(self):
        for t in self.train:
            tr, te = self.train[t], self.test[t]
            if np.intersect1d(tr, te).size:
                raise ValueError(f"hour {t}: train and test overlap")


def make_split(series, hours, rep, seed) -> SplitPlan:
    """Draw one train/test split; train gets ceil(2k/3) of k present stations."""
    panel_by_t = {p.t: p for p in series.panels}
    train, test = {}, {}
    for t in hours:
        present = np.flatnonzero(panel_by_t[t].epa_present)
        k = present.size
        n_train = int(np.ceil(2 * k / 3))
        rng = np.random.default_rng(np.random.SeedSequence([seed, rep, t]))
        perm = rng.permutation(k)
        train[t] = np.sort(present[perm[:n_train]])
        test[t] = np.sort(present[perm[n_train:]])
    return SplitPlan(rep=rep, train=train, test=test)


@dataclass
class EvalArtifacts:
    """Fitted inputs shared by every method, replication, and window."""

    series: object
    params_list: tuple
    basis: object
    noise: object
    sigma_xi2: float = 0.0
    min_anchor_hours: int = 24
    _predictors: dict = field(default_factory=dict)
    _hidden_at_epa: dict = field(default_factory=dict)

    def __post_init__(self):
        self.params_by_t = {p.t: p for p in self.params_list}
        self.panel_by_t = {p.t: p for p in self.series.panels}

    def predictor(self, t) -> HourPredictor:
        if t not in self._predictors:
            self._predictors[t] = HourPredictor(
                self.params_by_t[t], self.panel_by_t[t], self.basis,
                self.series.airbox.xy, self.noise)
        return self._predictors[t]

    def hidden_at_epa(self, t):
        if t not in self._hidden_at_epa:
            self._hidden_at_epa[t] = self.predictor(t).hidden_mean(self.series.epa.xy)
        return self._hidden_at_epa[t]


def _train_masked_values(art, hours, split):
    """Reference values with test cells blanked, for leakage-free field fits."""
    out = np.array([art.panel_by_t[t].epa_values for t in hours])
    for i, t in enumerate(hours):
        masked = out[i].copy()
        masked[split.test[t]] = np.nan
        out[i] = masked
    return out


def _fit_window_field(art, hours, split, mode):
    params_in = [art.params_by_t[t] for t in hours if t in art.params_by_t]
    station_values = _train_masked_values(art, [p.t for p in params_in], split)
    return build_field(art.series, params_in, art.basis, art.noise,
                       hours=[p.t for p in params_in], mode=mode,
                       min_hours=art.min_anchor_hours,
                       station_values=station_values)


def _ok_reference_only(art, t, train_idx, test_xy):
    """Per-hour ordinary kriging on training reference data with a nugget."""
    panel = art.panel_by_t[t]
    z = panel.epa_values[train_idx]
    xy = art.series.epa.xy[train_idx]
    ml = fit_expcov_ml(z, xy, nugget=np.zeros(z.size), estimate_mean=True,
                       estimate_nugget=True)
    S = ml.cov.v2 * np.exp(-pairwise_distances(xy, xy) / ml.cov.lam)
    S[np.diag_indices(z.size)] += ml.nugget2
    w = np.linalg.solve(S, z - ml.mean)
    C = ml.cov.v2 * np.exp(-pairwise_distances(test_xy, xy) / ml.cov.lam)
    return ml.mean + _dot_rows(C, w)


def run_method(method, window_hours, split: SplitPlan, art: EvalArtifacts,
               fields=None) -> float:
    """Pooled RMSPE of one method over a window under one split.

    fields, when given, maps "global"/"adaptive" to prefit CalibrationFields
    for this (window, split); otherwise they are fit here from training
    stations.  The pooled denominator is the total test count of the window.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    hours = [t for t in window_hours if t in art.params_by_t]
    if not hours:
        raise ValueError("no fitted hours in the window")
    fields = fields or {}

    if method == "M1":
        fld = identity_field()
    elif method in ("M2", "M3"):
        fld = fields.get("global") or _fit_window_field(art, hours, split, "global")
    elif method in ("M4", "M5"):
        fld = fields.get("adaptive") or _fit_window_field(art, hours, split, "adaptive")
    else:
        fld = None

    epa_xy = art.series.epa.xy
    if fld is not None and method != "M1":
        f0_all, f1_all = fld.evaluate(epa_xy)

    preds, actuals = [], []
    for t in hours:
        test_idx = split.test[t]
        if test_idx.size == 0:
            continue
        panel = art.panel_by_t[t]
        actual = panel.epa_values[test_idx]
        if method == "M1":
            pred = art.hidden_at_epa(t)[test_idx]
        elif method in ("M2", "M4"):
            pred = f0_all[test_idx] + f1_all[test_idx] * art.hidden_at_epa(t)[test_idx]
        elif method in ("M3", "M5"):
            train_mask = np.zeros(len(epa_xy), dtype=bool)
            train_mask[split.train[t]] = True
            panel_train = replace(panel, epa_present=panel.epa_present & train_mask)
            sys = FusedSystem(art.params_by_t[t], panel_train, art.basis,
                              art.series.airbox.xy, epa_xy, art.noise, fld,
                              sigma_xi2=art.sigma_xi2,
                              hour_predictor=art.predictor(t))
            pred, _ = sys.predict(epa_xy[test_idx])
        else:  # M6
            pred = _ok_reference_only(art, t, split.train[t], epa_xy[test_idx])
        preds.append(pred)
        actuals.append(actual)
    return rmspe(np.concatenate(preds), np.concatenate(actuals))


def replicate(art: EvalArtifacts, windows, n_reps, seed, methods=METHODS):
    """Full factorial (window x method x replication) RMSPE table.

    windows maps labels to hour lists.  Each replication draws a fresh split
    from its own seed chain; calibration fields are fit once per
    (window, replication) and shared across the methods that use them.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    rows = []
    for label, hours in windows.items():
        hours = [t for t in hours if t in art.params_by_t]
        for rep in range(n_reps):
            split = make_split(art.series, hours, rep, seed)
            fields = {}
            if any(m in ("M2", "M3") for m in methods):
                fields["global"] = _fit_window_field(art, hours, split, "global")
            if any(m in ("M4", "M5") for m in methods):
                fields["adaptive"] = _fit_window_field(art, hours, split, "adaptive")
            for m in methods:
                rows.append({"window": label, "method": m, "rep": rep,
                             "rmspe": run_method(m, hours, split, art, fields)})
    return rows


def summarize(rows):
    """Per (window, method) mean/median/quartiles of the replication RMSPEs."""
    cells = {}
    for r in rows:
        cells.setdefault((r["window"], r["method"]), []).append(r["rmspe"])
    out = []
    for (w, m), vals in sorted(cells.items()):
        v = np.array(vals)
        out.append({"window": w, "method": m, "n": v.size,
                    "mean": float(v.mean()), "median": float(np.median(v)),
                    "q25": float(np.quantile(v, 0.25)),
                    "q75": float(np.quantile(v, 0.75))})
    return out


def explore(series, radius_km=2.0, min_neighbors=5):
    """Raw comparison of each station against nearby sensors.

    For stations with >= min_neighbors sensors within radius_km: R^2 and the
    OLS line of the nearest sensor's hourly values against the station, and
    the same for the neighborhood hourly average.  Returns one dict per
    qualifying station; an empty list means no station qualifies.
    """
    if radius_km <= 0:
        raise ValueError("radius_km must be > 0")
    D = pairwise_distances(series.epa.xy, series.airbox.xy)
    epa_vals = np.array([p.epa_values for p in series.panels])
    epa_pres = np.array([p.epa_present for p in series.panels])
    air_vals = np.array([p.airbox_values for p in series.panels])
    air_pres = np.array([p.airbox_present for p in series.panels])

    def line_stats(x, y):
        if x.size < 3 or np.var(x) == 0 or np.var(y) == 0:
            return None
        r2 = float(np.corrcoef(x, y)[0, 1] ** 2)
        slope = float(np.cov(x, y, ddof=1)[0, 1] / np.var(x, ddof=1))
        intercept = float(y.mean() - slope * x.mean())
        return {"r2": r2, "slope": slope, "intercept": intercept, "n_hours": int(x.size)}

    report = []
    for j, sid in enumerate(series.epa.ids):
        nbr = np.flatnonzero(D[j] <= radius_km)
        if nbr.size < min_neighbors:
            continue
        nearest = nbr[np.argmin(D[j, nbr])]
        row = {"station": sid, "n_neighbors": int(nbr.size),
               "nearest": series.airbox.ids[nearest],
               "nearest_km": float(D[j, nearest])}

        ok = epa_pres[:, j] & air_pres[:, nearest]
        stats = line_stats(epa_vals[ok, j], air_vals[ok, nearest])
        row["nearest_stats"] = stats

        nb_present = air_pres[:, nbr]
        nb_mean = np.full(len(series.panels), np.nan)
        any_nb = nb_present.any(axis=1)
        vals = np.where(nb_present, air_vals[:, nbr], 0.0)
        nb_mean[any_nb] = vals[any_nb].sum(axis=1) / nb_present[any_nb].sum(axis=1)
        ok2 = epa_pres[:, j] & any_nb
        row["avg_stats"] = line_stats(epa_vals[ok2, j], nb_mean[ok2])
        report.append(row)
    return report
