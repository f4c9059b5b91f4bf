"""Piecewise-linear heteroscedastic measurement-error variance.

The sensor error variance grows with the signal level: var = a0 + a1*y +
(a2 - a1)*(y - a3)_+ with all four parameters nonnegative, so the variance
is continuous at the breakpoint a3 and non-decreasing in y.  The parameters
are identified from colocated sensors, whose hourly disagreement is pure
measurement error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .robust import mad, trimmed_mean


@dataclass(frozen=True)
class NoiseModel:
    a0: float
    a1: float
    a2: float
    a3: float

    def __post_init__(self):
        vals = (self.a0, self.a1, self.a2, self.a3)
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise ValueError(f"noise parameters must be finite and >= 0, got {vals}")


def variance_at(model: NoiseModel, y):
    """Error variance at signal level y (scalar or array), y >= 0."""
    y = np.asarray(y, dtype=float)
    out = model.a0 + model.a1 * y + (model.a2 - model.a1) * np.maximum(y - model.a3, 0.0)
    return float(out) if out.ndim == 0 else out


def predict_site_variance(model: NoiseModel, z):
    """Plug an observed sensor value into the fitted variance law.

    The observed value stands in for the latent level in both the linear and
    the hinge term (see NOISE_LITERAL_HINGE for the alternative reading).
    """
    return variance_at(model, z)


def hinge_variance(model: NoiseModel, z, z_ref):
    """Variant with the hinge evaluated at a common reference level z_ref."""
    z = np.asarray(z, dtype=float)
    return model.a0 + model.a1 * z + (model.a2 - model.a1) * max(z_ref - model.a3, 0.0)


@dataclass(frozen=True)
class ColocatedSeries:
    """Hourly observations from several sensors at one shared site."""

    hours: np.ndarray          # (T,) int
    values: np.ndarray         # (T, J) float, NaN = missing
    sensor_ids: tuple

    def __post_init__(self):
        hours = np.asarray(self.hours)
        values = np.asarray(self.values, dtype=float)
        if values.shape != (hours.size, len(self.sensor_ids)):
            raise ValueError(f"values shape {values.shape} inconsistent with "
                             f"{hours.size} hours x {len(self.sensor_ids)} sensors")
        if np.any(np.diff(hours) <= 0):
            raise ValueError("hours must be strictly increasing")
        for name, v in (("hours", hours), ("values", values)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        object.__setattr__(self, "sensor_ids", tuple(self.sensor_ids))

    @property
    def n_sensors(self) -> int:
        return len(self.sensor_ids)


def screen_sensors(series: ColocatedSeries, min_corr=0.85, min_overlap=30):
    """Drop dead and inconsistent sensors.

    A sensor goes if it has no records, or if its sample correlations with
    every other sensor (on >= min_overlap shared hours) are all below
    min_corr.  Returns the screened series and the dropped ids.
    """
    if series.n_sensors < 2:
        raise ValueError("need at least 2 sensors to screen")
    vals = series.values
    present = np.isfinite(vals)
    alive = present.any(axis=0)

    J = series.n_sensors
    best_corr = np.full(J, -np.inf)
    for j in range(J):
        if not alive[j]:
            continue
        for k in range(J):
            if k == j or not alive[k]:
                continue
            both = present[:, j] & present[:, k]
            if both.sum() < min_overlap:
                continue
            a, b = vals[both, j], vals[both, k]
            if a.std() == 0 or b.std() == 0:
                continue
            c = float(np.corrcoef(a, b)[0, 1])
            if c > best_corr[j]:
                best_corr[j] = c
    keep = alive & ~(best_corr < min_corr)
    dropped = tuple(sid for sid, k in zip(series.sensor_ids, keep) if not k)
    if keep.sum() < 2:
        raise ValueError(f"fewer than 2 sensors survive screening (dropped {dropped})")
    out = ColocatedSeries(hours=series.hours, values=vals[:, keep],
                          sensor_ids=tuple(np.array(series.sensor_ids)[keep]))
    return out, dropped


@dataclass(frozen=True)
class NoiseFit:
    model: NoiseModel
    points: np.ndarray        # (n_hours, 2): robust level, robust variance
    sse: float
    single_line: bool         # hinge unidentified; a2 tied to a1


def _nnls_at(a3, level, sig2):
    # Reparametrized so the constraint set is exactly [0, inf)^3:
    # var = a0 + a1*min(z, a3) + a2*(z - a3)_+  (identical model).
    X = np.column_stack([np.ones_like(level),
                         np.minimum(level, a3),
                         np.maximum(level - a3, 0.0)])
    coef, rnorm = nnls(X, sig2)
    return coef, rnorm * rnorm


def estimate_noise_model(series: ColocatedSeries, trim=0.10, min_hours=50,
                         n_grid=91) -> NoiseFit:
    """Fit the variance law from a screened colocated series.

    Per usable hour (>= 2 sensors reporting) the level is the trimmed mean
    and the error sd the MAD across sensors.  The breakpoint a3 is scanned
    over an n_grid quantile grid of the levels and refined by ternary search
    between the neighboring grid points; (a0, a1, a2) solve a nonnegative
    least-squares problem at each candidate.
    """
    vals = series.values
    present = np.isfinite(vals)
    usable = present.sum(axis=1) >= 2
    if usable.sum() < min_hours:
        raise ValueError(f"only {int(usable.sum())} usable hours, need >= {min_hours}")

    level = np.empty(int(usable.sum()))
    sig2 = np.empty_like(level)
    for r, t in enumerate(np.flatnonzero(usable)):
        w = vals[t, present[t]]
        level[r] = trimmed_mean(w, trim)
        sig2[r] = mad(w) ** 2
    points = np.column_stack([level, sig2])

    qs = np.quantile(level, np.linspace(0.05, 0.95, n_grid))
    candidates = np.unique(np.maximum(qs, 0.0))
    fits = [_nnls_at(a3, level, sig2) for a3 in candidates]
    sses = np.array([f[1] for f in fits])
    j = int(np.argmin(sses))

    lo = candidates[max(j - 1, 0)]
    hi = candidates[min(j + 1, len(candidates) - 1)]
    best_a3, (best_coef, best_sse) = candidates[j], fits[j]
    for _ in range(60):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        c1, s1 = _nnls_at(m1, level, sig2)
        c2, s2 = _nnls_at(m2, level, sig2)
        if s1 <= s2:
            hi = m2
            if s1 < best_sse:
                best_a3, best_coef, best_sse = m1, c1, s1
        else:
            lo = m1
            if s2 < best_sse:
                best_a3, best_coef, best_sse = m2, c2, s2

    a0, a1, a2 = (float(c) for c in best_coef)
    single_line = int((level > best_a3).sum()) < 2
    if single_line:
        a2 = a1  # hinge column (near-)zero: slope change unidentified
    model = NoiseModel(a0=a0, a1=a1, a2=a2, a3=float(best_a3))
    return NoiseFit(model=model, points=points, sse=float(best_sse),
                    single_line=single_line)


def save_noise_model(path, model: NoiseModel):
    with open(path, "w", encoding="utf-8") as f:
        for name in ("a0", "a1", "a2", "a3"):
            f.write(f"{name} = {getattr(model, name)!r}\n")


def load_noise_model(path) -> NoiseModel:
    vals = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, raw = line.partition("=")
            vals[key.strip()] = float(raw.strip())
    return NoiseModel(**{k: vals[k] for k in ("a0", "a1", "a2", "a3")})


def write_colocated_csv(path, series: ColocatedSeries):
    import csv

    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["hour"] + list(series.sensor_ids))
        for t, row in zip(series.hours, series.values):
            w.writerow([int(t)] + [repr(float(v)) if np.isfinite(v) else ""
                                   for v in row])


def read_colocated_csv(path) -> ColocatedSeries:
    import csv

    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        ids = tuple(header[1:])
        hours, rows = [], []
        for row in reader:
            hours.append(int(row[0]))
            rows.append([float(c) if c != "" else np.nan for c in row[1:]])
    return ColocatedSeries(hours=np.array(hours), values=np.array(rows),
                           sensor_ids=ids)
