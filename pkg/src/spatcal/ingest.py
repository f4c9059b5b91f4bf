"""Raw sensor file parsing, cleaning, and hourly aggregation.

Raw records are CSV with a header naming device, time, lon, lat, pm25 (any
column order, ISO-8601 timestamps, UTC).  Values outside [0, 1000] ppm are
dropped in cleaning; records in [h:00, h+1:00) belong to hour h; a site is a
(device, rounded-coordinate) pair.  Hourly panels round-trip through CSV
bit-exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .core import HourlyPanel, SiteRegistry, project

PM_MIN = 0.0
PM_MAX = 1000.0
COORD_DECIMALS = 4  # ~11 m; distinct devices at distinct coords stay distinct sites


class EmptyFilterError(ValueError):
    """Hour filtering removed every panel."""


@dataclass(frozen=True)
class RawRecord:
    device: str
    time: datetime
    lon: float
    lat: float
    pm25: float | None


@dataclass(frozen=True)
class PanelSeries:
    """Hour-ordered panels over fixed site registries for both networks."""

    airbox: SiteRegistry
    epa: SiteRegistry
    panels: tuple

    def __post_init__(self):
        hours = [p.t for p in self.panels]
        if any(b <= a for a, b in zip(hours, hours[1:])):
            raise ValueError("panel hours must be strictly increasing")
        for p in self.panels:
            if p.airbox_values.shape[0] != len(self.airbox):
                raise ValueError(f"hour {p.t}: airbox width {p.airbox_values.shape[0]} "
                                 f"!= registry size {len(self.airbox)}")
            if p.epa_values.shape[0] != len(self.epa):
                raise ValueError(f"hour {p.t}: epa width {p.epa_values.shape[0]} "
                                 f"!= registry size {len(self.epa)}")
        object.__setattr__(self, "panels", tuple(self.panels))

    @property
    def hours(self):
        return [p.t for p in self.panels]


def _parse_time(raw: str) -> datetime:
    s = raw.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def parse_records(path) -> list[RawRecord]:
    """Read raw records from a CSV file with named columns."""
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        required = {"device", "time", "lon", "lat", "pm25"}
        missing = required - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            pm_raw = (row["pm25"] or "").strip()
            pm = float(pm_raw) if pm_raw else None
            if pm is not None and not math.isfinite(pm):
                pm = None
            out.append(RawRecord(device=row["device"].strip(),
                                 time=_parse_time(row["time"]),
                                 lon=float(row["lon"]), lat=float(row["lat"]),
                                 pm25=pm))
    return out


def clean(records):
    """Drop records with pm25 outside [0, 1000]; report the removal count.

    The bounds are inclusive: exactly 0 and exactly 1000 are kept.  Records
    with a missing pm25 pass through (they carry location/time information
    and are skipped by aggregation).
    """
    kept = [r for r in records
            if r.pm25 is None or PM_MIN <= r.pm25 <= PM_MAX]
    return kept, len(records) - len(kept)


def _epoch_hour(t: datetime) -> int:
    return int(t.timestamp() // 3600)


def _site_key(r: RawRecord):
    return (r.device, round(r.lon, COORD_DECIMALS), round(r.lat, COORD_DECIMALS))


def _aggregate_network(records, ref_lon, ref_lat, prefix):
    """Mean per (site, hour); returns registry, hour list, value/mask arrays."""
    keys = sorted({_site_key(r) for r in records})
    index = {k: i for i, k in enumerate(keys)}
    hours = sorted({_epoch_hour(r.time) for r in records if r.pm25 is not None})
    hour_index = {h: i for i, h in enumerate(hours)}
    sums = np.zeros((len(hours), len(keys)))
    counts = np.zeros((len(hours), len(keys)), dtype=int)
    for r in records:
        if r.pm25 is None:
            continue
        counts[hour_index[_epoch_hour(r.time)], index[_site_key(r)]] += 1
        sums[hour_index[_epoch_hour(r.time)], index[_site_key(r)]] += r.pm25
    present = counts > 0
    values = np.full(sums.shape, np.nan)
    values[present] = sums[present] / counts[present]

    device_counts = {}
    for device, _, _ in keys:
        device_counts[device] = device_counts.get(device, 0) + 1
    ids, xy = [], []
    for device, lon, lat in keys:
        loc = project(lon, lat, ref_lon, ref_lat)
        # a device moving between rounded coordinates becomes distinct sites
        sid = device if device_counts[device] == 1 else f"{device}@{lon},{lat}"
        ids.append(f"{prefix}{sid}")
        xy.append([loc.x, loc.y])
    registry = SiteRegistry(ids=tuple(ids), xy=np.array(xy).reshape(len(ids), 2))
    return registry, hours, values, present


def aggregate_hourly(airbox_records, epa_records, ref_lon=None, ref_lat=None) -> PanelSeries:
    """Aggregate cleaned records of both networks into hourly panels.

    Sub-hour records are averaged per site per clock hour (duplicates
    averaged, not rejected); hours with no record are missing.  The planar
    projection reference defaults to the pooled coordinate centroid.
    """
    all_records = list(airbox_records) + list(epa_records)
    if not all_records:
        raise ValueError("no records to aggregate")
    if ref_lon is None:
        ref_lon = float(np.mean([r.lon for r in all_records]))
    if ref_lat is None:
        ref_lat = float(np.mean([r.lat for r in all_records]))

    air_reg, air_hours, air_vals, air_pres = _aggregate_network(
        airbox_records, ref_lon, ref_lat, prefix="")
    epa_reg, epa_hours, epa_vals, epa_pres = _aggregate_network(
        epa_records, ref_lon, ref_lat, prefix="")

    hours = sorted(set(air_hours) | set(epa_hours))
    air_ix = {h: i for i, h in enumerate(air_hours)}
    epa_ix = {h: i for i, h in enumerate(epa_hours)}
    panels = []
    for h in hours:
        if h in air_ix:
            av, ap = air_vals[air_ix[h]], air_pres[air_ix[h]]
        else:
            av = np.full(len(air_reg), np.nan)
            ap = np.zeros(len(air_reg), dtype=bool)
        if h in epa_ix:
            ev, ep = epa_vals[epa_ix[h]], epa_pres[epa_ix[h]]
        else:
            ev = np.full(len(epa_reg), np.nan)
            ep = np.zeros(len(epa_reg), dtype=bool)
        panels.append(HourlyPanel(t=h, airbox_values=av, airbox_present=ap,
                                  epa_values=ev, epa_present=ep))
    return PanelSeries(airbox=air_reg, epa=epa_reg, panels=tuple(panels))


def filter_hours(series: PanelSeries, min_airbox: int, min_epa: int) -> PanelSeries:
    """Keep hours with enough present values in both networks."""
    kept = [p for p in series.panels
            if p.n_airbox >= min_airbox and p.n_epa >= min_epa]
    if not kept:
        raise EmptyFilterError(
            f"no hour has >= {min_airbox} airbox and >= {min_epa} reference values")
    return replace(series, panels=tuple(kept))


# ---------------------------------------------------------------------------
# CSV serialization (bit-exact round trip: floats written with repr)

def _fmt(v: float) -> str:
    return repr(float(v))


def write_sites_csv(path, registry: SiteRegistry):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["id", "x", "y"])
        for sid, (x, y) in zip(registry.ids, registry.xy):
            w.writerow([sid, _fmt(x), _fmt(y)])


def read_sites_csv(path) -> SiteRegistry:
    ids, xy = [], []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            ids.append(row["id"])
            xy.append([float(row["x"]), float(row["y"])])
    return SiteRegistry(ids=tuple(ids), xy=np.array(xy).reshape(len(ids), 2))


def write_panel_csv(path, registry: SiteRegistry, panels, network: str):
    """One network's panel table: rows = hours, columns = sites, blank = missing."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["hour"] + list(registry.ids))
        for p in panels:
            vals = getattr(p, f"{network}_values")
            pres = getattr(p, f"{network}_present")
            w.writerow([p.t] + [_fmt(v) if ok else "" for v, ok in zip(vals, pres)])


def _read_panel_csv(path, registry: SiteRegistry):
    hours, values, present = [], [], []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        if tuple(header[1:]) != registry.ids:
            raise ValueError(f"{path}: column ids do not match site registry")
        for row in reader:
            hours.append(int(row[0]))
            vals = np.array([float(c) if c != "" else np.nan for c in row[1:]])
            values.append(vals)
            present.append(np.array([c != "" for c in row[1:]]))
    return hours, values, present


def save_panel_series(out_dir, series: PanelSeries):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_sites_csv(out / "airbox_sites.csv", series.airbox)
    write_sites_csv(out / "epa_sites.csv", series.epa)
    write_panel_csv(out / "airbox_panel.csv", series.airbox, series.panels, "airbox")
    write_panel_csv(out / "epa_panel.csv", series.epa, series.panels, "epa")


def load_panel_series(in_dir) -> PanelSeries:
    d = Path(in_dir)
    air_reg = read_sites_csv(d / "airbox_sites.csv")
    epa_reg = read_sites_csv(d / "epa_sites.csv")
    ah, av, ap = _read_panel_csv(d / "airbox_panel.csv", air_reg)
    eh, ev, ep = _read_panel_csv(d / "epa_panel.csv", epa_reg)
    if ah != eh:
        raise ValueError("airbox and reference panel hour axes differ")
    panels = [HourlyPanel(t=h, airbox_values=a, airbox_present=pa,
                          epa_values=e, epa_present=pe)
              for h, a, pa, e, pe in zip(ah, av, ap, ev, ep)]
    return PanelSeries(airbox=air_reg, epa=epa_reg, panels=tuple(panels))
