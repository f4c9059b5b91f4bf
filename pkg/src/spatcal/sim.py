"""Synthetic two-network data with known ground truth.

Draws the hidden field from the full generative model: per hour a smooth
trend plus an exponential-covariance Gaussian process, sensor observations
with level-dependent noise and optional gross outliers, and reference
observations through the spatially varying calibration pair (f0, f1).  Every
latent quantity is retained so estimators can be checked against truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .core import HourlyPanel, SiteRegistry, pairwise_distances
from .ingest import PanelSeries
from .noise_model import ColocatedSeries, NoiseModel, variance_at
from .spatial_cov import ExpCov, exp_cov


@dataclass(frozen=True)
class FieldSpec:
    """Closed-form smooth field: linear ramp plus one Gaussian bump.

    value(s) = const + gx*(x/ext_x - 1/2) + gy*(y/ext_y - 1/2)
             + bump_amp * exp(-((x,y)-(bump_x,bump_y))^2 / (2 bump_w^2))
    with x, y in km and the gradients expressed per full domain extent.
    """

    const: float
    gx: float = 0.0
    gy: float = 0.0
    bump_amp: float = 0.0
    bump_x: float = 0.0
    bump_y: float = 0.0
    bump_w: float = 30.0
    extent: tuple = (100.0, 160.0)

    def __call__(self, xy):
        xy = np.asarray(xy, dtype=float)
        x, y = xy[..., 0], xy[..., 1]
        out = (self.const
               + self.gx * (x / self.extent[0] - 0.5)
               + self.gy * (y / self.extent[1] - 0.5))
        if self.bump_amp != 0.0:
            d2 = (x - self.bump_x) ** 2 + (y - self.bump_y) ** 2
            out = out + self.bump_amp * np.exp(-d2 / (2.0 * self.bump_w**2))
        return out


def constant_field(c: float) -> FieldSpec:
    return FieldSpec(const=c)


@dataclass(frozen=True)
class SimConfig:
    n_airbox: int = 400
    m_epa: int = 30
    n_hours: int = 200
    extent: tuple = (100.0, 160.0)
    # hourly mean level mu_t ~ U(level_range); spatial pattern amplitude
    # scaled per hour by A_t ~ U(pattern_scale)
    level_range: tuple = (8.0, 28.0)
    pattern: FieldSpec | None = None
    pattern_scale: tuple = (0.6, 1.4)
    # "smooth": trend = mu_t + A_t * pattern(s).  "basis": trend = basis
    # functions built from the sensor sites with per-hour coefficients
    # (exactly representable by a matching fit), coefficient sd trend_alpha_sd.
    trend_mode: str = "smooth"
    trend_basis_k: int = 25
    trend_basis_seed: int = 0
    trend_alpha_sd: float = 1.5
    # per-hour covariance truth; scalars fix the value, pairs draw uniformly
    v2: object = (1.5, 3.0)
    lam: object = (8.0, 16.0)
    noise: NoiseModel = NoiseModel(a0=0.25, a1=0.05, a2=0.45, a3=12.0)
    f0: FieldSpec = dc_field(default_factory=lambda: constant_field(0.0))
    f1: FieldSpec = dc_field(default_factory=lambda: constant_field(1.0))
    sigma_xi2: float = 0.0
    outlier_frac: float = 0.0
    outlier_mag: float = 100.0
    missing_frac_airbox: float = 0.0
    missing_frac_epa: float = 0.0
    seed: int = 0
    max_dense_sites: int = 4000

    def __post_init__(self):
        if min(self.n_airbox, self.m_epa, self.n_hours) < 1:
            raise ValueError("n_airbox, m_epa, n_hours must all be >= 1")
        if not 0.0 <= self.outlier_frac < 0.5:
            raise ValueError(f"outlier_frac must be in [0, 0.5), got {self.outlier_frac}")
        if self.sigma_xi2 < 0:
            raise ValueError("sigma_xi2 must be >= 0")


@dataclass(frozen=True)
class HourTruth:
    mu: float
    amp: float
    cov: ExpCov
    trend_all: np.ndarray   # trend at [epa | airbox] sites
    eta_all: np.ndarray     # GP draw at [epa | airbox] sites
    y_airbox: np.ndarray
    y_epa: np.ndarray
    eps: np.ndarray
    xi: np.ndarray
    outlier_shift: np.ndarray
    airbox_present: np.ndarray
    epa_present: np.ndarray


@dataclass(frozen=True)
class SimTruth:
    config: SimConfig
    f0_at_epa: np.ndarray
    f1_at_epa: np.ndarray
    hours: tuple


def _draw(rng, spec):
    if isinstance(spec, (tuple, list)):
        lo, hi = spec
        return float(rng.uniform(lo, hi))
    return float(spec)


def _default_pattern(extent):
    return FieldSpec(const=0.0, gx=2.5, gy=4.0, bump_amp=3.0,
                     bump_x=0.35 * extent[0], bump_y=0.62 * extent[1],
                     bump_w=0.3 * min(extent), extent=extent)


def simulate(cfg: SimConfig):
    """Generate a PanelSeries plus the full latent truth record."""
    n, m, T = cfg.n_airbox, cfg.m_epa, cfg.n_hours
    if n + m > cfg.max_dense_sites:
        raise ValueError(
            f"{n + m} sites exceeds the dense-factorization budget "
            f"({cfg.max_dense_sites}); reduce site counts or raise max_dense_sites")
    root = np.random.SeedSequence(cfg.seed)
    site_rng = np.random.default_rng(root.spawn(1)[0])
    ex, ey = cfg.extent
    air_xy = np.column_stack([site_rng.uniform(0, ex, n), site_rng.uniform(0, ey, n)])
    epa_xy = np.column_stack([site_rng.uniform(0, ex, m), site_rng.uniform(0, ey, m)])
    airbox = SiteRegistry(ids=tuple(f"ab{i:04d}" for i in range(n)), xy=air_xy)
    epa = SiteRegistry(ids=tuple(f"ref{j:03d}" for j in range(m)), xy=epa_xy)

    all_xy = np.vstack([epa_xy, air_xy])     # epa first, airbox second
    D_all = pairwise_distances(all_xy, all_xy)
    pattern = cfg.pattern or _default_pattern(cfg.extent)
    pat_all = pattern(all_xy)
    if cfg.trend_mode == "basis":
        from . import basis as basis_mod
        truth_basis = basis_mod.build_basis(air_xy, cfg.trend_basis_k,
                                            seed=cfg.trend_basis_seed)
        phi_all = basis_mod.evaluate(truth_basis, all_xy)
    elif cfg.trend_mode != "smooth":
        raise ValueError(f"unknown trend_mode {cfg.trend_mode!r}")
    f0_epa = cfg.f0(epa_xy)
    f1_epa = cfg.f1(epa_xy)

    hour_seeds = root.spawn(T)
    panels, hour_truths = [], []
    for t in range(T):
        rng = np.random.default_rng(hour_seeds[t])
        mu = _draw(rng, cfg.level_range)
        amp = _draw(rng, cfg.pattern_scale)
        cov = ExpCov(v2=_draw(rng, cfg.v2), lam=_draw(rng, cfg.lam))

        S = exp_cov(cov, D_all)
        S[np.diag_indices(n + m)] += 1e-10 * cov.v2
        L = np.linalg.cholesky(S)
        eta = L @ rng.standard_normal(n + m)
        if cfg.trend_mode == "basis":
            alpha = np.concatenate([[mu], amp * cfg.trend_alpha_sd
                                    * rng.standard_normal(phi_all.shape[1] - 1)])
            trend = phi_all @ alpha
        else:
            trend = mu + amp * pat_all
        y_all = trend + eta
        y_epa_t, y_air_t = y_all[:m], y_all[m:]

        sd = np.sqrt(variance_at(cfg.noise, np.maximum(y_air_t, 0.0)))
        eps = sd * rng.standard_normal(n)
        z_air = y_air_t + eps
        shift = np.zeros(n)
        if cfg.outlier_frac > 0:
            k = int(round(cfg.outlier_frac * n))
            if k > 0:
                hit = rng.choice(n, size=k, replace=False)
                shift[hit] = cfg.outlier_mag * rng.uniform(0.5, 1.5, size=k)
                z_air = z_air + shift

        xi = (np.sqrt(cfg.sigma_xi2) * rng.standard_normal(m)
              if cfg.sigma_xi2 > 0 else np.zeros(m))
        z_epa = f0_epa + f1_epa * y_epa_t + xi

        ab_present = rng.random(n) >= cfg.missing_frac_airbox
        ep_present = rng.random(m) >= cfg.missing_frac_epa
        av = np.where(ab_present, z_air, np.nan)
        ev = np.where(ep_present, z_epa, np.nan)
        panels.append(HourlyPanel(t=t, airbox_values=av, airbox_present=ab_present,
                                  epa_values=ev, epa_present=ep_present))
        hour_truths.append(HourTruth(mu=mu, amp=amp, cov=cov, trend_all=trend,
                                     eta_all=eta, y_airbox=y_air_t, y_epa=y_epa_t,
                                     eps=eps, xi=xi, outlier_shift=shift,
                                     airbox_present=ab_present, epa_present=ep_present))

    series = PanelSeries(airbox=airbox, epa=epa, panels=tuple(panels))
    truth = SimTruth(config=cfg, f0_at_epa=f0_epa, f1_at_epa=f1_epa,
                     hours=tuple(hour_truths))
    return series, truth


def replay_panel(truth: SimTruth, series: PanelSeries, t_index: int) -> HourlyPanel:
    """Reassemble hour t_index's panel from the latent record alone."""
    cfg = truth.config
    ht = truth.hours[t_index]
    z_air = ht.y_airbox + ht.eps + ht.outlier_shift
    z_epa = truth.f0_at_epa + truth.f1_at_epa * ht.y_epa + ht.xi
    return HourlyPanel(t=series.panels[t_index].t,
                       airbox_values=np.where(ht.airbox_present, z_air, np.nan),
                       airbox_present=ht.airbox_present,
                       epa_values=np.where(ht.epa_present, z_epa, np.nan),
                       epa_present=ht.epa_present)


@dataclass(frozen=True)
class ColocatedConfig:
    n_sensors: int = 12
    n_hours: int = 5000
    level_range: tuple = (0.5, 30.0)
    noise: NoiseModel = NoiseModel(a0=0.25, a1=0.05, a2=0.45, a3=12.0)
    n_dead: int = 0
    n_decorrelated: int = 0
    missing_frac: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_sensors < 2:
            raise ValueError("need at least 2 sensors")


def _field_from_dict(doc, extent) -> FieldSpec:
    if isinstance(doc, (int, float)):
        return constant_field(float(doc))
    return FieldSpec(extent=tuple(extent), **doc)


def sim_config_from_dict(doc: dict) -> SimConfig:
    """Build a SimConfig from a plain JSON-style dict.

    Numeric fields pass through; "noise" is the 4-parameter dict, and "f0",
    "f1", "pattern" are FieldSpec dicts (or bare numbers for constants).
    """
    doc = dict(doc)
    doc.pop("colocated", None)
    extent = tuple(doc.get("extent", SimConfig.extent))
    kwargs = {}
    for key, val in doc.items():
        if key == "noise":
            kwargs[key] = NoiseModel(**val)
        elif key in ("f0", "f1", "pattern"):
            kwargs[key] = _field_from_dict(val, extent) if val is not None else None
        elif key in ("extent", "level_range", "pattern_scale"):
            kwargs[key] = tuple(val)
        elif key in ("v2", "lam"):
            kwargs[key] = tuple(val) if isinstance(val, (list, tuple)) else float(val)
        else:
            kwargs[key] = val
    return SimConfig(**kwargs)


def colocated_config_from_dict(doc: dict, default_noise: NoiseModel) -> ColocatedConfig:
    doc = dict(doc)
    if "noise" in doc:
        doc["noise"] = NoiseModel(**doc["noise"])
    else:
        doc["noise"] = default_noise
    if "level_range" in doc:
        doc["level_range"] = tuple(doc["level_range"])
    return ColocatedConfig(**doc)


def colocated_sim(cfg: ColocatedConfig) -> ColocatedSeries:
    """Colocated-sensor series: one latent level per hour, independent errors.

    Appends n_dead sensors with no records and n_decorrelated sensors that
    follow their own independent level series (these should be screened out).
    """
    rng = np.random.default_rng(cfg.seed)
    T, J = cfg.n_hours, cfg.n_sensors
    y = rng.uniform(*cfg.level_range, size=T)
    sd = np.sqrt(variance_at(cfg.noise, y))
    vals = y[:, None] + sd[:, None] * rng.standard_normal((T, J))
    cols = [vals]
    ids = [f"s{j:02d}" for j in range(J)]
    for j in range(cfg.n_decorrelated):
        y_own = rng.uniform(*cfg.level_range, size=T)
        own = y_own + np.sqrt(variance_at(cfg.noise, y_own)) * rng.standard_normal(T)
        cols.append(own[:, None])
        ids.append(f"noisy{j:02d}")
    for j in range(cfg.n_dead):
        cols.append(np.full((T, 1), np.nan))
        ids.append(f"dead{j:02d}")
    values = np.concatenate(cols, axis=1)
    if cfg.missing_frac > 0:
        gone = rng.random(values.shape) < cfg.missing_frac
        values = np.where(gone, np.nan, values)
    return ColocatedSeries(hours=np.arange(T), values=values, sensor_ids=tuple(ids))
