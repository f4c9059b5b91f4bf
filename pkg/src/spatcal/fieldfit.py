"""Per-hour estimation of trend coefficients and spatial covariance.

Each hour is fitted independently: a Huber regression of the observed
sensor values on the basis (plus optional covariates), then a robust binned
covariance of the Huber residuals fitted to the exponential model.  Rows
with missing observations are dropped for that hour.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import basis as basis_mod
from .core import HourlyPanel
from .robust import HuberConfig, huber_regress
from .spatial_cov import (DEFAULT_DELTA, DEFAULT_H, LAMBDA_BRACKET, ExpCov,
                          fit_expcov_wls, robust_binned_cov)


@dataclass(frozen=True)
class FitConfig:
    huber: HuberConfig = field(default_factory=HuberConfig)
    H: np.ndarray = field(default_factory=lambda: DEFAULT_H)
    delta: float = DEFAULT_DELTA
    min_pairs: int = 30
    mcd_h_frac: float = 0.75
    mcd_subsets: int = 100
    lam_bracket: tuple = LAMBDA_BRACKET
    weight_by_pairs: bool = False
    seed: int = 0


@dataclass(frozen=True)
class HourlyParams:
    """Fitted parameters for one hour, residuals aligned to present rows."""

    t: int
    alpha: np.ndarray
    beta: np.ndarray
    cov: ExpCov
    residuals: np.ndarray
    present: np.ndarray
    huber_scale: float
    huber_converged: bool
    cov_degenerate: bool
    cov_pinned: bool


class HourFitError(RuntimeError):
    def __init__(self, t, cause):
        self.t = t
        self.cause = cause
        super().__init__(f"hour {t}: {cause}")


def _fit_rows(t, z, xy, phi, X, cfg: FitConfig) -> HourlyParams:
    design = phi if X is None else np.column_stack([phi, X])
    K = phi.shape[1]
    fit = huber_regress(design, z, cfg.huber)
    alpha = fit.coef[:K]
    beta = fit.coef[K:]
    if fit.scale == 0.0:
        # Noise-free data lie exactly on the trend; there is no residual
        # field to estimate a covariance from.
        cov = ExpCov(v2=1e-12, lam=float(np.sqrt(cfg.lam_bracket[0] * cfg.lam_bracket[1])))
        return HourlyParams(t=t, alpha=alpha, beta=beta, cov=cov,
                            residuals=fit.residuals, present=np.ones(len(z), dtype=bool),
                            huber_scale=0.0, huber_converged=fit.converged,
                            cov_degenerate=True, cov_pinned=False)
    binned = robust_binned_cov(fit.residuals, xy, H=cfg.H, delta=cfg.delta,
                               min_pairs=cfg.min_pairs, h_frac=cfg.mcd_h_frac,
                               n_subsets=cfg.mcd_subsets,
                               seed=np.random.SeedSequence([cfg.seed, t]).generate_state(1)[0])
    wls = fit_expcov_wls(binned, lam_bracket=cfg.lam_bracket,
                         weight_by_pairs=cfg.weight_by_pairs)
    return HourlyParams(t=t, alpha=alpha, beta=beta, cov=wls.cov,
                        residuals=fit.residuals, present=np.ones(len(z), dtype=bool),
                        huber_scale=fit.scale, huber_converged=fit.converged,
                        cov_degenerate=wls.degenerate, cov_pinned=wls.pinned)


def fit_hour(panel: HourlyPanel, basis, airbox_xy, covariates=None,
             cfg: FitConfig | None = None) -> HourlyParams:
    """Fit one hour's parameters from its present sensor rows.

    covariates, when given, is the full (n, p) covariate matrix for this
    hour; present-row selection is applied to it as well.
    """
    cfg = cfg or FitConfig()
    phi_full = basis_mod.evaluate(basis, airbox_xy)
    return _fit_hour_shared(panel, phi_full, np.asarray(airbox_xy, dtype=float),
                            covariates, cfg)


def _fit_hour_shared(panel, phi_full, airbox_xy, covariates, cfg) -> HourlyParams:
    present = panel.airbox_present
    z = panel.airbox_values[present]
    xy = airbox_xy[present]
    phi = phi_full[present]
    X = None if covariates is None else np.asarray(covariates, dtype=float)[present]
    try:
        fitted = _fit_rows(panel.t, z, xy, phi, X, cfg)
    except Exception as exc:
        raise HourFitError(panel.t, exc) from exc
    return HourlyParams(t=fitted.t, alpha=fitted.alpha, beta=fitted.beta,
                        cov=fitted.cov, residuals=fitted.residuals,
                        present=present, huber_scale=fitted.huber_scale,
                        huber_converged=fitted.huber_converged,
                        cov_degenerate=fitted.cov_degenerate,
                        cov_pinned=fitted.cov_pinned)


@dataclass(frozen=True)
class SeriesFit:
    params: tuple              # HourlyParams for hours that succeeded
    failures: tuple            # HourFitError per failed hour


def fit_series(series, basis, cfg: FitConfig | None = None,
               covariates_by_hour=None, n_threads=1) -> SeriesFit:
    """Independent per-hour fits over a panel series.

    Failed hours are recorded, not fatal, unless more than half fail.
    Results are collected in hour order, so output is identical for any
    thread count.
    """
    cfg = cfg or FitConfig()
    phi_full = basis_mod.evaluate(basis, series.airbox.xy)
    xy = series.airbox.xy

    def one(i):
        panel = series.panels[i]
        X = None if covariates_by_hour is None else covariates_by_hour[i]
        try:
            return _fit_hour_shared(panel, phi_full, xy, X, cfg), None
        except HourFitError as err:
            return None, err

    n = len(series.panels)
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(one, range(n)))
    else:
        results = [one(i) for i in range(n)]

    params = tuple(r for r, _ in results if r is not None)
    failures = tuple(e for _, e in results if e is not None)
    if n and len(failures) > 0.5 * n:
        summary = "; ".join(str(e) for e in failures[:5])
        raise RuntimeError(f"{len(failures)}/{n} hours failed to fit: {summary} ...")
    return SeriesFit(params=params, failures=failures)
