"""Spatial predictors and their variances.

Builds the kriging-type predictors of the hidden sensor-scale field and of
the calibrated reference-scale field, from sensor data alone or fused with
reference data, plus standardized residual diagnostics.  Each hour's
observation covariance is factorized once and reused across all targets;
target-dependent contractions use fixed-order einsum so a prediction at a
given target is bit-identical no matter how many targets share the call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from . import basis as basis_mod
from .core import HourlyPanel, pairwise_distances
from .fieldfit import HourlyParams
from .noise_model import NoiseModel, predict_site_variance

RIDGE_REL = 1e-6      # EPA-block ridge when the reference noise is zero
JITTER_REL = 1e-8     # one-shot retry jitter on factorization failure
VAR_CLAMP_TOL = 1e-8  # variances >= -tol*scale are clamped to 0


@dataclass(frozen=True)
class PredictionSurface:
    xy: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    hour: int
    method: str
    n_clamped: int = 0
    ridge_applied: bool = False


def _dot_rows(C, w):
    """Row-wise C @ w with batch-size-independent rounding."""
    return np.einsum("ij,j->i", C, w, optimize=False)


def _quad_rows(C, G):
    """q_j = C[j] @ G @ C[j] per row, batch-size independent."""
    T = np.einsum("ij,jk->ik", C, G, optimize=False)
    return np.einsum("ij,ij->i", T, C, optimize=False)


def _chol_with_retry(S, scale):
    try:
        return sla.cho_factor(S, lower=True, check_finite=False), False
    except sla.LinAlgError:
        S2 = S.copy()
        S2[np.diag_indices(S.shape[0])] += JITTER_REL * scale
        return sla.cho_factor(S2, lower=True, check_finite=False), True


def _clamp_variance(var, scale):
    bad = var < -VAR_CLAMP_TOL * max(scale, 1.0)
    if np.any(bad):
        raise FloatingPointError(
            f"{int(bad.sum())} kriging variances below -{VAR_CLAMP_TOL} * scale; "
            "covariance system is inconsistent")
    n_clamped = int((var < 0).sum())
    return np.maximum(var, 0.0), n_clamped


class HourPredictor:
    """Shared machinery for one hour: trend, residual weights, factorization.

    Covariates at prediction targets must be supplied by the caller whenever
    the hour was fitted with covariates (beta nonempty).
    """

    def __init__(self, params: HourlyParams, panel: HourlyPanel, basis,
                 airbox_xy, noise: NoiseModel, covariates=None):
        if params.t != panel.t:
            raise ValueError(f"params hour {params.t} != panel hour {panel.t}")
        if not np.array_equal(params.present, panel.airbox_present):
            raise ValueError(f"hour {panel.t}: params fitted on a different present mask")
        if len(params.beta) and covariates is None:
            raise ValueError("hour fitted with covariates; covariate matrix required")
        self.params = params
        self.panel = panel
        self.basis = basis
        self.noise = noise
        present = panel.airbox_present
        self.xy = np.asarray(airbox_xy, dtype=float)[present]
        self.z = panel.airbox_values[present]
        self.n = len(self.z)
        phi = basis_mod.evaluate(basis, self.xy)
        trend = phi @ params.alpha
        if len(params.beta):
            trend = trend + np.asarray(covariates, dtype=float)[present] @ params.beta
        self.trend = trend
        self.resid = self.z - trend
        self.eps_var = predict_site_variance(noise, np.maximum(self.z, 0.0))

        cov = params.cov
        D = pairwise_distances(self.xy, self.xy)
        S = cov.v2 * np.exp(-D / cov.lam)
        S[np.diag_indices(self.n)] += self.eps_var
        self._factor, self.jittered = _chol_with_retry(S, cov.v2)
        self.w = sla.cho_solve(self._factor, self.resid, check_finite=False)
        self._G = None   # (Sigma_eta + Sigma_eps)^{-1}, built on first variance query

    @property
    def G(self):
        if self._G is None:
            self._G = sla.cho_solve(self._factor, np.eye(self.n), check_finite=False)
        return self._G

    def _cross_cov(self, targets_xy):
        cov = self.params.cov
        D = pairwise_distances(targets_xy, self.xy)
        return cov.v2 * np.exp(-D / cov.lam)

    def target_trend(self, targets_xy, target_covariates=None):
        phi = basis_mod.evaluate(self.basis, targets_xy)
        trend = phi @ self.params.alpha
        if len(self.params.beta):
            if target_covariates is None:
                raise ValueError("hour fitted with covariates; target covariates required")
            trend = trend + np.asarray(target_covariates, dtype=float) @ self.params.beta
        return trend

    def hidden_mean(self, targets_xy, target_covariates=None):
        C = self._cross_cov(targets_xy)
        return self.target_trend(targets_xy, target_covariates) + _dot_rows(C, self.w)

    def hidden_var(self, targets_xy):
        C = self._cross_cov(targets_xy)
        return self.params.cov.v2 - _quad_rows(C, self.G)


def eblp_hidden(params, panel, basis, airbox_xy, noise, targets_xy,
                covariates=None, target_covariates=None) -> PredictionSurface:
    """Empirical best linear predictor of the hidden field from sensor data."""
    hp = HourPredictor(params, panel, basis, airbox_xy, noise, covariates)
    targets_xy = np.asarray(targets_xy, dtype=float)
    mean = hp.hidden_mean(targets_xy, target_covariates)
    var, n_clamped = _clamp_variance(hp.hidden_var(targets_xy), params.cov.v2)
    return PredictionSurface(xy=targets_xy, mean=mean, variance=var, hour=params.t,
                             method="eblp", n_clamped=n_clamped)


def predict_airbox_only(params, panel, basis, airbox_xy, noise, field, targets_xy,
                        covariates=None, target_covariates=None) -> PredictionSurface:
    """Calibrated reference-scale predictor from sensor data alone.

    mean = f0(s) + f1(s) * hidden_mean(s);
    variance = f1(s)^2 * (v^2 - c' (Sigma_eta + Sigma_eps)^{-1} c).
    """
    hp = HourPredictor(params, panel, basis, airbox_xy, noise, covariates)
    targets_xy = np.asarray(targets_xy, dtype=float)
    f0, f1 = field.evaluate(targets_xy)
    mean = f0 + f1 * hp.hidden_mean(targets_xy, target_covariates)
    raw = hp.hidden_var(targets_xy)
    var, n_clamped = _clamp_variance(f1 * f1 * raw, params.cov.v2)
    return PredictionSurface(xy=targets_xy, mean=mean, variance=var, hour=params.t,
                             method="airbox_only", n_clamped=n_clamped)


class FusedSystem:
    """Joint reference+sensor kriging system for one hour and one field.

    Data vector order is [reference rows | sensor rows].  With zero
    reference noise a relative ridge keeps the reference block solvable.
    """

    def __init__(self, params: HourlyParams, panel: HourlyPanel, basis,
                 airbox_xy, epa_xy, noise: NoiseModel, field, sigma_xi2=0.0,
                 covariates=None, epa_covariates=None, hour_predictor=None):
        if sigma_xi2 < 0:
            raise ValueError(f"sigma_xi2 must be >= 0, got {sigma_xi2}")
        if hour_predictor is not None:
            if hour_predictor.params is not params:
                raise ValueError("hour_predictor was built from different parameters")
            self.hp = hour_predictor
        else:
            self.hp = HourPredictor(params, panel, basis, airbox_xy, noise, covariates)
        self.field = field
        cov = params.cov
        epa_xy = np.asarray(epa_xy, dtype=float)
        e_present = panel.epa_present
        self.epa_xy = epa_xy[e_present]
        self.z_epa = panel.epa_values[e_present]
        self.m = len(self.z_epa)

        f0_e, f1_e = field.evaluate(self.epa_xy) if self.m else (np.zeros(0), np.zeros(0))
        self.f0_e, self.f1_e = f0_e, f1_e
        xy_all = np.vstack([self.epa_xy, self.hp.xy])
        D = pairwise_distances(xy_all, xy_all)
        S_eta = cov.v2 * np.exp(-D / cov.lam)
        # blockdiag(F1, I) * Sigma_eta * blockdiag(F1, I)
        fscale = np.concatenate([f1_e, np.ones(self.hp.n)])
        A = S_eta * np.outer(fscale, fscale)
        self.ridge_applied = False
        if self.m:
            if sigma_xi2 > 0:
                A[np.diag_indices(self.m)] += sigma_xi2
            else:
                A[np.diag_indices(self.m)] += RIDGE_REL * cov.v2
                self.ridge_applied = True
        A[self.m + np.arange(self.hp.n), self.m + np.arange(self.hp.n)] += self.hp.eps_var
        self._factor, self.jittered = _chol_with_retry(A, cov.v2)

        epa_trend = self.hp.target_trend(self.epa_xy, epa_covariates) if self.m else np.zeros(0)
        self.centered = np.concatenate([
            self.z_epa - f0_e - f1_e * epa_trend,
            self.hp.resid,
        ])
        self.u = sla.cho_solve(self._factor, self.centered, check_finite=False)
        self._Ainv = None

    @property
    def Ainv(self):
        if self._Ainv is None:
            n_all = self.m + self.hp.n
            self._Ainv = sla.cho_solve(self._factor, np.eye(n_all), check_finite=False)
        return self._Ainv

    def cross_cov(self, targets_xy):
        cov = self.hp.params.cov
        C_e = cov.v2 * np.exp(-pairwise_distances(targets_xy, self.epa_xy) / cov.lam) \
            if self.m else np.zeros((len(targets_xy), 0))
        C_a = cov.v2 * np.exp(-pairwise_distances(targets_xy, self.hp.xy) / cov.lam)
        return np.hstack([C_e * self.f1_e[None, :], C_a])

    def predict(self, targets_xy, target_covariates=None):
        targets_xy = np.asarray(targets_xy, dtype=float)
        f0, f1 = self.field.evaluate(targets_xy)
        C = self.cross_cov(targets_xy)
        trend = self.hp.target_trend(targets_xy, target_covariates)
        mean = f0 + f1 * (trend + _dot_rows(C, self.u))
        raw = self.hp.params.cov.v2 - _quad_rows(C, self.Ainv)
        return mean, f1 * f1 * raw


def predict_fused(params, panel, basis, airbox_xy, epa_xy, noise, field,
                  sigma_xi2, targets_xy, covariates=None, epa_covariates=None,
                  target_covariates=None) -> PredictionSurface:
    """Reference-scale predictor fusing both networks' data."""
    sys = FusedSystem(params, panel, basis, airbox_xy, epa_xy, noise, field,
                      sigma_xi2, covariates, epa_covariates)
    targets_xy = np.asarray(targets_xy, dtype=float)
    mean, var_raw = sys.predict(targets_xy, target_covariates)
    var, n_clamped = _clamp_variance(var_raw, params.cov.v2)
    return PredictionSurface(xy=targets_xy, mean=mean, variance=var, hour=params.t,
                             method="fused", n_clamped=n_clamped,
                             ridge_applied=sys.ridge_applied)


@dataclass(frozen=True)
class ResidualDiagnostics:
    r: np.ndarray              # standardized residual per present sensor row
    excluded: np.ndarray       # True where the noise variance is zero
    xy: np.ndarray
    hour: int


def standardized_residuals(params, panel, basis, airbox_xy, epa_xy, noise, field,
                           sigma_xi2=0.0, covariates=None,
                           epa_covariates=None) -> ResidualDiagnostics:
    """Leave-self-in standardized residuals at the present sensor sites.

    r_i = (z_i - yhat_i) / sigma_i where yhat back-transforms the fused
    reference-scale predictor through the calibration and sigma_i^2 is the
    quadratic form of the joint system.  Both reduce to the
    noise-variance-weighted solve: r_i = u_i / sqrt((A^{-1})_{ii}) on the
    sensor block.  Sites with zero noise variance are excluded (0/0).
    """
    sys = FusedSystem(params, panel, basis, airbox_xy, epa_xy, noise, field,
                      sigma_xi2, covariates, epa_covariates)
    f0_s, f1_s = field.evaluate(sys.hp.xy)
    if np.any(f1_s == 0.0):
        bad = np.flatnonzero(f1_s == 0.0)
        raise ZeroDivisionError(
            f"calibration slope is zero at sensor rows {bad.tolist()}; "
            "back-transformed prediction undefined")
    m = sys.m
    diag = np.diag(sys.Ainv)[m:]
    excluded = sys.hp.eps_var <= 0.0
    r = np.full(sys.hp.n, np.nan)
    ok = ~excluded
    r[ok] = sys.u[m:][ok] / np.sqrt(diag[ok])
    return ResidualDiagnostics(r=r, excluded=excluded, xy=sys.hp.xy, hour=params.t)
