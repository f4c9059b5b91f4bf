"""Robust statistical primitives.

MAD and trimmed mean, Huber M-regression via iteratively reweighted least
squares, and a FastMCD estimator of a bivariate covariance.  These back the
per-hour trend fits and the robust covariance-at-distance estimates, where
gross sensor outliers are routine.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy.stats import chi2

# Phi^{-1}(0.75): scales the raw MAD to a consistent Gaussian sd estimate.
MAD_SCALE = 0.6744897501960817


class RankDeficientError(ValueError):
    """Design matrix is rank deficient; offending columns attached."""

    def __init__(self, columns):
        self.columns = tuple(int(c) for c in columns)
        super().__init__(f"design matrix rank deficient; offending columns {self.columns}")


def mad(x) -> float:
    """Median absolute deviation scaled to a Gaussian sd.

    median(|x - median(x)|) / Phi^{-1}(0.75).  Medians use numpy's
    average-of-two-central-values convention for even n.  All-equal input
    gives 0, which is a valid (degenerate) scale.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("mad of empty input")
    med = np.median(x)
    return float(np.median(np.abs(x - med)) / MAD_SCALE)


def trimmed_mean(x, frac) -> float:
    """Mean after dropping the floor(frac*n) smallest and largest values."""
    if not 0.0 <= frac < 0.5:
        raise ValueError(f"trim fraction must be in [0, 0.5), got {frac}")
    x = np.sort(np.asarray(x, dtype=float))
    k = int(np.floor(frac * x.size))
    kept = x[k:x.size - k]
    if kept.size == 0:
        raise ValueError(f"no data left after trimming {k} from each end of {x.size}")
    return float(kept.mean())


@dataclass(frozen=True)
class HuberConfig:
    """Tuning for the Huber IRLS fit.

    c = 1.345 gives 95% efficiency under Gaussian errors.  rescale=True
    re-estimates the MAD scale from the residuals at every iteration;
    rescale=False freezes the scale at the initial residual MAD, which is
    the single-MAD variant of the estimator.
    """

    c: float = 1.345
    max_iter: int = 50
    tol: float = 1e-8
    rescale: bool = True

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError(f"huber c must be > 0, got {self.c}")


@dataclass
class HuberFit:
    coef: np.ndarray
    scale: float
    residuals: np.ndarray
    converged: bool
    n_iter: int
    objective_path: list = field(default_factory=list)


def _huber_objective(resid, scale, c):
    r = np.abs(resid) / scale
    quad = r <= c
    out = np.where(quad, 0.5 * r**2, c * r - 0.5 * c**2)
    return float(out.sum())


def _check_rank(X):
    # QR with column pivoting: pivots beyond the numerical rank name the
    # offending (linearly dependent) columns.
    _, R, piv = sla.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(X.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int((diag > tol).sum())
    if rank < X.shape[1]:
        raise RankDeficientError(sorted(piv[rank:]))


def huber_regress(X, z, cfg: HuberConfig | None = None) -> HuberFit:
    """Huber M-regression of z on X by IRLS.

    Minimizes sum rho(delta_i / sigma) with sigma the MAD of the current
    residuals.  IRLS weights are w_i = min(1, c * sigma / |delta_i|).  Stops
    on relative coefficient change < tol or max_iter; a non-converged run
    returns the best-objective iterate with converged=False.
    """
    cfg = cfg or HuberConfig()
    X = np.asarray(X, dtype=float)
    z = np.asarray(z, dtype=float)
    n, q = X.shape
    if n <= q:
        raise ValueError(f"need n > q, got n={n}, q={q}")
    _check_rank(X)

    coef, *_ = np.linalg.lstsq(X, z, rcond=None)
    resid = z - X @ coef
    scale = mad(resid)
    if scale == 0.0:
        return HuberFit(coef=coef, scale=0.0, residuals=resid, converged=True, n_iter=0)

    best = HuberFit(coef=coef, scale=scale, residuals=resid, converged=False, n_iter=0)
    best_obj = _huber_objective(resid, scale, cfg.c)
    path = [best_obj]
    for it in range(1, cfg.max_iter + 1):
        with np.errstate(divide="ignore"):
            w = np.minimum(1.0, cfg.c * scale / np.abs(resid))
        w[resid == 0.0] = 1.0
        sw = np.sqrt(w)
        new_coef, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        step = np.linalg.norm(new_coef - coef) / max(np.linalg.norm(coef), 1e-300)
        coef = new_coef
        resid = z - X @ coef
        if cfg.rescale:
            new_scale = mad(resid)
            if new_scale == 0.0:
                return HuberFit(coef=coef, scale=0.0, residuals=resid,
                                converged=True, n_iter=it, objective_path=path)
            scale = new_scale
        obj = _huber_objective(resid, scale, cfg.c)
        path.append(obj)
        if obj < best_obj:
            best_obj = obj
            best = HuberFit(coef=coef, scale=scale, residuals=resid,
                            converged=False, n_iter=it)
        if step < cfg.tol:
            return HuberFit(coef=coef, scale=scale, residuals=resid,
                            converged=True, n_iter=it, objective_path=path)
    best.objective_path = path
    return best


@dataclass(frozen=True)
class McdResult:
    cov: np.ndarray        # 2x2 reweighted estimate (raw when h = n or singular)
    location: np.ndarray   # 2-vector
    support: np.ndarray    # sorted indices of the raw h-subset
    singular: bool
    raw_cov: np.ndarray = None  # consistency-rescaled h-subset covariance

    @property
    def tau(self) -> float:
        """Off-diagonal robust covariance entry."""
        return float(self.cov[0, 1])


# truncation level of the one-step reweighting (algorithm default)
REWEIGHT_ALPHA = 0.975


def mcd_consistency_factor(alpha: float, p: int = 2) -> float:
    """Rescaling making a central-alpha-subset covariance Gaussian-unbiased."""
    if alpha >= 1.0:
        return 1.0
    q = chi2.ppf(alpha, df=p)
    return alpha / chi2.cdf(q, df=p + 2)


def _subset_stats(X, idx):
    # idx: (T, h) index rows into X (n, 2)
    sub = X[idx]                       # (T, h, 2)
    mu = sub.mean(axis=1)              # (T, 2)
    d = sub - mu[:, None, :]
    denom = max(idx.shape[1] - 1, 1)
    cov = np.einsum("thi,thj->tij", d, d) / denom
    return mu, cov


def _mahalanobis_batch(X, mu, cov, eps):
    # Squared Mahalanobis distances of all points for every trial.
    a = cov[:, 0, 0][:, None]
    b = cov[:, 0, 1][:, None]
    c = cov[:, 1, 1][:, None]
    det = a * c - b * b
    bad = (det <= eps).ravel()
    if np.any(bad):
        # Degenerate trial covariance: fall back to ridged inverse so the
        # C-step can still rank points; the trial stays in the pool.
        ridge = eps + 1e-12
        a = a + np.where(bad[:, None], ridge, 0.0)
        c = c + np.where(bad[:, None], ridge, 0.0)
        det = a * c - b * b
    d0 = X[:, 0][None, :] - mu[:, 0][:, None]
    d1 = X[:, 1][None, :] - mu[:, 1][:, None]
    return (c * d0 * d0 - 2.0 * b * d0 * d1 + a * d1 * d1) / det


def _dets(cov):
    return cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] ** 2


def _reweight(X, location, cov, eps):
    """One-step reweighting: classical moments of the chi2-central points."""
    d2 = _mahalanobis_batch(X, location[None, :], cov[None, :, :], eps)[0]
    keep = d2 <= chi2.ppf(REWEIGHT_ALPHA, df=2)
    if keep.sum() < 3:
        return location, cov
    sub = X[keep]
    mu = sub.mean(axis=0)
    c = np.cov(sub.T, ddof=1) * mcd_consistency_factor(REWEIGHT_ALPHA)
    return mu, c


def fast_mcd_2d(pairs, h_frac=0.75, n_subsets=500, n_best=10, max_csteps=100,
                det_tol=1e-9, seed=0) -> McdResult:
    """FastMCD covariance of bivariate data.

    Random (p+1)-subsets are improved with two concentration steps each; the
    n_best lowest-determinant candidates are then iterated to determinant
    convergence and the best kept.  The h-subset covariance is rescaled by
    the Gaussian consistency factor, then the algorithm's default one-step
    reweighting (0.975 chi-square truncation) is applied.  The whole
    procedure is vectorized over trials, so results do not depend on any
    thread count.
    """
    X = np.asarray(pairs, dtype=float)
    if X.ndim != 2 or X.shape[1] != 2:
        raise ValueError(f"expected (n,2) pairs, got shape {X.shape}")
    n = X.shape[0]
    if n < 10:
        raise ValueError(f"need at least 10 pairs, got {n}")
    if not 0.5 <= h_frac <= 1.0:
        raise ValueError(f"h_frac must be in [0.5, 1], got {h_frac}")
    h = min(n, max(3, int(np.floor(h_frac * n))))
    scale2 = float(np.var(X[:, 0]) + np.var(X[:, 1]))
    eps = 1e-12 * max(scale2, 1e-30)

    if h == n:
        mu, cov = _subset_stats(X, np.arange(n)[None, :])
        mcd_cov = mcd_consistency_factor(1.0) * cov[0]
        return McdResult(cov=mcd_cov, location=mu[0], support=np.arange(n),
                         singular=bool(_dets(cov)[0] <= eps), raw_cov=mcd_cov)

    rng = np.random.default_rng(seed)
    trials = min(n_subsets, 1 + n * (n - 1) * (n - 2) // 6)
    # distinct random 3-subsets, one per trial
    keys = rng.random((trials, n))
    idx = np.argpartition(keys, 2, axis=1)[:, :3]
    mu, cov = _subset_stats(X, idx)

    def c_step(mu, cov):
        d2 = _mahalanobis_batch(X, mu, cov, eps)
        supp = np.argpartition(d2, h - 1, axis=1)[:, :h]
        return (*_subset_stats(X, supp), supp)

    for _ in range(2):
        mu, cov, supp = c_step(mu, cov)
    dets = _dets(cov)

    keep = np.argsort(dets)[:min(n_best, trials)]
    mu, cov, supp = mu[keep], cov[keep], supp[keep]
    dets = dets[keep]
    active = np.ones(len(keep), dtype=bool)
    for _ in range(max_csteps):
        if not active.any():
            break
        mu_a, cov_a, supp_a = c_step(mu[active], cov[active])
        new_dets = _dets(cov_a)
        old = dets[active]
        done = np.abs(new_dets - old) <= det_tol * np.maximum(old, eps)
        mu[active], cov[active], supp[active] = mu_a, cov_a, supp_a
        dets[active] = new_dets
        idx_active = np.flatnonzero(active)
        active[idx_active[done]] = False

    best = int(np.argmin(dets))
    singular = bool(dets[best] <= eps)
    factor = mcd_consistency_factor(h / n)
    raw_cov = factor * cov[best]
    location = mu[best]
    if singular:
        final_loc, final_cov = location, raw_cov
    else:
        final_loc, final_cov = _reweight(X, location, raw_cov, eps)
    return McdResult(cov=final_cov, location=final_loc,
                     support=np.sort(supp[best]), singular=singular,
                     raw_cov=raw_cov)
