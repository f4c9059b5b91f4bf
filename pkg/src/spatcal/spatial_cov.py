"""Isotropic exponential covariance: model, robust estimation, fitting.

The spatial signal is modeled as cov(s, u) = v^2 exp(-||s-u|| / lambda).
Because the sensor noise variance varies site to site, a variogram of raw
residuals is biased; instead the covariance at each distance h is estimated
robustly from residual pairs in a tolerance region around h (FastMCD
off-diagonal), and (v^2, lambda) fitted to those by least squares.  A
Gaussian ML fit with a known heteroscedastic nugget covers the coefficient
field kriging and the reference-only baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy.optimize import minimize
from scipy.spatial.distance import pdist, squareform

from .core import coords, pairwise_distances
from .robust import fast_mcd_2d

DEFAULT_H = np.arange(1, 50) / 2.0   # 0.5, 1.0, ..., 24.5 km
DEFAULT_DELTA = 0.5                  # km; consecutive tolerance regions overlap
LAMBDA_BRACKET = (0.1, 500.0)        # km
V2_FLOOR = 1e-12


@dataclass(frozen=True)
class ExpCov:
    """Exponential covariance parameters: sill v2 (ppm^2), range lam (km)."""

    v2: float
    lam: float

    def __post_init__(self):
        if not (self.v2 > 0 and self.lam > 0):
            raise ValueError(f"require v2 > 0 and lam > 0, got {self}")


def exp_cov(params: ExpCov, D) -> np.ndarray:
    """Covariance matrix v^2 exp(-D / lambda) for a distance matrix D."""
    return params.v2 * np.exp(-np.asarray(D, dtype=float) / params.lam)


@dataclass(frozen=True)
class BinnedCov:
    """Robust covariance estimates tau(h) at binned distances."""

    h: np.ndarray
    tau: np.ndarray
    n_pairs: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        if np.any(np.diff(h) <= 0):
            raise ValueError("bin centers must be strictly increasing")
        for name in ("h", "tau", "n_pairs"):
            v = np.asarray(getattr(self, name))
            v.setflags(write=False)
            object.__setattr__(self, name, v)


def robust_binned_cov(residuals, sites, H=None, delta=DEFAULT_DELTA,
                      min_pairs=30, h_frac=0.75, n_subsets=100,
                      seed=0) -> BinnedCov:
    """MCD covariance of residual pairs per distance bin.

    For each h in H the pairs (delta_i, delta_k) with h-delta < ||s_i-s_k||
    <= h+delta enter a FastMCD fit; its off-diagonal entry is tau_hat(h).
    With the default half-km spacing and delta the regions overlap by half.
    Bins with fewer than min_pairs pairs are dropped; i < k, each unordered
    pair enters once.
    """
    resid = np.asarray(residuals, dtype=float)
    xy = coords(sites)
    if resid.shape[0] != xy.shape[0]:
        raise ValueError(f"{resid.shape[0]} residuals but {xy.shape[0]} sites")
    H = DEFAULT_H if H is None else np.asarray(H, dtype=float)

    d = pdist(xy)
    iu, ku = np.triu_indices(xy.shape[0], k=1)
    hs, taus, counts = [], [], []
    for b, h in enumerate(H):
        in_bin = (d > h - delta) & (d <= h + delta)
        m = int(in_bin.sum())
        if m < min_pairs:
            continue
        pairs = np.column_stack([resid[iu[in_bin]], resid[ku[in_bin]]])
        res = fast_mcd_2d(pairs, h_frac=h_frac, n_subsets=n_subsets,
                          seed=np.random.SeedSequence([seed, b]).generate_state(1)[0])
        hs.append(h)
        taus.append(res.tau)
        counts.append(m)
    if not hs:
        raise ValueError("insufficient spatial sampling: all distance bins dropped")
    return BinnedCov(h=np.array(hs), tau=np.array(taus), n_pairs=np.array(counts))


@dataclass(frozen=True)
class WlsFit:
    cov: ExpCov
    sse: float
    degenerate: bool   # no positive tau_hat; parameters are placeholders
    pinned: bool       # lambda ended on a bracket edge (flat curve etc.)


def _wls_profile(binned: BinnedCov, weights):
    h, tau = binned.h, binned.tau

    def v2_of(lam):
        e = np.exp(-h / lam)
        denom = float(np.sum(weights * e * e))
        return max(0.0, float(np.sum(weights * tau * e)) / denom)

    def sse_of(lam):
        v2 = v2_of(lam)
        r = tau - v2 * np.exp(-h / lam)
        return float(np.sum(weights * r * r))

    return v2_of, sse_of


def fit_expcov_wls(binned: BinnedCov, lam_bracket=LAMBDA_BRACKET,
                   weight_by_pairs=False) -> WlsFit:
    """Least-squares fit of (v^2, lambda) to binned covariances.

    The sill is profiled in closed form, v2(lam) = max(0, sum tau e / sum
    e^2), and lambda found by a grid scan over log lambda refined with
    golden-section inside the best grid bracket.  Sums are unweighted by
    default; weight_by_pairs uses the per-bin pair counts.
    """
    if binned.h.size < 3:
        raise ValueError(f"need >= 3 bins, got {binned.h.size}")
    lo, hi = lam_bracket
    if np.all(binned.tau <= 0):
        return WlsFit(cov=ExpCov(v2=V2_FLOOR, lam=float(np.sqrt(lo * hi))),
                      sse=float(np.sum(binned.tau**2)), degenerate=True, pinned=False)

    w = binned.n_pairs.astype(float) if weight_by_pairs else np.ones_like(binned.h)
    v2_of, sse_of = _wls_profile(binned, w)

    grid = np.exp(np.linspace(np.log(lo), np.log(hi), 80))
    sses = np.array([sse_of(l) for l in grid])
    j = int(np.argmin(sses))
    a = np.log(grid[max(j - 1, 0)])
    b = np.log(grid[min(j + 1, len(grid) - 1)])

    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = sse_of(np.exp(x1)), sse_of(np.exp(x2))
    for _ in range(80):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = sse_of(np.exp(x1))
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = sse_of(np.exp(x2))
    lam = float(np.exp((a + b) / 2))
    v2 = v2_of(lam)
    degenerate = v2 <= V2_FLOOR
    v2 = max(v2, V2_FLOOR)
    pinned = lam <= lo * (1 + 1e-6) or lam >= hi * (1 - 1e-6)
    return WlsFit(cov=ExpCov(v2=v2, lam=lam), sse=sse_of(lam),
                  degenerate=degenerate, pinned=pinned)


@dataclass(frozen=True)
class MlFit:
    cov: ExpCov
    mean: float
    nugget2: float          # estimated scalar nugget (0 when known/fixed)
    loglik: float
    degenerate: bool        # sill collapsed toward zero (pure-noise limit)
    start_optima: tuple = field(default_factory=tuple)


def _nll_factory(z, D, nugget, estimate_mean, estimate_nugget):
    n = z.size
    ones = np.ones(n)

    def nll(params):
        v2, lam = np.exp(params[0]), np.exp(params[1])
        if not (np.isfinite(v2) and np.isfinite(lam)) or lam <= 0:
            return np.inf
        tau2 = np.exp(params[2]) if estimate_nugget else 0.0
        S = v2 * np.exp(-D / lam)
        S[np.diag_indices(n)] += nugget + tau2
        try:
            cf = sla.cho_factor(S, lower=True, check_finite=False)
        except sla.LinAlgError:
            S[np.diag_indices(n)] += 1e-8 * v2
            try:
                cf = sla.cho_factor(S, lower=True, check_finite=False)
            except sla.LinAlgError:
                return np.inf
        logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
        if estimate_mean:
            si_1 = sla.cho_solve(cf, ones, check_finite=False)
            mu = float(z @ si_1) / float(ones @ si_1)
        else:
            mu = 0.0
        r = z - mu
        quad = float(r @ sla.cho_solve(cf, r, check_finite=False))
        return 0.5 * (logdet + quad + n * np.log(2.0 * np.pi))

    def mean_at(params):
        v2, lam = np.exp(params[0]), np.exp(params[1])
        tau2 = np.exp(params[2]) if estimate_nugget else 0.0
        S = v2 * np.exp(-D / lam)
        S[np.diag_indices(n)] += nugget + tau2
        cf = sla.cho_factor(S, lower=True, check_finite=False)
        si_1 = sla.cho_solve(cf, ones, check_finite=False)
        return float(z @ si_1) / float(ones @ si_1) if estimate_mean else 0.0

    return nll, mean_at


def fit_expcov_ml(z, sites, nugget, estimate_mean=True, estimate_nugget=False,
                  lam_bracket=LAMBDA_BRACKET) -> MlFit:
    """Gaussian ML fit of (v^2, lambda) with a known per-site nugget.

    Covariance v^2 R(lambda) + diag(nugget); a constant mean is profiled in
    closed form when estimate_mean.  Nelder-Mead over the log parameters
    from 5 dispersed deterministic starts, best kept.  estimate_nugget adds
    a scalar nugget as a third free parameter (used by the reference-only
    kriging baseline).
    """
    z = np.asarray(z, dtype=float)
    xy = coords(sites)
    n = z.size
    if n < 5:
        raise ValueError(f"need n >= 5, got {n}")
    nugget = np.broadcast_to(np.asarray(nugget, dtype=float), (n,)).copy()
    if np.any(nugget < 0):
        raise ValueError("nugget entries must be >= 0")
    D = pairwise_distances(xy, xy)
    nll, mean_at = _nll_factory(z, D, nugget, estimate_mean, estimate_nugget)

    var_z = max(float(np.var(z)), 1e-10)
    v2_0 = max(var_z - float(np.mean(nugget)), 0.05 * var_z)
    off = D[np.triu_indices(n, k=1)]
    lam_0 = float(np.clip(np.median(off), lam_bracket[0] * 2, lam_bracket[1] / 2))
    start_mults = [(1.0, 1.0), (0.2, 0.25), (5.0, 4.0), (0.2, 4.0), (5.0, 0.25)]
    starts = []
    for mv, ml in start_mults:
        s = [np.log(v2_0 * mv), np.log(lam_0 * ml)]
        if estimate_nugget:
            s.append(np.log(max(0.5 * var_z, 1e-8)))
        starts.append(np.array(s))

    best, best_x, optima = np.inf, None, []
    for x0 in starts:
        res = minimize(nll, x0, method="Nelder-Mead",
                       options={"xatol": 1e-6, "fatol": 1e-8, "maxiter": 2000})
        optima.append((float(res.fun), tuple(np.exp(res.x))))
        if res.fun < best:
            best, best_x = float(res.fun), res.x
    if best_x is None or not np.isfinite(best):
        raise RuntimeError("covariance ML failed: no start produced a finite likelihood")

    v2, lam = float(np.exp(best_x[0])), float(np.exp(best_x[1]))
    nugget2 = float(np.exp(best_x[2])) if estimate_nugget else 0.0
    ref = max(var_z, float(np.mean(nugget)))
    degenerate = v2 < 1e-6 * ref
    return MlFit(cov=ExpCov(v2=max(v2, V2_FLOOR), lam=lam), mean=mean_at(best_x),
                 nugget2=nugget2, loglik=-best, degenerate=degenerate,
                 start_optima=tuple(optima))
