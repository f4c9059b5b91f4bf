"""Multi-resolution radial basis for the large-scale trend.

A constant function plus levels of compactly supported Wendland bumps whose
centers come from k-means over the control points and whose support radii
shrink geometrically with level.  Any multi-resolution family with a
constant term and decreasing bandwidths fills this role; the construction is
isolated behind BasisSet so it can be swapped.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .core import coords

# Support radius = SUPPORT_FACTOR * median nearest-center spacing at each
# level; bare spacing would leave the bumps almost disjoint.
SUPPORT_FACTOR = 2.5


def level_sizes(K: int) -> list[int]:
    """Default level schedule 1, 4, 20, 4*previous, ... summing to K.

    The last level is truncated (or the remainder appended) so the sizes sum
    to K exactly; e.g. K=25 -> [1, 4, 20], K=10 -> [1, 4, 5].
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    sizes, nxt, total = [], 1, 0
    while total < K:
        take = min(nxt, K - total)
        sizes.append(take)
        total += take
        nxt = 4 if nxt == 1 else (20 if nxt == 4 else 4 * nxt)
    return sizes


def _kmeans(xy, k, rng, n_iter=100):
    """Plain Lloyd's k-means with k-means++ seeding; deterministic given rng."""
    n = xy.shape[0]
    centers = np.empty((k, 2))
    centers[0] = xy[rng.integers(n)]
    d2 = np.sum((xy - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        tot = d2.sum()
        if tot <= 0:
            centers[j] = xy[rng.integers(n)]
        else:
            centers[j] = xy[rng.choice(n, p=d2 / tot)]
        d2 = np.minimum(d2, np.sum((xy - centers[j]) ** 2, axis=1))
    for _ in range(n_iter):
        dist = cdist(xy, centers)
        labels = np.argmin(dist, axis=1)
        new_centers = centers.copy()
        for j in range(k):
            members = xy[labels == j]
            if len(members):
                new_centers[j] = members.mean(axis=0)
            else:
                # re-seed an empty cluster at the point farthest from its center
                far = int(np.argmax(dist[np.arange(n), labels]))
                new_centers[j] = xy[far]
        if np.allclose(new_centers, centers):
            centers = new_centers
            break
        centers = new_centers
    return centers


def wendland(r):
    """Wendland psi_{2,1}: (1-r)^4 (4r+1) on [0,1), 0 outside; psi(0)=1."""
    r = np.asarray(r, dtype=float)
    t = np.clip(1.0 - r, 0.0, None)
    return t**4 * (4.0 * r + 1.0)


@dataclass(frozen=True)
class BasisSet:
    """K basis functions: a constant plus radial levels.

    centers[l] is the (K_l, 2) center array of level l (level 0, the
    constant, has an empty array); radii[l] is that level's common support
    radius in km.  Radii strictly decrease across radial levels.
    """

    centers: tuple
    radii: tuple

    def __post_init__(self):
        cs = tuple(np.asarray(c, dtype=float) for c in self.centers)
        for c in cs:
            c.setflags(write=False)
        object.__setattr__(self, "centers", cs)
        object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))
        rad = self.radii[1:]
        if any(later >= earlier for earlier, later in zip(rad, rad[1:])):
            raise ValueError("support radii must strictly decrease across levels")

    @property
    def K(self) -> int:
        return 1 + sum(len(c) for c in self.centers[1:])

    @property
    def n_levels(self) -> int:
        return len(self.centers)


def build_basis(control_points, K: int, seed: int = 0,
                support_factor: float = SUPPORT_FACTOR) -> BasisSet:
    """Build the K-function basis from control point locations.

    Level 0 is the constant; each radial level places its centers by k-means
    over the control points, with support radius support_factor times the
    median nearest-center spacing (for a single-center level, the largest
    control-point distance to the center).
    """
    xy = coords(control_points)
    distinct = np.unique(xy, axis=0)
    if K > len(distinct):
        raise ValueError(f"K={K} exceeds {len(distinct)} distinct control points")
    sizes = level_sizes(K)
    rng = np.random.default_rng(seed)
    centers = [np.empty((0, 2))]
    radii = [np.inf]
    prev_radius = np.inf
    for k_l in sizes[1:]:
        c = _kmeans(distinct, k_l, rng)
        if k_l == 1:
            radius = support_factor * float(np.max(np.linalg.norm(distinct - c[0], axis=1)))
        else:
            d = cdist(c, c)
            np.fill_diagonal(d, np.inf)
            radius = support_factor * float(np.median(d.min(axis=1)))
        # enforce strict decrease even on pathological geometries
        radius = min(radius, 0.999 * prev_radius) if np.isfinite(prev_radius) else radius
        prev_radius = radius
        centers.append(c)
        radii.append(radius)
    return BasisSet(centers=tuple(centers), radii=tuple(radii))


def evaluate(basis: BasisSet, sites) -> np.ndarray:
    """Evaluate all K basis functions at sites; returns (len(sites), K)."""
    xy = coords(sites)
    cols = [np.ones(len(xy))]
    for c, radius in zip(basis.centers[1:], basis.radii[1:]):
        r = cdist(xy, c) / radius
        cols.append(wendland(r))
    return np.column_stack(cols)


def to_text(basis: BasisSet) -> str:
    """Serialize centers and radii to a reproducible text block."""
    buf = io.StringIO()
    buf.write(f"levels {basis.n_levels}\n")
    buf.write("level 0 constant\n")
    for l, (c, radius) in enumerate(zip(basis.centers[1:], basis.radii[1:]), start=1):
        buf.write(f"level {l} size {len(c)} radius {float(radius)!r}\n")
        for p in c:
            buf.write(f"{float(p[0])!r} {float(p[1])!r}\n")
    return buf.getvalue()


def from_text(text: str) -> BasisSet:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("levels "):
        raise ValueError("not a basis serialization")
    n_levels = int(lines[0].split()[1])
    centers, radii = [np.empty((0, 2))], [np.inf]
    i = 2  # skip "level 0 constant"
    for _ in range(1, n_levels):
        head = lines[i].split()
        size, radius = int(head[3]), float(head[5])
        pts = [tuple(map(float, lines[i + 1 + j].split())) for j in range(size)]
        centers.append(np.array(pts, dtype=float))
        radii.append(radius)
        i += 1 + size
    return BasisSet(centers=tuple(centers), radii=tuple(radii))
