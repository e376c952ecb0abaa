"""Group gas points into clouds and reduce each cloud to a planar Gaussian."""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.spatial import cKDTree

# cells whose index differs by more than 2 along an axis are > eps apart
_OFFSETS = [o for o in itertools.product(range(-2, 3), repeat=3) if o > (0, 0, 0)]


def _find(parent, a):
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


def cluster(points, eps: float = 1.0, min_pts: int = 3) -> list[np.ndarray]:
    """Single-linkage Euclidean clustering.

    Two points are linked when their 3D distance is at most ``eps``; connected
    components smaller than ``min_pts`` are dropped. Clusters are returned as
    sorted index arrays, ordered by their smallest member.

    Points are binned into cubes of side ``eps / sqrt(3)``. Everything in one
    cube is mutually linked, so only pairs of nearby cubes need a distance
    check, and that check is skipped once the cubes share a component.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    xyz = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(xyz)
    if n == 0:
        return []
    side = eps / math.sqrt(3) * (1 - 1e-9)
    keys = np.floor(xyz / side).astype(np.int64)
    cells, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(np.bincount(inverse, minlength=len(cells)))])
    lookup = {tuple(c): i for i, c in enumerate(cells.tolist())}
    members = [order[bounds[i]:bounds[i + 1]] for i in range(len(cells))]
    trees = {}
    parent = list(range(len(cells)))

    for a, ca in enumerate(cells.tolist()):
        for off in _OFFSETS:
            b = lookup.get((ca[0] + off[0], ca[1] + off[1], ca[2] + off[2]))
            if b is None:
                continue
            ra, rb = _find(parent, a), _find(parent, b)
            if ra == rb:
                continue
            if b not in trees:
                trees[b] = cKDTree(xyz[members[b]])
            d, _ = trees[b].query(xyz[members[a]], k=1)
            if (d <= eps).any():
                parent[rb] = ra

    roots = np.array([_find(parent, c) for c in range(len(cells))])[inverse]
    groups = {}
    for i, r in enumerate(roots.tolist()):
        groups.setdefault(r, []).append(i)
    out = [np.array(g, dtype=np.int64) for g in groups.values() if len(g) >= min_pts]
    out.sort(key=lambda g: g[0])
    return out


def summarize(points, members, sigma_min: float = 0.1):
    """Planar mean and regularised sample covariance of ``points[members]``."""
    xy = np.asarray(points, dtype=np.float64)[np.asarray(members)][:, :2]
    if not len(xy):
        raise ValueError("cannot summarize an empty cluster")
    mu = xy.mean(axis=0)
    floor = sigma_min ** 2
    if len(xy) == 1:
        return mu, floor * np.eye(2)
    cov = np.cov(xy, rowvar=False, ddof=1)
    cov = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(cov)
    if w.min() < floor:
        # clamp the thin directions only; well-spread axes keep their variance
        cov = (V * np.maximum(w, floor)) @ V.T
        cov = 0.5 * (cov + cov.T)
    return mu, cov
