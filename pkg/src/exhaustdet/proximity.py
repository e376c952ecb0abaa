"""First stage: gas exhaust close to the emitting vehicle.

Candidates are non-road, out-of-box points within ``s`` of a vehicle's rear
midpoint. Candidates are then grouped into vertical pillars and a pillar is
kept only when it is both dim and airborne.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ground import FilteredCloud, GroundModel, pack_cells
from .scan_model import back_point


@dataclass(frozen=True, eq=False)
class PillarGrid:
    dx: float
    dy: float
    origin: tuple[float, float]
    keys: np.ndarray          # (K, 2) integer cell coordinates, sorted
    members: list             # K arrays of scan indices
    mean_reflectivity: np.ndarray
    min_clearance: np.ndarray

    def __len__(self):
        return len(self.members)


@dataclass(frozen=True, eq=False)
class ProximityResult:
    gas_indices: np.ndarray
    candidate_indices: np.ndarray
    hits_per_vehicle: list = field(default_factory=list)


def within_radius(xyz, centers, s: float) -> np.ndarray:
    """Mask of points whose distance to the closest center is at most ``s``."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    hit = np.zeros(len(xyz), dtype=bool)
    for c in np.asarray(centers, dtype=np.float64).reshape(-1, 3):
        hit |= np.sqrt(((xyz - c) ** 2).sum(axis=1)) <= s
    return hit


def sphere_candidates(cloud: FilteredCloud, back_points, s: float) -> np.ndarray:
    """Scan indices of cloud points within ``s`` of any back point."""
    if s <= 0:
        raise ValueError("sphere radius must be > 0")
    if len(cloud) == 0 or len(back_points) == 0:
        return np.empty(0, dtype=np.int64)
    return cloud.indices[within_radius(cloud.xyz, back_points, s)]


def pillarize(scan, candidate_indices, dx: float, dy: float, gm: GroundModel,
              origin=(0.0, 0.0)) -> PillarGrid:
    """Group candidate points into ``dx`` x ``dy`` vertical columns.

    ``scan`` may be a :class:`Scan` or a :class:`FilteredCloud` (only the
    underlying scan is used; indices always refer to scan rows).
    """
    if dx <= 0 or dy <= 0:
        raise ValueError("pillar sizes must be > 0")
    scan = getattr(scan, "scan", scan)
    idx = np.asarray(candidate_indices, dtype=np.int64)
    if not len(idx):
        return PillarGrid(dx, dy, tuple(origin), np.empty((0, 2), np.int64), [],
                          np.empty(0), np.empty(0))
    xyz = scan.xyz[idx]
    refl = scan.reflectivity[idx]
    clear = gm.clearance_many(xyz)
    keys = np.stack([np.floor((xyz[:, 0] - origin[0]) / dx),
                     np.floor((xyz[:, 1] - origin[1]) / dy)], axis=1).astype(np.int64)
    _, first, inverse = np.unique(pack_cells(keys), return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    uniq = keys[first]
    k = len(uniq)
    counts = np.bincount(inverse, minlength=k)
    mean_r = np.bincount(inverse, weights=refl, minlength=k) / counts
    min_g = np.full(k, np.inf)
    np.minimum.at(min_g, inverse, clear)
    order = np.argsort(inverse, kind="stable")
    members = np.split(idx[order], np.cumsum(counts)[:-1])
    return PillarGrid(dx, dy, tuple(origin), uniq, members, mean_r, min_g)


def gas_pillars(grid: PillarGrid, t_r: float, g_min: float = 0.0) -> np.ndarray:
    """Boolean mask over pillars passing the dim-and-airborne rule."""
    return (grid.mean_reflectivity < t_r) & (grid.min_clearance > g_min)


def label_correction(grid: PillarGrid, t_r: float, g_min: float = 0.0) -> np.ndarray:
    """Sorted scan indices of the members of every pillar kept as gas."""
    if t_r < 0:
        raise ValueError("reflectivity threshold must be >= 0")
    keep = gas_pillars(grid, t_r, g_min)
    if not keep.any():
        return np.empty(0, dtype=np.int64)
    return np.sort(np.concatenate([m for m, k in zip(grid.members, keep) if k]))


def correct(scan, candidate_indices, gm, cfg) -> np.ndarray:
    """Pillarize ``candidate_indices`` and apply the correction rule from ``cfg``.

    Returns the candidates untouched when correction is switched off.
    """
    idx = np.sort(np.asarray(candidate_indices, dtype=np.int64))
    if not cfg.label_correction_enabled:
        return idx
    grid = pillarize(scan, idx, cfg.pillar_dx_m, cfg.pillar_dy_m, gm)
    return label_correction(grid, cfg.reflectivity_threshold, cfg.ground_clearance_min_m)


def detect_proximity(cloud: FilteredCloud, boxes, gm: GroundModel, cfg) -> ProximityResult:
    vehicles = [b for b in boxes if b.is_vehicle]
    if not vehicles or len(cloud) == 0:
        return ProximityResult(np.empty(0, np.int64), np.empty(0, np.int64),
                               [0] * len(vehicles))
    backs = np.array([back_point(b) for b in vehicles])
    xyz = cloud.xyz
    hits = [int(within_radius(xyz, bp, cfg.sphere_radius_m).sum()) for bp in backs]
    cand = sphere_candidates(cloud, backs, cfg.sphere_radius_m)
    gas = correct(cloud.scan, cand, gm, cfg)
    return ProximityResult(gas, cand, hits)
