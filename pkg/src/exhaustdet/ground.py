"""Ground height model, road classification and the filtered cloud.

The ground model is deliberately crude: the lowest return in each square
cell is taken as the local ground height. That is enough for scenes whose
road is sampled densely, and an external road mask can replace it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scan_model import BoundingBox3D, Scan, points_in_box


def pack_cells(keys: np.ndarray) -> np.ndarray:
    """Fold ``(ix, iy)`` integer cell coordinates into one sortable int64."""
    keys = np.asarray(keys, dtype=np.int64).reshape(-1, 2)
    return (keys[:, 0] << 32) + (keys[:, 1] + (1 << 31))


@dataclass(frozen=True, eq=False)
class GroundModel:
    cell: float
    cell_keys: np.ndarray   # packed, sorted
    cell_heights: np.ndarray
    z0: float = 0.0

    @classmethod
    def from_heights(cls, cell: float, heights: dict, z0: float = 0.0) -> "GroundModel":
        """Build from ``{(ix, iy): z_g}``."""
        if not heights:
            return cls(cell, np.empty(0, np.int64), np.empty(0), z0)
        packed = pack_cells(np.array(list(heights), dtype=np.int64))
        z = np.array(list(heights.values()), dtype=np.float64)
        order = np.argsort(packed)
        return cls(cell, packed[order], z[order], z0)

    @property
    def heights(self) -> dict:
        ix = self.cell_keys >> 32
        iy = (self.cell_keys & 0xFFFFFFFF) - (1 << 31)
        return {(int(i), int(j)): float(z) for i, j, z in zip(ix, iy, self.cell_heights)}

    def cell_of(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        return np.floor(xy / self.cell).astype(np.int64)

    def height_at(self, xy) -> np.ndarray:
        """Ground height under each ``(x, y)``; unknown cells fall back to ``z0``."""
        packed = pack_cells(self.cell_of(xy))
        out = np.full(len(packed), self.z0)
        if len(self.cell_keys):
            pos = np.searchsorted(self.cell_keys, packed).clip(max=len(self.cell_keys) - 1)
            hit = self.cell_keys[pos] == packed
            out[hit] = self.cell_heights[pos[hit]]
        return out

    def clearance_many(self, xyz) -> np.ndarray:
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        if not len(xyz):
            return np.empty(0)
        return xyz[:, 2] - self.height_at(xyz[:, :2])


@dataclass(frozen=True, eq=False)
class FilteredCloud:
    """Index view onto the points that survive road and box removal."""

    scan: Scan
    indices: np.ndarray

    def __len__(self):
        return len(self.indices)

    @property
    def xyz(self) -> np.ndarray:
        return self.scan.xyz[self.indices]

    @property
    def reflectivity(self) -> np.ndarray:
        return self.scan.reflectivity[self.indices]


def estimate_ground(scan: Scan, g_cell: float = 1.0, tol: float = 0.15):
    """Per-cell minimum ground model and the matching road mask.

    Returns
    -------
    (GroundModel, ndarray of bool)
        A point is road when it lies within ``tol`` above its cell minimum.
    """
    if g_cell <= 0:
        raise ValueError("g_cell must be > 0")
    if len(scan) == 0:
        return GroundModel.from_heights(g_cell, {}), np.zeros(0, dtype=bool)
    xyz = scan.xyz
    packed = pack_cells(np.floor(xyz[:, :2] / g_cell))
    uniq, inverse = np.unique(packed, return_inverse=True)
    inverse = inverse.reshape(-1)
    zmin = np.full(len(uniq), np.inf)
    np.minimum.at(zmin, inverse, xyz[:, 2])
    road = (xyz[:, 2] - zmin[inverse]) <= tol
    return GroundModel(g_cell, uniq, zmin, float(np.median(zmin))), road


def clearance(p, gm: GroundModel) -> float:
    """Height of ``p`` above the local ground estimate (may be negative)."""
    p = np.asarray(p, dtype=np.float64)
    return float(gm.clearance_many(p[:3])[0])


def box_mask(xyz, boxes) -> np.ndarray:
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    inside = np.zeros(len(xyz), dtype=bool)
    for b in boxes:
        inside |= points_in_box(xyz, b)
    return inside


def filter_cloud(scan: Scan, boxes: list[BoundingBox3D], road_mask) -> FilteredCloud:
    road_mask = np.asarray(road_mask, dtype=bool)
    if road_mask.shape != (len(scan),):
        raise ValueError(f"road mask has {road_mask.size} entries for {len(scan)} points")
    keep = ~road_mask
    if boxes:
        keep &= ~box_mask(scan.xyz, boxes)
    return FilteredCloud(scan, np.flatnonzero(keep))
