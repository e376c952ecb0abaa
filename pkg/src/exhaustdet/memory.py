"""Detection history and the gas likelihood grid built from it.

Every gas cloud seen in the recent past is kept as a planar Gaussian. Each
frame the live Gaussians are rasterised (truncated at three Mahalanobis units)
into a square grid around the ego vehicle; cells with a positive value are
where gas is expected.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scan_model import Pose

TRUNCATION = 3.0


@dataclass(frozen=True, eq=False)
class Detection:
    t: int
    mu: np.ndarray
    cov: np.ndarray
    source: str = "proximity"  # or "isolated"

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).reshape(2)
        cov = np.asarray(self.cov, dtype=np.float64).reshape(2, 2)
        np.linalg.cholesky(cov)  # raises LinAlgError unless SPD
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "cov", cov)


@dataclass
class HistorySet:
    """Insertion-ordered detections that expire ``ttl`` steps after creation."""

    ttl: int = 150
    detections: list = field(default_factory=list)

    def __len__(self):
        return len(self.detections)

    def __iter__(self):
        return iter(self.detections)

    def insert(self, detections, t: int, pose: Pose | None = None, source: str = "proximity"):
        """Store ``(mu, cov)`` pairs given in the ego frame at step ``t``.

        With a pose the Gaussians are moved into the world frame first.
        """
        if pose is not None:
            R, tr = pose.planar()
        for mu, cov in detections:
            mu = np.asarray(mu, dtype=np.float64)
            cov = np.asarray(cov, dtype=np.float64)
            if pose is not None:
                mu = R @ mu + tr
                cov = R @ cov @ R.T
                cov = 0.5 * (cov + cov.T)
            self.detections.append(Detection(int(t), mu, cov, source))
        return self

    def prune(self, t_now: int):
        """Drop every detection whose age ``t_now - t`` has reached the TTL."""
        self.detections = [d for d in self.detections if t_now - d.t < self.ttl]
        return self

    def copy(self) -> "HistorySet":
        return HistorySet(self.ttl, list(self.detections))


def insert(history: HistorySet, detections, t: int, pose: Pose | None = None,
           source: str = "proximity") -> HistorySet:
    return history.insert(detections, t, pose, source)


def prune(history: HistorySet, t_now: int) -> HistorySet:
    return history.prune(t_now)


@dataclass(frozen=True, eq=False)
class LikelihoodGrid:
    x_min: float
    y_min: float
    dx: float
    dy: float
    values: np.ndarray  # (nx, ny), indexed [ix, iy]

    @property
    def shape(self):
        return self.values.shape

    def cell_centers(self, ix, iy):
        return (self.x_min + (np.asarray(ix) + 0.5) * self.dx,
                self.y_min + (np.asarray(iy) + 0.5) * self.dy)

    def cell_index(self, xy):
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        ix = np.floor((xy[:, 0] - self.x_min) / self.dx).astype(np.int64)
        iy = np.floor((xy[:, 1] - self.y_min) / self.dy).astype(np.int64)
        return ix, iy

    def query_many(self, xy) -> np.ndarray:
        ix, iy = self.cell_index(xy)
        nx, ny = self.values.shape
        ok = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        out = np.zeros(len(ix))
        out[ok] = self.values[ix[ok], iy[ok]]
        return out


def query(grid: LikelihoodGrid, p) -> float:
    p = np.asarray(p, dtype=np.float64)
    return float(grid.query_many(p[:2])[0])


def _to_ego(det: Detection, pose: Pose | None):
    if pose is None:
        return det.mu, det.cov
    R, tr = pose.planar()
    mu = R.T @ (det.mu - tr)
    cov = R.T @ det.cov @ R
    return mu, 0.5 * (cov + cov.T)


def build_grid(history, extent: float = 200.0, dx: float = 0.1, dy: float = 0.1,
               pose: Pose | None = None) -> LikelihoodGrid:
    """Rasterise the live detections into a max-normalised grid.

    ``extent`` is the side length of a square centred on the ego vehicle.
    Densities are sampled at cell centres and summed in history order.
    """
    if dx <= 0 or dy <= 0:
        raise ValueError("grid cell sizes must be > 0")
    nx, ny = int(round(extent / dx)), int(round(extent / dy))
    if nx <= 0 or ny <= 0:
        raise ValueError(f"extent {extent} m with cells ({dx}, {dy}) gives an empty grid")
    x_min, y_min = -nx * dx / 2, -ny * dy / 2
    values = np.zeros((nx, ny))
    lo_x, lo_y, hi_x, hi_y = nx, ny, -1, -1
    for det in history:
        mu, cov = _to_ego(det, pose)
        hx = TRUNCATION * math.sqrt(cov[0, 0])
        hy = TRUNCATION * math.sqrt(cov[1, 1])
        i0 = max(0, math.floor((mu[0] - hx - x_min) / dx) - 1)
        i1 = min(nx - 1, math.floor((mu[0] + hx - x_min) / dx) + 1)
        j0 = max(0, math.floor((mu[1] - hy - y_min) / dy) - 1)
        j1 = min(ny - 1, math.floor((mu[1] + hy - y_min) / dy) + 1)
        if i0 > i1 or j0 > j1:
            continue
        cx = x_min + (np.arange(i0, i1 + 1) + 0.5) * dx - mu[0]
        cy = y_min + (np.arange(j0, j1 + 1) + 0.5) * dy - mu[1]
        inv = np.linalg.inv(cov)
        m2 = (inv[0, 0] * cx[:, None] ** 2 + 2 * inv[0, 1] * cx[:, None] * cy[None, :]
              + inv[1, 1] * cy[None, :] ** 2)
        inside = m2 <= TRUNCATION ** 2
        if not inside.any():
            continue
        dens = np.exp(-0.5 * m2) / (2 * math.pi * math.sqrt(np.linalg.det(cov)))
        values[i0:i1 + 1, j0:j1 + 1] += np.where(inside, dens, 0.0)
        lo_x, lo_y = min(lo_x, i0), min(lo_y, j0)
        hi_x, hi_y = max(hi_x, i1), max(hi_y, j1)
    if hi_x >= 0:
        win = values[lo_x:hi_x + 1, lo_y:hi_y + 1]
        peak = win.max()
        if peak > 0:
            win /= peak
    return LikelihoodGrid(x_min, y_min, dx, dy, values)


def write_pgm(grid: LikelihoodGrid, path) -> None:
    """Binary greyscale dump, x to the right and y up."""
    img = np.round(np.clip(grid.values, 0.0, 1.0) * 255).astype(np.uint8)
    img = np.flipud(img.T)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(img.tobytes())
