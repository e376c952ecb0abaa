"""Point clouds, vehicle boxes, poses and their on-disk formats.

Scans are kept as ``(N, 4)`` arrays of ``x, y, z, r`` rows so the rest of the
package can stay vectorised; the single-point helpers below are thin wrappers
over the array versions.
"""
from __future__ import annotations

import csv
import enum
import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple, Sequence

import numpy as np

RECORD_BYTES = 16  # 4 x float32


class ScanFormatError(ValueError):
    """Raised when a scan, label, box or pose file cannot be decoded."""


class SemanticLabel(enum.IntEnum):
    OTHER = 0
    GAS = 1
    ROAD = 2


class BoxClass(str, enum.Enum):
    VEHICLE = "Vehicle"
    OTHER = "Other"


class Point(NamedTuple):
    x: float
    y: float
    z: float
    r: float = 0.0


@dataclass(frozen=True, eq=False)
class Scan:
    """One LiDAR sweep.

    ``points`` is an ``(N, 4)`` array; ``gt_labels`` (optional) holds one
    :class:`SemanticLabel` value per point.
    """

    t: int
    points: np.ndarray
    gt_labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"points must have shape (N, 4), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("scan contains non-finite values")
        object.__setattr__(self, "points", pts)
        if self.t < 0:
            raise ValueError(f"time step must be >= 0, got {self.t}")
        if self.gt_labels is not None:
            lab = np.asarray(self.gt_labels, dtype=np.uint8)
            if lab.shape != (len(pts),):
                raise ValueError(
                    f"gt_labels has {lab.shape[0] if lab.ndim else 0} entries for {len(pts)} points")
            object.__setattr__(self, "gt_labels", lab)

    def __len__(self):
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3].astype(np.float64)

    @property
    def reflectivity(self) -> np.ndarray:
        return self.points[:, 3].astype(np.float64)

    def point(self, i: int) -> Point:
        return Point(*(float(v) for v in self.points[i]))


def _wrap_yaw(yaw: float) -> float:
    # (-pi, pi]
    yaw = math.remainder(yaw, 2.0 * math.pi)
    if yaw <= -math.pi:
        yaw += 2.0 * math.pi
    return yaw


@dataclass(frozen=True)
class BoundingBox3D:
    cx: float
    cy: float
    cz: float
    length: float
    width: float
    height: float
    yaw: float = 0.0
    cls: BoxClass = BoxClass.VEHICLE
    confidence: float | None = None

    def __post_init__(self):
        dims = (self.length, self.width, self.height)
        if not all(math.isfinite(d) and d > 0 for d in dims):
            raise ValueError(f"box dimensions must be positive, got {dims}")
        if not all(math.isfinite(c) for c in (self.cx, self.cy, self.cz, self.yaw)):
            raise ValueError("box center and yaw must be finite")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")
        object.__setattr__(self, "yaw", _wrap_yaw(float(self.yaw)))
        object.__setattr__(self, "cls", BoxClass(self.cls))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz])

    @property
    def dims(self) -> tuple[float, float, float]:
        return (self.length, self.width, self.height)

    @property
    def is_vehicle(self) -> bool:
        return self.cls is BoxClass.VEHICLE


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform taking ego-frame coordinates into the world frame."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValueError("pose rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_yaw(cls, yaw: float, tx: float = 0.0, ty: float = 0.0, tz: float = 0.0) -> "Pose":
        c, s = math.cos(yaw), math.sin(yaw)
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls(R, np.array([tx, ty, tz]))

    @property
    def matrix(self) -> np.ndarray:
        """3x4 ``[R|t]``."""
        return np.hstack([self.rotation, self.translation[:, None]])

    def planar(self) -> tuple[np.ndarray, np.ndarray]:
        """Ground-plane part of the pose as a proper 2D rotation and translation.

        The heading is read from the first rotation column, so small roll and
        pitch do not leak a shear into the 2D rotation.
        """
        yaw = math.atan2(self.rotation[1, 0], self.rotation[0, 0])
        c, s = math.cos(yaw), math.sin(yaw)
        return np.array([[c, -s], [s, c]]), self.translation[:2].copy()


# --- geometry -------------------------------------------------------------

def points_in_box(xyz, box: BoundingBox3D) -> np.ndarray:
    """Boolean mask of points inside ``box`` (faces included)."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    d = xyz - box.center
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    # rotate by -yaw into the box frame
    lx = c * d[:, 0] + s * d[:, 1]
    ly = -s * d[:, 0] + c * d[:, 1]
    return ((np.abs(lx) <= box.length / 2)
            & (np.abs(ly) <= box.width / 2)
            & (np.abs(d[:, 2]) <= box.height / 2))


def point_in_box(p: Sequence[float], box: BoundingBox3D) -> bool:
    return bool(points_in_box(np.asarray(p, dtype=np.float64)[:3], box)[0])


def enlarge_box(box: BoundingBox3D, delta: float) -> BoundingBox3D:
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    return replace(box, length=box.length + delta, width=box.width + delta,
                   height=box.height + delta)


def back_point(box: BoundingBox3D) -> np.ndarray:
    """Midpoint of the rear face (opposite the heading) at center height."""
    half = box.length / 2
    return np.array([box.cx - half * math.cos(box.yaw),
                     box.cy - half * math.sin(box.yaw),
                     box.cz])


# --- scan / label I/O -----------------------------------------------------

def load_scan(path, format: str = "binary", t: int = 0) -> Scan:
    path = os.fspath(path)
    if format in ("binary", "bin"):
        try:
            raw = open(path, "rb").read()
        except OSError as e:
            raise ScanFormatError(f"cannot read scan {path}: {e}") from e
        if len(raw) % RECORD_BYTES:
            raise ScanFormatError(
                f"truncated record in {path}: {len(raw)} bytes is not a multiple of {RECORD_BYTES}")
        pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(np.float32)
    elif format == "csv":
        try:
            with open(path, newline="") as fh:
                reader = csv.DictReader(fh)
                if reader.fieldnames is None:
                    rows = []
                elif [f.strip() for f in reader.fieldnames] != ["x", "y", "z", "r"]:
                    raise ScanFormatError(f"{path}: expected header x,y,z,r")
                else:
                    rows = [[float(row[k]) for k in reader.fieldnames] for row in reader]
        except OSError as e:
            raise ScanFormatError(f"cannot read scan {path}: {e}") from e
        except (TypeError, ValueError) as e:
            if isinstance(e, ScanFormatError):
                raise
            raise ScanFormatError(f"{path}: malformed csv row ({e})") from e
        pts = np.asarray(rows, dtype=np.float64).reshape(-1, 4)
    else:
        raise ValueError(f"unknown scan format {format!r}")
    if not np.isfinite(pts).all():
        raise ScanFormatError(f"{path}: non-finite values")
    return Scan(t=t, points=pts)


def save_scan(scan_or_points, path) -> None:
    pts = scan_or_points.points if isinstance(scan_or_points, Scan) else scan_or_points
    np.ascontiguousarray(pts, dtype="<f4").tofile(os.fspath(path))


def load_labels(path, n_points: int | None = None) -> np.ndarray:
    try:
        lab = np.fromfile(os.fspath(path), dtype=np.uint8)
    except OSError as e:
        raise ScanFormatError(f"cannot read labels {path}: {e}") from e
    if n_points is not None and len(lab) != n_points:
        raise ScanFormatError(f"{path}: {len(lab)} labels for {n_points} points")
    if lab.size and lab.max() > max(SemanticLabel):
        raise ScanFormatError(f"{path}: unknown label value {int(lab.max())}")
    return lab


def save_labels(labels, path) -> None:
    np.ascontiguousarray(labels, dtype=np.uint8).tofile(os.fspath(path))


# --- boxes / poses --------------------------------------------------------

def box_to_record(frame: int, box: BoundingBox3D) -> dict:
    rec = {"frame": int(frame), "cx": box.cx, "cy": box.cy, "cz": box.cz,
           "length": box.length, "width": box.width, "height": box.height,
           "yaw": box.yaw, "class": box.cls.value}
    if box.confidence is not None:
        rec["score"] = box.confidence
    return rec


def box_from_record(rec: dict) -> BoundingBox3D:
    try:
        return BoundingBox3D(
            float(rec["cx"]), float(rec["cy"]), float(rec["cz"]),
            float(rec["length"]), float(rec["width"]), float(rec["height"]),
            float(rec.get("yaw", 0.0)), BoxClass(rec.get("class", "Vehicle")),
            None if rec.get("score") is None else float(rec["score"]))
    except (KeyError, ValueError, TypeError) as e:
        raise ScanFormatError(f"bad box record {rec!r}: {e}") from e


def load_boxes(path) -> dict[int, list[BoundingBox3D]]:
    """Read a JSON-lines boxes file into ``{frame: [boxes in file order]}``."""
    out: dict[int, list[BoundingBox3D]] = {}
    try:
        fh = open(os.fspath(path))
    except OSError as e:
        raise ScanFormatError(f"cannot read boxes {path}: {e}") from e
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ScanFormatError(f"{path}:{lineno}: {e}") from e
            if "frame" not in rec:
                raise ScanFormatError(f"{path}:{lineno}: missing 'frame'")
            out.setdefault(int(rec["frame"]), []).append(box_from_record(rec))
    return out


def save_boxes(boxes_by_frame: dict[int, Iterable[BoundingBox3D]], path) -> None:
    with open(os.fspath(path), "w") as fh:
        for frame in sorted(boxes_by_frame):
            for box in boxes_by_frame[frame]:
                fh.write(json.dumps(box_to_record(frame, box)) + "\n")


def load_poses(path) -> list[Pose]:
    try:
        rows = [line.split() for line in open(os.fspath(path)) if line.strip()]
    except OSError as e:
        raise ScanFormatError(f"cannot read poses {path}: {e}") from e
    poses = []
    for i, row in enumerate(rows):
        if len(row) != 12:
            raise ScanFormatError(f"{path}: pose {i} has {len(row)} values, expected 12")
        m = np.array([float(v) for v in row]).reshape(3, 4)
        poses.append(Pose(m[:, :3], m[:, 3]))
    return poses


def save_poses(poses: Iterable[Pose], path) -> None:
    with open(os.fspath(path), "w") as fh:
        for pose in poses:
            fh.write(" ".join(repr(float(v)) for v in pose.matrix.ravel()) + "\n")
