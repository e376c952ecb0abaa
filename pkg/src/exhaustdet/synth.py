"""Deterministic labelled LiDAR sequences with vehicles and exhaust plumes.

The ego vehicle is parked at the origin (identity poses). Every frame is a
pure function of ``(spec, frame)``: randomness comes from Philox streams keyed
by ``(seed, frame, entity, stream)``, so frames can be rendered in any order
and adding an entity never perturbs another entity's samples.

Plume particles are persistent: a particle spawned at frame ``f`` behind the
emitter's rear face drifts with the wind plus its own diffusion velocity and
disappears ``lifetime`` frames later. A vehicle pulling away therefore leaves
its cloud behind.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .scan_model import (BoundingBox3D, BoxClass, Pose, Scan, SemanticLabel, back_point,
                         save_boxes, save_labels, save_poses, save_scan)

PLUME_Z = (0.2, 1.2)

# stream ids for the counter-based generator
_GROUND, _SURFACE, _SPAWN, _PLUME_NOISE, _CLUTTER = range(5)
_GROUND_ENTITY = 0


def _rng(seed: int, frame: int, entity: int, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence([seed & 0xFFFFFFFF, frame, entity, stream])
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class PlumeSpec:
    rate: int = 50                       # particles per frame
    lifetime: int = 40                   # frames
    spawn_offset: float = 0.5            # m behind the rear face
    sigma_spawn: float = 0.2             # m
    spawn_z: tuple = (0.25, 0.7)
    wind: tuple = (0.0, 0.0)             # m/s, ego x/y
    diffusion: float = 0.15              # m/s, per-particle velocity std
    max_reflectivity_frac: float = 0.008


@dataclass
class VehicleSpec:
    x: float
    y: float
    yaw: float = 0.0
    length: float = 4.5
    width: float = 1.8
    height: float = 1.5
    speed_keys: list = field(default_factory=lambda: [(0, 0.0)])  # (frame, m/s), linear between keys
    plume: PlumeSpec | None = None
    surface_points: int = 300
    reflectivity: tuple = (0.1, 0.6)
    score: float | None = None


@dataclass
class ClutterSpec:
    kind: str                            # "pole" or "wall"
    x: float
    y: float
    x2: float = 0.0                      # wall end point
    y2: float = 0.0
    height: float = 3.0
    radius: float = 0.08
    n_points: int = 150
    reflectivity: tuple = (0.05, 0.5)


@dataclass
class FakeBoxSpec:
    """A detector false positive injected into the boxes file."""
    x: float
    y: float
    z: float
    length: float
    width: float
    height: float
    yaw: float = 0.0
    score: float = 0.95
    start_frame: int = 0


@dataclass
class ScenarioSpec:
    frames: int = 100
    rate_hz: float = 20.0
    seed: int = 0
    max_reflectivity: float = 1.0
    ground_x: tuple = (-10.0, 40.0)
    ground_y: tuple = (-15.0, 15.0)
    ground_spacing: float = 0.3
    ground_reflectivity: tuple = (0.05, 0.3)
    noise_sigma: float = 0.01
    vehicles: list = field(default_factory=list)
    clutter: list = field(default_factory=list)
    fake_boxes: list = field(default_factory=list)
    hard_mode: bool = False

    def __post_init__(self):
        if self.frames < 0 or self.rate_hz <= 0 or self.ground_spacing <= 0:
            raise ValueError("frames must be >= 0, rate and spacing > 0")
        for v in self.vehicles:
            p = v.plume
            if p is not None and (p.rate < 0 or p.lifetime < 0):
                raise ValueError("plume rates and lifetimes must be >= 0")
            if p is not None and not self.hard_mode and p.max_reflectivity_frac >= 0.01:
                raise ValueError("plume reflectivity must stay below 1% of max")
        if not self.hard_mode:
            for c in self.clutter:
                if c.reflectivity[0] < 0.01:
                    raise ValueError("clutter reflectivity must be at least 1% of max")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        vehicles = []
        for v in d.pop("vehicles", []):
            v = dict(v)
            plume = v.pop("plume", None)
            if plume is not None:
                plume = PlumeSpec(**{k: tuple(x) if isinstance(x, list) else x
                                     for k, x in plume.items()})
            v["speed_keys"] = [tuple(k) for k in v.get("speed_keys", [(0, 0.0)])]
            if "reflectivity" in v:
                v["reflectivity"] = tuple(v["reflectivity"])
            vehicles.append(VehicleSpec(plume=plume, **v))
        clutter = [ClutterSpec(**{k: tuple(x) if isinstance(x, list) else x for k, x in c.items()})
                   for c in d.pop("clutter", [])]
        fakes = [FakeBoxSpec(**f) for f in d.pop("fake_boxes", [])]
        for key in ("ground_x", "ground_y", "ground_reflectivity"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(vehicles=vehicles, clutter=clutter, fake_boxes=fakes, **d)


# --- kinematics -------------------------------------------------------------

def vehicle_offsets(v: VehicleSpec, frames: int, rate_hz: float) -> np.ndarray:
    """Distance travelled along the heading at the start of each frame."""
    keys = sorted(v.speed_keys)
    kf = np.array([k[0] for k in keys], dtype=np.float64)
    ks = np.array([k[1] for k in keys], dtype=np.float64)
    speed = np.interp(np.arange(frames), kf, ks)
    return np.concatenate([[0.0], np.cumsum(speed / rate_hz)])[:frames]


def vehicle_box(v: VehicleSpec, offset: float) -> BoundingBox3D:
    c, s = math.cos(v.yaw), math.sin(v.yaw)
    return BoundingBox3D(v.x + offset * c, v.y + offset * s, v.height / 2,
                         v.length, v.width, v.height, v.yaw, BoxClass.VEHICLE, v.score)


# --- entity samplers ---------------------------------------------------------

def _ground(spec: ScenarioSpec, frame: int):
    xs = np.arange(spec.ground_x[0], spec.ground_x[1], spec.ground_spacing)
    ys = np.arange(spec.ground_y[0], spec.ground_y[1], spec.ground_spacing)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    n = gx.size
    rng = _rng(spec.seed, frame, _GROUND_ENTITY, _GROUND)
    jitter = rng.uniform(-0.5, 0.5, size=(n, 2)) * spec.ground_spacing
    z = rng.normal(0.0, spec.noise_sigma, size=n)
    r = rng.uniform(*spec.ground_reflectivity, size=n) * spec.max_reflectivity
    pts = np.column_stack([gx.ravel() + jitter[:, 0], gy.ravel() + jitter[:, 1], z, r])
    return pts, np.full(n, SemanticLabel.ROAD, np.uint8)


def _surface(spec, v: VehicleSpec, box: BoundingBox3D, frame: int, entity: int):
    rng = _rng(spec.seed, frame, entity, _SURFACE)
    L, W, H = box.length / 2, box.width / 2, box.height / 2
    # faces: +x, -x, +y, -y, top (no bottom)
    areas = np.array([W * H, W * H, L * H, L * H, L * W])
    face = rng.choice(5, size=v.surface_points, p=areas / areas.sum())
    u = rng.uniform(-1, 1, size=(v.surface_points, 3))
    local = u * np.array([L, W, H])
    local[face == 0, 0] = L
    local[face == 1, 0] = -L
    local[face == 2, 1] = W
    local[face == 3, 1] = -W
    local[face == 4, 2] = H
    local += rng.normal(0, spec.noise_sigma, size=local.shape)
    lim = np.array([L, W, H]) - 1e-3
    local = np.clip(local, -lim, lim)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    world = np.column_stack([box.cx + c * local[:, 0] - s * local[:, 1],
                             box.cy + s * local[:, 0] + c * local[:, 1],
                             box.cz + local[:, 2]])
    r = rng.uniform(*v.reflectivity, size=len(world)) * spec.max_reflectivity
    return np.column_stack([world, r]), np.full(len(world), SemanticLabel.OTHER, np.uint8)


def _spawn(spec, v: VehicleSpec, p: PlumeSpec, box: BoundingBox3D, frame: int, entity: int):
    """Initial position, velocity and reflectivity of the particles born at ``frame``."""
    rng = _rng(spec.seed, frame, entity, _SPAWN)
    n = p.rate
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    bp = back_point(box)
    along = -p.spawn_offset + rng.normal(0, p.sigma_spawn, n)
    side = rng.normal(0, p.sigma_spawn, n)
    pos = np.column_stack([bp[0] + c * along - s * side,
                           bp[1] + s * along + c * side,
                           rng.uniform(*p.spawn_z, n)])
    vel = rng.normal(0, p.diffusion, size=(n, 3))
    vel[:, 2] *= 0.3
    vel[:, :2] += np.asarray(p.wind, dtype=np.float64)
    refl = rng.uniform(0, p.max_reflectivity_frac, n) * spec.max_reflectivity
    return pos, vel, refl


def _plume(spec, v, p, boxes_by_frame, frame: int, entity: int):
    first = max(0, frame - p.lifetime + 1)
    chunks = []
    for f in range(first, frame + 1):
        pos, vel, refl = _spawn(spec, v, p, boxes_by_frame[f], f, entity)
        age_s = (frame - f) / spec.rate_hz
        chunks.append(np.column_stack([pos + vel * age_s, refl]))
    if not chunks or p.rate == 0:
        return np.empty((0, 4)), np.empty(0, np.uint8)
    pts = np.concatenate(chunks)
    rng = _rng(spec.seed, frame, entity, _PLUME_NOISE)
    pts[:, :3] += rng.normal(0, spec.noise_sigma, size=(len(pts), 3))
    pts[:, 2] = np.clip(pts[:, 2], *PLUME_Z)
    return pts, np.full(len(pts), SemanticLabel.GAS, np.uint8)


def _clutter(spec, c: ClutterSpec, frame: int, entity: int):
    rng = _rng(spec.seed, frame, entity, _CLUTTER)
    n = c.n_points
    z = rng.uniform(0, c.height, n)
    if c.kind == "pole":
        a = rng.uniform(0, 2 * math.pi, n)
        xy = np.column_stack([c.x + c.radius * np.cos(a), c.y + c.radius * np.sin(a)])
    elif c.kind == "wall":
        u = rng.uniform(0, 1, n)
        xy = np.column_stack([c.x + u * (c.x2 - c.x), c.y + u * (c.y2 - c.y)])
    else:
        raise ValueError(f"unknown clutter kind {c.kind!r}")
    xyz = np.column_stack([xy, z]) + rng.normal(0, spec.noise_sigma, size=(n, 3))
    xyz[:, 2] = np.maximum(xyz[:, 2], 0.0)
    r = rng.uniform(*c.reflectivity, n) * spec.max_reflectivity
    return np.column_stack([xyz, r]), np.full(n, SemanticLabel.OTHER, np.uint8)


# --- sequence ---------------------------------------------------------------

@dataclass
class SyntheticSequence:
    spec: ScenarioSpec
    scans: list            # Scan with gt_labels
    boxes: list            # per frame list of BoundingBox3D
    poses: list


def _vehicle_boxes(spec: ScenarioSpec):
    out = []
    for v in spec.vehicles:
        offs = vehicle_offsets(v, spec.frames, spec.rate_hz)
        out.append([vehicle_box(v, o) for o in offs])
    return out


def render_frame(spec: ScenarioSpec, frame: int, vboxes=None):
    """Points ``(N, 4)``, gt labels and boxes of one frame."""
    vboxes = vboxes if vboxes is not None else _vehicle_boxes(spec)
    parts = [_ground(spec, frame)]
    for e, v in enumerate(spec.vehicles):
        parts.append(_surface(spec, v, vboxes[e][frame], frame, 1 + e))
    for e, v in enumerate(spec.vehicles):
        if v.plume is not None:
            parts.append(_plume(spec, v, v.plume, vboxes[e], frame, 1 + e))
    base = 1 + len(spec.vehicles)
    for e, c in enumerate(spec.clutter):
        parts.append(_clutter(spec, c, frame, base + e))
    pts = np.concatenate([p for p, _ in parts]).astype(np.float32)
    labels = np.concatenate([lab for _, lab in parts])
    boxes = [vb[frame] for vb in vboxes]
    for fb in spec.fake_boxes:
        if frame >= fb.start_frame:
            boxes.append(BoundingBox3D(fb.x, fb.y, fb.z, fb.length, fb.width, fb.height,
                                       fb.yaw, BoxClass.VEHICLE, fb.score))
    return Scan(t=frame, points=pts, gt_labels=labels), boxes


def simulate(spec: ScenarioSpec) -> SyntheticSequence:
    vboxes = _vehicle_boxes(spec)
    scans, boxes = [], []
    for k in range(spec.frames):
        scan, b = render_frame(spec, k, vboxes)
        scans.append(scan)
        boxes.append(b)
    return SyntheticSequence(spec, scans, boxes, [Pose() for _ in range(spec.frames)])


def write_sequence(seq: SyntheticSequence, out_dir) -> None:
    out_dir = os.fspath(out_dir)
    os.makedirs(os.path.join(out_dir, "scans"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "labels"), exist_ok=True)
    for scan in seq.scans:
        name = f"{scan.t:06d}"
        save_scan(scan, os.path.join(out_dir, "scans", name + ".bin"))
        save_labels(scan.gt_labels, os.path.join(out_dir, "labels", name + ".label"))
    save_boxes(dict(enumerate(seq.boxes)), os.path.join(out_dir, "boxes.jsonl"))
    save_poses(seq.poses, os.path.join(out_dir, "poses.txt"))
    with open(os.path.join(out_dir, "scenario.json"), "w") as fh:
        json.dump(seq.spec.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def generate(spec: ScenarioSpec, out_dir=None) -> SyntheticSequence:
    """Simulate ``spec`` and, when ``out_dir`` is given, write it to disk."""
    seq = simulate(spec)
    if out_dir is not None:
        write_sequence(seq, out_dir)
    return seq


def directory_digest(path) -> dict:
    """SHA-256 of every file below ``path`` keyed by relative name."""
    out = {}
    for root, _, files in os.walk(os.fspath(path)):
        for name in sorted(files):
            full = os.path.join(root, name)
            with open(full, "rb") as fh:
                out[os.path.relpath(full, path)] = hashlib.sha256(fh.read()).hexdigest()
    return dict(sorted(out.items()))


# --- presets ----------------------------------------------------------------

def _idle_vehicle(**plume_kw) -> VehicleSpec:
    plume = dict(rate=50, lifetime=40, spawn_offset=0.5, wind=(-0.2, 0.1))
    plume.update(plume_kw)
    return VehicleSpec(x=10.0, y=0.0, plume=PlumeSpec(**plume))


def _parked() -> VehicleSpec:
    return VehicleSpec(x=20.0, y=-3.5, yaw=0.0, length=4.2, width=1.8, height=1.4)


def _wall() -> ClutterSpec:
    # 5 m to the side of the emitter
    return ClutterSpec("wall", x=2.0, y=5.0, x2=16.0, y2=5.0, height=2.5, n_points=600)


def preset_idle(seed=0, frames=100) -> ScenarioSpec:
    return ScenarioSpec(frames=frames, seed=seed, vehicles=[_idle_vehicle(), _parked()],
                        clutter=[_wall()])


def preset_accelerate(seed=0, frames=100) -> ScenarioSpec:
    v = VehicleSpec(x=10.0, y=0.0, speed_keys=[(0, 0.0), (30, 0.0), (70, 8.0)],
                    plume=PlumeSpec(rate=60, lifetime=60, spawn_offset=0.5, wind=(-0.1, 0.1)))
    return ScenarioSpec(frames=frames, seed=seed, vehicles=[v, _parked()], clutter=[_wall()])


def preset_drift(seed=0, frames=100) -> ScenarioSpec:
    v = _idle_vehicle(lifetime=80, wind=(0.0, 1.2), diffusion=0.1)
    return ScenarioSpec(frames=frames, seed=seed, vehicles=[v, _parked()],
                        clutter=[ClutterSpec("wall", x=2.0, y=-6.0, x2=16.0, y2=-6.0,
                                             height=2.5, n_points=600)])


def preset_no_gas_control(seed=0, frames=100) -> ScenarioSpec:
    v = VehicleSpec(x=10.0, y=0.0)
    return ScenarioSpec(frames=frames, seed=seed, vehicles=[v, _parked()],
                        clutter=[_wall(), ClutterSpec("pole", x=6.8, y=0.6)])


def preset_clutter_near_rear(seed=0, frames=100) -> ScenarioSpec:
    clutter = [_wall(),
               ClutterSpec("pole", x=6.6, y=0.9),
               ClutterSpec("pole", x=7.0, y=-1.2, height=2.2),
               ClutterSpec("wall", x=5.9, y=-1.5, x2=5.9, y2=1.5, height=0.9, n_points=300)]
    return ScenarioSpec(frames=frames, seed=seed, vehicles=[_idle_vehicle(), _parked()],
                        clutter=clutter)


def preset_ghost_bait(seed=0, frames=100) -> ScenarioSpec:
    v = _idle_vehicle(spawn_offset=0.9)
    v.score = 0.97
    parked = _parked()
    parked.score = 0.93
    bp = back_point(vehicle_box(v, 0.0))
    fake = FakeBoxSpec(x=bp[0] - 1.2, y=bp[1] + 0.1, z=0.7, length=1.4, width=1.4,
                       height=1.0, score=0.95, start_frame=10)
    return ScenarioSpec(frames=frames, seed=seed, vehicles=[v, parked], clutter=[_wall()],
                        fake_boxes=[fake])


PRESETS = {
    "idle": preset_idle,
    "accelerate": preset_accelerate,
    "drift": preset_drift,
    "no_gas_control": preset_no_gas_control,
    "clutter_near_rear": preset_clutter_near_rear,
    "ghost_bait": preset_ghost_bait,
}


def preset(name: str, seed: int = 0, frames: int = 100) -> ScenarioSpec:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    return factory(seed=seed, frames=frames)


def with_frames(spec: ScenarioSpec, frames: int) -> ScenarioSpec:
    return replace(spec, frames=frames)
