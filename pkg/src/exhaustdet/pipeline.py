"""Per-frame orchestration of both detection stages, plus ghost flagging.

:class:`GasExhaustDetector` is the stateful entry point: its constructor
arguments are the :class:`~exhaustdet.config.PipelineConfig` keys, ``fit``
starts a fresh sequence and ``process_frame`` / ``predict`` consume frames in
time order.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import clustering
from ._validation import check_boxes, check_scan
from .config import PipelineConfig
from .ground import estimate_ground, filter_cloud
from .memory import HistorySet, LikelihoodGrid, build_grid
from .proximity import correct, detect_proximity, within_radius
from .scan_model import SemanticLabel, back_point, enlarge_box, points_in_box

log = logging.getLogger(__name__)

_EMPTY = np.empty(0, dtype=np.int64)


class SequenceError(ValueError):
    """Frames arrived out of order or sources disagree on the frame count."""


@dataclass(eq=False)
class FrameResult:
    t: int
    labels: np.ndarray
    proximity: np.ndarray
    isolated: np.ndarray
    ghosts: list = field(default_factory=list)   # [(box index, is_ghost)]
    counts: dict = field(default_factory=dict)
    grid: LikelihoodGrid | None = None

    @property
    def gas(self) -> np.ndarray:
        return np.union1d(self.proximity, self.isolated)


@dataclass
class SequenceState:
    history: HistorySet
    last_t: int | None = None


def _cluster_gaussians(scan, indices, cfg):
    if not len(indices):
        return []
    xyz = scan.xyz[indices]
    groups = clustering.cluster(xyz, cfg.cluster_eps_m, cfg.cluster_min_pts)
    return [clustering.summarize(xyz, g, cfg.sigma_min_m) for g in groups]


def select_boxes(boxes, cfg: PipelineConfig):
    """Indices into ``boxes`` that take part in detection.

    Unscored (label) boxes are always used. Scored boxes are kept only above
    the confidence threshold when ``select_confident_boxes`` is set.
    """
    keep = []
    for i, b in enumerate(boxes):
        if (cfg.select_confident_boxes and b.confidence is not None
                and not b.confidence > cfg.ghost_conf_thresh):
            continue
        keep.append(i)
    return keep


def detect_ghosts(boxes, labels, scan, cfg: PipelineConfig):
    """Flag boxes whose non-road interior is strictly majority gas.

    Only boxes with a confidence above ``cfg.ghost_conf_thresh`` are eligible;
    boxes holding no (non-road) points are never ghosts.
    """
    labels = np.asarray(labels)
    xyz = scan.xyz
    counted = labels != SemanticLabel.ROAD
    flags = []
    for i, b in enumerate(boxes):
        if b.confidence is None or not b.confidence > cfg.ghost_conf_thresh:
            flags.append((i, False))
            continue
        inside = points_in_box(xyz, b) & counted
        n = int(inside.sum())
        n_gas = int((labels[inside] == SemanticLabel.GAS).sum())
        flags.append((i, n > 0 and 2 * n_gas > n))
    return flags


def _ghost_probe_labels(scan, labels, road, used, gm, grid, cfg):
    """Labels with in-box points re-classified as if their own box were absent.

    Interior points of a box become candidates when they are inside another
    vehicle's rear sphere or on a positive grid cell, and then go through the
    usual pillar correction.
    """
    probe = labels.copy()
    xyz = scan.xyz
    on_grid = grid.query_many(xyz[:, :2]) > 0 if grid is not None else np.zeros(len(xyz), bool)
    for k, b in enumerate(used):
        if b.confidence is None or not b.confidence > cfg.ghost_conf_thresh:
            continue
        inside = np.flatnonzero(points_in_box(xyz, b) & ~road)
        if not len(inside):
            continue
        others = [back_point(o) for j, o in enumerate(used) if j != k and o.is_vehicle]
        cand = on_grid[inside]
        if others:
            cand = cand | within_radius(xyz[inside], others, cfg.sphere_radius_m)
        gas = correct(scan, inside[cand], gm, cfg)
        probe[gas] = SemanticLabel.GAS
    return probe


def process_frame(scan, boxes, pose, state: SequenceState, cfg: PipelineConfig,
                  road_mask=None, keep_grid: bool = False):
    """Run both stages on one frame, updating ``state`` in place.

    Returns ``(FrameResult, state)``.
    """
    if state.last_t is not None and scan.t <= state.last_t:
        raise SequenceError(f"frame t={scan.t} does not follow t={state.last_t}")
    history = state.history
    n_before = len(history)

    keep_idx = select_boxes(boxes, cfg)
    margin = cfg.margin_for(boxes)
    used = [enlarge_box(boxes[i], margin) for i in keep_idx]

    gm, est_road = estimate_ground(scan, cfg.ground_cell_m, cfg.ground_tol_m)
    road = est_road if road_mask is None else np.asarray(road_mask, dtype=bool)
    cloud = filter_cloud(scan, used, road)

    prox = detect_proximity(cloud, used, gm, cfg)
    isolated = _EMPTY
    grid = None
    if cfg.isolated_stage_enabled:
        history.insert(_cluster_gaussians(scan, prox.gas_indices, cfg), scan.t, pose, "proximity")
        history.prune(scan.t)
        grid = build_grid(history, cfg.grid_extent_m, cfg.grid_dx_m, cfg.grid_dy_m, pose)
        if len(cloud):
            cand = cloud.indices[grid.query_many(cloud.xyz[:, :2]) > 0]
            isolated = correct(scan, cand, gm, cfg)
        if cfg.second_stage_memory_save_enabled:
            history.insert(_cluster_gaussians(scan, isolated, cfg), scan.t, pose, "isolated")

    labels = np.zeros(len(scan), dtype=np.uint8)
    labels[road] = SemanticLabel.ROAD
    labels[prox.gas_indices] = SemanticLabel.GAS
    labels[isolated] = SemanticLabel.GAS

    ghosts = [(i, False) for i in range(len(boxes))]
    if any(b.confidence is not None for b in used):
        probe = _ghost_probe_labels(scan, labels, road, used, gm, grid, cfg)
        for k, is_ghost in detect_ghosts(used, probe, scan, cfg):
            ghosts[keep_idx[k]] = (keep_idx[k], is_ghost)

    state.last_t = scan.t
    counts = {
        "points": len(scan),
        "road": int(road.sum()),
        "filtered": len(cloud),
        "proximity_candidates": int(len(prox.candidate_indices)),
        "proximity": int(len(prox.gas_indices)),
        "isolated": int(len(isolated)),
        "gas": int((labels == SemanticLabel.GAS).sum()),
        "history": len(history),
        "history_added": len(history) - n_before,
        "ghosts": sum(g for _, g in ghosts),
    }
    result = FrameResult(scan.t, labels, prox.gas_indices, isolated, ghosts, counts,
                         grid if keep_grid else None)
    return result, state


def run_sequence(scans, boxes_source, poses=None, cfg: PipelineConfig | None = None,
                 sinks=(), road_masks=None, keep_grid: bool = False) -> dict:
    """Process one sequence with a fresh history, streaming results to ``sinks``.

    ``boxes_source`` yields one list of boxes per scan; ``poses`` and
    ``road_masks`` (optional) one entry per scan. Each sink is called as
    ``sink(scan, result)``.
    """
    cfg = cfg or PipelineConfig()
    state = SequenceState(HistorySet(cfg.history_ttl_steps))
    box_it = iter(boxes_source)
    pose_it = iter(poses) if poses is not None else None
    mask_it = iter(road_masks) if road_masks is not None else None
    summary = {"frames": 0, "points": 0, "gas": 0, "proximity": 0, "isolated": 0,
               "ghosts": 0, "seconds": 0.0}
    sentinel = object()
    for scan in scans:
        boxes = next(box_it, sentinel)
        pose = next(pose_it, sentinel) if pose_it is not None else None
        mask = next(mask_it, sentinel) if mask_it is not None else None
        if boxes is sentinel or pose is sentinel or mask is sentinel:
            raise SequenceError(f"sources ran out before scan t={scan.t}")
        start = time.perf_counter()
        result, state = process_frame(scan, list(boxes), pose, state, cfg, mask, keep_grid)
        elapsed = time.perf_counter() - start
        result.counts["seconds"] = elapsed
        log.debug("frame %d: %s", scan.t, result.counts)
        summary["frames"] += 1
        summary["seconds"] += elapsed
        for key in ("points", "gas", "proximity", "isolated", "ghosts"):
            summary[key] += result.counts[key]
        for sink in sinks:
            sink(scan, result)
    if next(box_it, sentinel) is not sentinel:
        raise SequenceError("boxes source has more frames than the scan source")
    return summary


class GasExhaustDetector(BaseEstimator):
    """Two-stage gas exhaust detector with per-sequence memory.

    Parameters mirror :class:`PipelineConfig`. Call ``fit()`` (or
    :meth:`reset`) at the start of each sequence; the fitted state is the
    detection history.

    Examples
    --------
    >>> det = GasExhaustDetector(sphere_radius_m=3.0).fit()
    >>> res = det.process_frame(scan, boxes)            # doctest: +SKIP
    """

    def __init__(self, sphere_radius_m=PipelineConfig.sphere_radius_m,
                 max_reflectivity=PipelineConfig.max_reflectivity,
                 reflectivity_threshold_frac=PipelineConfig.reflectivity_threshold_frac,
                 pillar_dx_m=PipelineConfig.pillar_dx_m,
                 pillar_dy_m=PipelineConfig.pillar_dy_m,
                 ground_clearance_min_m=PipelineConfig.ground_clearance_min_m,
                 label_correction_enabled=PipelineConfig.label_correction_enabled,
                 ground_cell_m=PipelineConfig.ground_cell_m,
                 ground_tol_m=PipelineConfig.ground_tol_m,
                 cluster_eps_m=PipelineConfig.cluster_eps_m,
                 cluster_min_pts=PipelineConfig.cluster_min_pts,
                 sigma_min_m=PipelineConfig.sigma_min_m,
                 isolated_stage_enabled=PipelineConfig.isolated_stage_enabled,
                 second_stage_memory_save_enabled=PipelineConfig.second_stage_memory_save_enabled,
                 history_ttl_steps=PipelineConfig.history_ttl_steps,
                 grid_extent_m=PipelineConfig.grid_extent_m,
                 grid_dx_m=PipelineConfig.grid_dx_m,
                 grid_dy_m=PipelineConfig.grid_dy_m,
                 box_margin_m=PipelineConfig.box_margin_m,
                 detector_box_margin_m=PipelineConfig.detector_box_margin_m,
                 ghost_conf_thresh=PipelineConfig.ghost_conf_thresh,
                 select_confident_boxes=PipelineConfig.select_confident_boxes):
        self.sphere_radius_m = sphere_radius_m
        self.max_reflectivity = max_reflectivity
        self.reflectivity_threshold_frac = reflectivity_threshold_frac
        self.pillar_dx_m = pillar_dx_m
        self.pillar_dy_m = pillar_dy_m
        self.ground_clearance_min_m = ground_clearance_min_m
        self.label_correction_enabled = label_correction_enabled
        self.ground_cell_m = ground_cell_m
        self.ground_tol_m = ground_tol_m
        self.cluster_eps_m = cluster_eps_m
        self.cluster_min_pts = cluster_min_pts
        self.sigma_min_m = sigma_min_m
        self.isolated_stage_enabled = isolated_stage_enabled
        self.second_stage_memory_save_enabled = second_stage_memory_save_enabled
        self.history_ttl_steps = history_ttl_steps
        self.grid_extent_m = grid_extent_m
        self.grid_dx_m = grid_dx_m
        self.grid_dy_m = grid_dy_m
        self.box_margin_m = box_margin_m
        self.detector_box_margin_m = detector_box_margin_m
        self.ghost_conf_thresh = ghost_conf_thresh
        self.select_confident_boxes = select_confident_boxes

    @classmethod
    def from_config(cls, cfg: PipelineConfig) -> "GasExhaustDetector":
        return cls(**cfg.to_dict())

    def fit(self, X=None, y=None):
        """Validate parameters and start a new sequence. ``X``/``y`` are ignored."""
        self.config_ = PipelineConfig(**self.get_params())
        self.state_ = SequenceState(HistorySet(self.config_.history_ttl_steps))
        return self

    reset = fit

    @property
    def history_(self) -> HistorySet:
        check_is_fitted(self, "state_")
        return self.state_.history

    def process_frame(self, scan, boxes=(), pose=None, road_mask=None, keep_grid=False):
        if not hasattr(self, "state_"):
            self.fit()
        last = self.state_.last_t
        scan = check_scan(scan, t=0 if last is None else last + 1)
        boxes = check_boxes(boxes)
        result, self.state_ = process_frame(scan, boxes, pose, self.state_, self.config_,
                                            road_mask, keep_grid)
        return result

    def predict(self, scan, boxes=(), pose=None, road_mask=None):
        """Per-point :class:`SemanticLabel` values for one frame."""
        return self.process_frame(scan, boxes, pose, road_mask).labels

    def fit_predict(self, scans, boxes_per_frame, poses=None):
        """Fresh sequence over all frames; returns the list of label arrays."""
        self.fit()
        poses = poses if poses is not None else [None] * len(scans)
        if not len(scans) == len(boxes_per_frame) == len(poses):
            raise SequenceError("scans, boxes and poses differ in frame count")
        return [self.predict(s, b, p) for s, b, p in zip(scans, boxes_per_frame, poses)]
