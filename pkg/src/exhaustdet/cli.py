"""Command line: ``detect``, ``ghost``, ``eval`` and ``synth``.

Exit codes: 0 success, 2 usage or manifest problems, 3 I/O failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from . import metrics, synth
from .config import ConfigError, PipelineConfig, config_from_mapping, load_config, parse_overrides
from .memory import write_pgm
from .pipeline import SequenceError, run_sequence
from .scan_model import (ScanFormatError, SemanticLabel, load_boxes, load_labels, load_poses,
                         load_scan, save_labels)

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 2, 3

log = logging.getLogger("exhaustdet")

_FRAME_RE = re.compile(r"^(\d{6})\.(bin|label)$")


class ManifestError(Exception):
    pass


@dataclass
class RunManifest:
    root: str
    frames: list
    boxes_path: str
    poses_path: str | None
    gt_dir: str | None

    def scan_path(self, k):
        return os.path.join(self.root, "scans", f"{k:06d}.bin")


def _frame_files(directory, ext):
    out = {}
    for name in os.listdir(directory):
        m = _FRAME_RE.match(name)
        if m and m.group(2) == ext:
            out[int(m.group(1))] = os.path.join(directory, name)
    return out


def read_manifest(root) -> RunManifest:
    """Validate a sequence directory (``scans/``, ``boxes.jsonl``, optional poses and labels)."""
    scans_dir = os.path.join(root, "scans")
    if not os.path.isdir(scans_dir):
        raise ManifestError(f"{root}: missing scans/ directory")
    scans = _frame_files(scans_dir, "bin")
    boxes_path = os.path.join(root, "boxes.jsonl")
    if not os.path.isfile(boxes_path):
        raise ManifestError(f"{root}: missing boxes.jsonl")
    poses_path = os.path.join(root, "poses.txt")
    poses_path = poses_path if os.path.isfile(poses_path) else None
    expected = max(scans) + 1 if scans else 0
    if poses_path:
        with open(poses_path) as fh:
            expected = max(expected, sum(1 for line in fh if line.strip()))
    try:
        box_frames = load_boxes(boxes_path)
    except ScanFormatError as e:
        raise ManifestError(str(e)) from e
    if box_frames:
        expected = max(expected, max(box_frames) + 1)
    missing = [k for k in range(expected) if k not in scans]
    if missing:
        raise ManifestError(f"{root}: missing scan for frame {missing[0]} "
                            f"(scans/{missing[0]:06d}.bin)")
    gt_dir = os.path.join(root, "labels")
    return RunManifest(root, list(range(expected)), boxes_path, poses_path,
                       gt_dir if os.path.isdir(gt_dir) else None)


def _label_dir(path):
    sub = os.path.join(path, "labels")
    return sub if os.path.isdir(sub) else path


def _detect_one(root, out, cfg: PipelineConfig, dump_grid=False, road_mask_dir=None):
    man = read_manifest(root)
    boxes = load_boxes(man.boxes_path)
    poses = load_poses(man.poses_path) if man.poses_path else None
    if poses is not None and len(poses) != len(man.frames):
        raise ManifestError(f"{root}: {len(poses)} poses for {len(man.frames)} frames")
    os.makedirs(os.path.join(out, "labels"), exist_ok=True)
    if dump_grid:
        os.makedirs(os.path.join(out, "grid"), exist_ok=True)

    def scans():
        for k in man.frames:
            try:
                yield load_scan(man.scan_path(k), t=k)
            except ScanFormatError as e:
                raise ScanFormatError(f"frame {k}: {e}") from e

    def masks():
        for k in man.frames:
            path = os.path.join(road_mask_dir, f"{k:06d}.label")
            if not os.path.isfile(path):
                raise ManifestError(f"road mask missing for frame {k}: {path}")
            yield load_labels(path) == SemanticLabel.ROAD

    ghost_fh = open(os.path.join(out, "ghosts.jsonl"), "w")
    timing_fh = open(os.path.join(out, "timing.jsonl"), "w")

    def sink(scan, result):
        save_labels(result.labels, os.path.join(out, "labels", f"{scan.t:06d}.label"))
        for (i, is_ghost), b in zip(result.ghosts, boxes.get(scan.t, [])):
            ghost_fh.write(json.dumps({"frame": scan.t, "box": i, "ghost": bool(is_ghost),
                                       "score": b.confidence}) + "\n")
        timing_fh.write(json.dumps({"frame": scan.t, "seconds": round(result.counts["seconds"], 6),
                                    "points": result.counts["points"]}) + "\n")
        if dump_grid and result.grid is not None:
            write_pgm(result.grid, os.path.join(out, "grid", f"{scan.t:06d}.pgm"))

    with ghost_fh, timing_fh:
        summary = run_sequence(scans(), (boxes.get(k, []) for k in man.frames), poses, cfg,
                               [sink], masks() if road_mask_dir else None, keep_grid=dump_grid)
    summary["sequence"] = os.path.basename(os.path.normpath(root))
    return summary


def _run_detect(roots, out, cfg, args):
    if len(roots) == 1:
        jobs = [(roots[0], out)]
    else:
        jobs = [(r, os.path.join(out, os.path.basename(os.path.normpath(r)))) for r in roots]
    kwargs = dict(cfg=cfg, dump_grid=args.dump_grid, road_mask_dir=args.road_mask)
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            futs = [pool.submit(_detect_one, r, o, **kwargs) for r, o in jobs]
            return [f.result() for f in futs]
    return [_detect_one(r, o, **kwargs) for r, o in jobs]


def _build_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    return config_from_mapping(parse_overrides(args.set), cfg)


def cmd_detect(args, ghost_mode=False) -> int:
    cfg = _build_config(args)
    if ghost_mode:
        cfg = cfg.replace(select_confident_boxes=True)
    summaries = _run_detect(args.sequences, args.out, cfg, args)
    for s in summaries:
        print(f"{s['sequence']}: {s['frames']} frames, {s['gas']} gas points "
              f"({s['proximity']} proximity, {s['isolated']} isolated), "
              f"{s['ghosts']} ghost flags, {s['seconds']:.2f} s")
    if ghost_mode:
        for s in summaries:
            out = args.out if len(args.sequences) == 1 else os.path.join(args.out, s["sequence"])
            with open(os.path.join(out, "ghosts.jsonl")) as fh:
                for line in fh:
                    rec = json.loads(line)
                    if rec["ghost"]:
                        print(f"ghost: sequence {s['sequence']} frame {rec['frame']} "
                              f"box {rec['box']} score {rec['score']}")
    return EXIT_OK


def evaluate_dirs(pred_dir, gt_dir, ignore_road=True) -> metrics.ConfusionCounts:
    pred = _frame_files(_label_dir(pred_dir), "label")
    gt = _frame_files(_label_dir(gt_dir), "label")
    if set(pred) != set(gt):
        only_p = sorted(set(pred) - set(gt))
        only_g = sorted(set(gt) - set(pred))
        raise ManifestError(f"frame sets differ: {len(only_p)} only in predictions "
                            f"{only_p[:5]}, {len(only_g)} only in ground truth {only_g[:5]}")
    total = metrics.ConfusionCounts()
    for k in sorted(gt):
        g = load_labels(gt[k])
        p = load_labels(pred[k], len(g))
        total = total + metrics.confusion(p, g, ignore_road)
    return total


def cmd_eval(args) -> int:
    counts = evaluate_dirs(args.pred, args.gt, ignore_road=not args.keep_road)
    name = args.name or os.path.basename(os.path.normpath(args.gt))
    print(metrics.format_table([(name, counts)]))
    if args.jsonl:
        rec = {"sequence": name, "tp": counts.tp, "fp": counts.fp, "fn": counts.fn,
               "tn": counts.tn, **metrics.summary(counts)}
        with open(args.jsonl, "a") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.spec:
        import yaml
        with open(args.spec) as fh:
            spec = synth.ScenarioSpec.from_dict(yaml.safe_load(fh) or {})
        if args.seed is not None:
            spec.seed = args.seed
        if args.frames is not None:
            spec = synth.with_frames(spec, args.frames)
    else:
        if args.preset not in synth.PRESETS:
            print(f"error: unknown preset {args.preset!r}; valid presets: "
                  f"{', '.join(synth.PRESETS)}", file=sys.stderr)
            return EXIT_USAGE
        spec = synth.preset(args.preset, seed=args.seed or 0,
                            frames=100 if args.frames is None else args.frames)
    if spec.frames < 0:
        print("error: --frames must be >= 0", file=sys.stderr)
        return EXIT_USAGE
    seq = synth.generate(spec, args.out)
    n_gas = sum(int((s.gt_labels == SemanticLabel.GAS).sum()) for s in seq.scans)
    print(f"wrote {spec.frames} frames to {args.out} ({n_gas} gas points)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exhaustdet",
                                     description="Vehicle exhaust detection in LiDAR scans")
    sub = parser.add_subparsers(dest="command", required=True)

    def detect_args(p):
        p.add_argument("sequences", nargs="+", help="sequence directories")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", help="flat YAML/JSON file of pipeline keys")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--road-mask", metavar="DIR",
                       help="directory of NNNNNN.label files (2 = road) replacing ground estimation")
        p.add_argument("--dump-grid", action="store_true", help="write the likelihood grid as PGM")
        p.add_argument("--jobs", type=int, default=1, help="parallel sequences")

    detect_args(sub.add_parser("detect", help="label gas exhaust points"))
    detect_args(sub.add_parser("ghost", help="detect with ghost flagging on confident detector boxes"))

    p = sub.add_parser("eval", help="score predicted labels against ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--jsonl", help="append a machine-readable record to this file")
    p.add_argument("--name", help="row name (default: ground-truth directory name)")
    p.add_argument("--keep-road", action="store_true", help="do not exclude ground-truth road points")

    p = sub.add_parser("synth", help="generate a synthetic labelled sequence")
    p.add_argument("--preset", default="idle", help=f"one of: {', '.join(synth.PRESETS)}")
    p.add_argument("--spec", help="scenario document (YAML/JSON) instead of a preset")
    p.add_argument("--seed", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("EXHAUST_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        if args.command in ("detect", "ghost"):
            return cmd_detect(args, ghost_mode=args.command == "ghost")
        if args.command == "eval":
            return cmd_eval(args)
        return cmd_synth(args)
    except (ManifestError, ConfigError, SequenceError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ScanFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
