"""Detection of condensed vehicle exhaust in LiDAR point clouds."""
from .config import PipelineConfig, load_config
from .ground import FilteredCloud, GroundModel, clearance, estimate_ground, filter_cloud
from .memory import Detection, HistorySet, LikelihoodGrid, build_grid, query
from .metrics import ConfusionCounts, confusion
from .pipeline import FrameResult, GasExhaustDetector, detect_ghosts, process_frame, run_sequence
from .proximity import detect_proximity, label_correction, pillarize, sphere_candidates
from .scan_model import (BoundingBox3D, BoxClass, Point, Pose, Scan, SemanticLabel, back_point,
                         enlarge_box, load_scan, point_in_box, points_in_box)

__version__ = "0.1.0"
