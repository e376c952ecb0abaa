import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exhaustdet.scan_model import (BoundingBox3D, BoxClass, Pose, Scan, ScanFormatError,
                                   back_point, enlarge_box, load_boxes, load_labels, load_poses,
                                   load_scan, point_in_box, points_in_box, save_boxes,
                                   save_labels, save_poses, save_scan)


def test_load_binary_records(tmp_path):
    path = tmp_path / "a.bin"
    path.write_bytes(struct.pack("<8f", 1, 2, 3, 0.5, 4, 5, 6, 0.1))
    scan = load_scan(path)
    assert len(scan) == 2
    np.testing.assert_array_equal(scan.points[:, :3], [[1, 2, 3], [4, 5, 6]])
    assert scan.points[0, 3] == np.float32(0.5)
    assert scan.points[1, 3] == np.float32(0.1)


def test_load_empty_file(tmp_path):
    path = tmp_path / "e.bin"
    path.write_bytes(b"")
    assert len(load_scan(path)) == 0


def test_truncated_record(tmp_path):
    path = tmp_path / "t.bin"
    path.write_bytes(b"\0" * 24)
    with pytest.raises(ScanFormatError, match="truncated record"):
        load_scan(path)


def test_non_finite_rejected(tmp_path):
    path = tmp_path / "n.bin"
    path.write_bytes(struct.pack("<4f", 1, float("nan"), 0, 0))
    with pytest.raises(ScanFormatError):
        load_scan(path)


def test_missing_file(tmp_path):
    with pytest.raises(ScanFormatError):
        load_scan(tmp_path / "nope.bin")


def test_csv(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("x,y,z,r\n1,2,3,0.5\n4,5,6,0.1\n")
    scan = load_scan(path, format="csv")
    np.testing.assert_allclose(scan.points, [[1, 2, 3, 0.5], [4, 5, 6, 0.1]])
    bad = tmp_path / "b.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(ScanFormatError):
        load_scan(bad, format="csv")


def test_binary_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(500, 4)).astype(np.float32)
    save_scan(Scan(0, pts), tmp_path / "s.bin")
    back = load_scan(tmp_path / "s.bin")
    assert back.points.tobytes() == pts.astype("<f4").tobytes()


def test_scan_label_length_checked():
    with pytest.raises(ValueError):
        Scan(0, np.zeros((3, 4)), gt_labels=np.zeros(2))


def test_labels_roundtrip(tmp_path):
    lab = np.array([0, 1, 2, 1], dtype=np.uint8)
    save_labels(lab, tmp_path / "a.label")
    assert (tmp_path / "a.label").stat().st_size == 4
    np.testing.assert_array_equal(load_labels(tmp_path / "a.label", 4), lab)
    with pytest.raises(ScanFormatError):
        load_labels(tmp_path / "a.label", 5)


def test_point_in_box_examples():
    box = BoundingBox3D(0, 0, 0, 4, 2, 2, 0.0)
    assert point_in_box((0, 0, 0), box)
    assert not point_in_box((2.01, 0, 0), box)
    assert point_in_box((2.0, 1.0, 1.0), box)  # corner counts as inside
    rotated = BoundingBox3D(0, 0, 0, 4, 2, 2, math.pi / 2)
    assert point_in_box((0.9, 0, 0), rotated)
    assert not point_in_box((1.1, 0, 0), rotated)
    assert point_in_box((0, 1.9, 0), rotated)


def test_yaw_normalised():
    assert BoundingBox3D(0, 0, 0, 1, 1, 1, -math.pi).yaw == pytest.approx(math.pi)
    assert BoundingBox3D(0, 0, 0, 1, 1, 1, 3 * math.pi).yaw == pytest.approx(math.pi)
    with pytest.raises(ValueError):
        BoundingBox3D(0, 0, 0, 0, 1, 1)


def _rotz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


finite = st.floats(-20, 20, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(px=finite, py=finite, pz=st.floats(-3, 3), cx=finite, cy=finite,
       yaw=st.floats(-math.pi, math.pi), a=st.floats(-math.pi, math.pi),
       tx=finite, ty=finite, tz=st.floats(-5, 5))
def test_point_in_box_rigid_invariance(px, py, pz, cx, cy, yaw, a, tx, ty, tz):
    box = BoundingBox3D(cx, cy, 0.5, 4.0, 2.0, 1.5, yaw)
    p = np.array([px, py, pz])
    # stay clear of faces so rounding cannot flip the answer
    d = p - box.center
    c, s = math.cos(yaw), math.sin(yaw)
    local = np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]])
    margin = np.abs(np.abs(local) - np.array([2.0, 1.0, 0.75]))
    if margin.min() < 1e-6:
        return
    R, t = _rotz(a), np.array([tx, ty, tz])
    moved = BoundingBox3D(*(R @ box.center + t), 4.0, 2.0, 1.5, yaw + a)
    assert point_in_box(p, box) == point_in_box(R @ p + t, moved)


def test_enlarge_box():
    b = BoundingBox3D(1, 2, 0.75, 4, 2, 1.5, 0.3, BoxClass.VEHICLE, 0.9)
    e = enlarge_box(b, 0.5)
    assert e.dims == (4.5, 2.5, 2.0)
    assert (e.cx, e.cy, e.cz, e.yaw, e.cls, e.confidence) == (b.cx, b.cy, b.cz, b.yaw, b.cls, 0.9)
    assert enlarge_box(b, 0) == b
    assert enlarge_box(BoundingBox3D(0, 0, 0, 1, 1, 1), 2).dims == (3, 3, 3)
    with pytest.raises(ValueError):
        enlarge_box(b, -0.1)


@pytest.mark.parametrize("center,length,yaw,expected", [
    ((10, 0, 0.75), 4, 0.0, (8, 0, 0.75)),
    ((0, 0, 1), 4, math.pi / 2, (0, -2, 1)),
    ((5, 5, 0.5), 2, math.pi, (6, 5, 0.5)),
])
def test_back_point(center, length, yaw, expected):
    b = BoundingBox3D(*center, length, 1.8, 1.5, yaw)
    np.testing.assert_allclose(back_point(b), expected, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(cx=finite, cy=finite, cz=st.floats(0, 2), length=st.floats(0.5, 10),
       width=st.floats(0.5, 3), yaw=st.floats(-math.pi, math.pi))
def test_back_point_on_rear_face(cx, cy, cz, length, width, yaw):
    b = BoundingBox3D(cx, cy, cz, length, width, 1.5, yaw)
    bp = back_point(b)
    # the rear midpoint sits on the face; allow for rounding in the rotation
    assert point_in_box(bp, enlarge_box(b, 1e-9))
    heading = np.array([math.cos(b.yaw), math.sin(b.yaw), 0.0])
    assert not point_in_box(bp - 1e-6 * heading, b)


def test_points_in_box_vectorised_matches_scalar():
    rng = np.random.default_rng(3)
    box = BoundingBox3D(1, -1, 0.5, 3, 2, 1, 0.7)
    pts = rng.uniform(-3, 3, size=(300, 3))
    mask = points_in_box(pts, box)
    assert mask.tolist() == [point_in_box(p, box) for p in pts]


def test_boxes_roundtrip(tmp_path):
    boxes = {0: [BoundingBox3D(1, 2, 0.7, 4, 2, 1.5, 0.1)],
             3: [BoundingBox3D(5, 5, 0.5, 1, 1, 1, 0, BoxClass.OTHER, 0.95)]}
    save_boxes(boxes, tmp_path / "b.jsonl")
    assert load_boxes(tmp_path / "b.jsonl") == boxes
    first = (tmp_path / "b.jsonl").read_text().splitlines()[0]
    assert '"score"' not in first


def test_poses_roundtrip(tmp_path):
    poses = [Pose(), Pose.from_yaw(0.3, 1.0, 2.0, 0.1)]
    save_poses(poses, tmp_path / "p.txt")
    lines = (tmp_path / "p.txt").read_text().splitlines()
    assert all(len(line.split()) == 12 for line in lines)
    back = load_poses(tmp_path / "p.txt")
    for a, b in zip(poses, back):
        np.testing.assert_array_equal(a.matrix, b.matrix)


def test_pose_must_be_rotation():
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        Pose(2 * np.eye(3))
