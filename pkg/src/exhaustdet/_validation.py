"""Input checks shared by the estimator and the CLI."""
import numpy as np
from sklearn.utils import check_array

from .scan_model import BoundingBox3D, Scan, box_from_record


def check_scan(X, t=0) -> Scan:
    """Accept a :class:`Scan` or an ``(N, 4)`` array-like of ``x, y, z, r``."""
    if isinstance(X, Scan):
        return X
    arr = np.asarray(X)
    if arr.size == 0:
        return Scan(t=t, points=np.empty((0, 4)))
    arr = check_array(arr, dtype=np.float64, ensure_all_finite=True)
    if arr.shape[1] != 4:
        raise ValueError(f"expected 4 columns (x, y, z, r), got {arr.shape[1]}")
    if (arr[:, 3] < 0).any():
        raise ValueError("reflectivity must be non-negative")
    return Scan(t=t, points=arr)


def check_boxes(boxes) -> list:
    out = []
    for b in boxes or ():
        if isinstance(b, BoundingBox3D):
            out.append(b)
        elif isinstance(b, dict):
            out.append(box_from_record(b))
        else:
            raise TypeError(f"expected BoundingBox3D or box record, got {type(b).__name__}")
    return out
