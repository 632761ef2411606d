"""Mask-restricted segmentation metrics for GM/WM/CSF probability maps.

Continuous metrics (Pearson, Spearman, MSE) compare probabilities inside the
brain mask; discrete ones (Dice, Jaccard, Hausdorff) compare binary maps taken
from the channel argmax.  A metric that is undefined for its inputs is stored
as ``None`` and written as an empty CSV field.
"""

from __future__ import annotations

import io
import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, stats

from .errors import DataError, UndefinedMetricError

TISSUES = ("GM", "WM", "CSF")
METRICS = ("dice", "jaccard", "hausdorff", "pearson", "spearman", "mse")
CSV_COLUMNS = ("tissue",) + METRICS + ("mask_voxels",)


def _values(v) -> np.ndarray:
    return np.asarray(getattr(v, "values", v))


def brain_mask(reference) -> np.ndarray:
    """Voxels where the reference tissue probabilities sum to more than zero."""
    mask = _values(reference).sum(axis=0) > 0
    if not mask.any():
        raise DataError("brain_mask: reference is all zero, metrics are undefined")
    return mask


def argmax_map(prob) -> np.ndarray:
    """Per-voxel tissue label; ties go to the lowest channel index."""
    return np.argmax(_values(prob), axis=0)


def binary_maps(labels: np.ndarray, classes: int = 3) -> np.ndarray:
    return np.stack([labels == k for k in range(classes)])


def dice(a: np.ndarray, b: np.ndarray) -> float:
    a, b = a.astype(bool), b.astype(bool)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        raise UndefinedMetricError("dice: both sets are empty")
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def jaccard(a: np.ndarray, b: np.ndarray) -> float:
    a, b = a.astype(bool), b.astype(bool)
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        raise UndefinedMetricError("jaccard: both sets are empty")
    return int(np.logical_and(a, b).sum()) / union


def _directed_hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    # exact Euclidean distance from every voxel to the nearest voxel of b
    dist = ndimage.distance_transform_edt(~b)
    return float(dist[a].max())


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Hausdorff distance between voxel sets, in voxel units."""
    a, b = a.astype(bool), b.astype(bool)
    if not a.any() or not b.any():
        raise UndefinedMetricError("hausdorff: empty voxel set")
    return max(_directed_hausdorff(a, b), _directed_hausdorff(b, a))


def _masked(x, y, mask):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        x, y = x[mask], y[mask]
    else:
        x, y = x.ravel(), y.ravel()
    if x.size == 0:
        raise UndefinedMetricError("empty mask")
    return x, y


def _correlation(x: np.ndarray, y: np.ndarray, what: str) -> float:
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = float(np.dot(xc, xc)), float(np.dot(yc, yc))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedMetricError(f"{what}: constant input vector")
    r = float(np.dot(xc, yc)) / np.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def pearson(x, y, mask=None) -> float:
    return _correlation(*_masked(x, y, mask), "pearson")


def spearman(x, y, mask=None) -> float:
    """Pearson correlation of average ranks."""
    x, y = _masked(x, y, mask)
    return _correlation(stats.rankdata(x), stats.rankdata(y), "spearman")


def mse(x, y, mask=None) -> float:
    x, y = _masked(x, y, mask)
    d = x - y
    return float(np.dot(d, d) / d.size)


@dataclass
class MetricsRecord:
    values: dict[str, dict[str, float | None]] = field(default_factory=dict)
    mask_voxel_count: int = 0

    def get(self, tissue: str, metric: str) -> float | None:
        return self.values[tissue][metric]

    def is_perfect(self, tol: float = 1e-12) -> bool:
        ideal = {"dice": 1.0, "jaccard": 1.0, "hausdorff": 0.0,
                 "pearson": 1.0, "spearman": 1.0, "mse": 0.0}
        return all(
            self.values[t][m] is not None and abs(self.values[t][m] - ideal[m]) <= tol
            for t in TISSUES for m in METRICS
        )

    def rows(self) -> list[list[str]]:
        return [[t] + [format_value(self.values[t][m]) for m in METRICS] + [str(self.mask_voxel_count)]
                for t in TISSUES]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        w.writerows(self.rows())
        return buf.getvalue()


def format_value(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def _guard(fn, *args) -> float | None:
    try:
        return fn(*args)
    except UndefinedMetricError:
        return None


def compare(pred, ref, mask: np.ndarray) -> MetricsRecord:
    """All six metrics per tissue for two ``[3, ...]`` probability maps under ``mask``."""
    p, r = _values(pred), _values(ref)
    if p.shape != r.shape or p.shape[0] != 3:
        raise DataError(f"compare: incompatible maps {p.shape} vs {r.shape}")
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise DataError("compare: empty mask")
    pred_bin = binary_maps(argmax_map(p)) & mask
    ref_bin = binary_maps(argmax_map(r)) & mask
    out: dict[str, dict[str, float | None]] = {}
    for k, tissue in enumerate(TISSUES):
        a, b = pred_bin[k], ref_bin[k]
        out[tissue] = {
            "dice": _guard(dice, a, b),
            "jaccard": _guard(jaccard, a, b),
            "hausdorff": _guard(hausdorff, a, b),
            "pearson": _guard(pearson, p[k], r[k], mask),
            "spearman": _guard(spearman, p[k], r[k], mask),
            "mse": _guard(mse, p[k], r[k], mask),
        }
    return MetricsRecord(out, int(mask.sum()))


def evaluate_pair(pred, ref) -> MetricsRecord:
    """Prediction vs reference, restricted to the reference's brain mask."""
    return compare(pred, ref, brain_mask(ref))


def reliability_pair(pred_t1, pred_t2, mask) -> MetricsRecord:
    """Agreement between segmentations of two repeated scans under a shared mask."""
    return compare(pred_t1, pred_t2, mask)


def shared_head_mask(scan_t1, scan_t2) -> np.ndarray:
    """Intersection of the nonzero supports of two skull-stripped scans."""
    a = np.any(_values(scan_t1) != 0, axis=0)
    b = np.any(_values(scan_t2) != 0, axis=0)
    return a & b
