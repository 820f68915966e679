"""Frame-level and pixel-level ROC protocols, AUC/EER summaries, CSV export.

Frame-level: a frame is predicted abnormal when its maximum pixel score
reaches the threshold; rates are computed against the frame labels regardless
of location.

Pixel-level: a frame is flagged when any pixel reaches the threshold. A
flagged abnormal frame is a true positive only if the detection covers at
least 40% of its ground-truth abnormal pixels, otherwise it counts as a false
positive; a flagged normal frame is a false positive; an unflagged abnormal
frame is a miss. TPR is over abnormal frames, FPR over normal frames (clipped
to 1, since coverage failures can outnumber the normal frames).
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateCurve,
    DimensionMismatch,
    IoError,
    LengthMismatch,
    MissingMasks,
    ValidationError,
)
from .media_io import GroundTruth
from .tcp import ScoreMapSequence

PIXEL_COVERAGE = 0.4
N_GRID_THRESHOLDS = 256

CSV_HEADER = "threshold,fpr,tpr"


@dataclass
class RocCurve:
    """(threshold, TPR, FPR) triples ordered by ascending threshold."""

    points: np.ndarray
    auc: float
    eer: float

    def fpr_tpr(self) -> np.ndarray:
        return self.points[:, [2, 1]]


def default_thresholds(scores: np.ndarray) -> np.ndarray:
    """256 evenly spaced thresholds plus every distinct score, plus +inf.

    The distinct scores make every achievable operating point appear; the
    +inf threshold realizes the (0, 0) anchor and 0.0 the (1, 1) anchor for
    scores in [0, 1].
    """
    grid = np.linspace(0.0, 1.0, N_GRID_THRESHOLDS)
    return np.unique(np.concatenate([grid, np.unique(scores), [np.inf]]))


def _with_anchor_thresholds(thresholds, scores: np.ndarray) -> np.ndarray:
    """Sorted threshold set with 0 and +inf appended (the (1,1)/(0,0) anchors,
    since scores are non-negative)."""
    if thresholds is None:
        return default_thresholds(scores)
    return np.unique(np.concatenate([np.asarray(thresholds, dtype=np.float64), [0.0, np.inf]]))


def _curve(thresholds: np.ndarray, tpr: np.ndarray, fpr: np.ndarray) -> RocCurve:
    points = np.column_stack([thresholds, tpr, fpr])
    pairs = points[:, [2, 1]]
    return RocCurve(points=points, auc=auc(pairs), eer=eer(pairs))


def frame_level_roc(
    mseg: ScoreMapSequence,
    gt: GroundTruth,
    thresholds: np.ndarray | None = None,
) -> RocCurve:
    """ROC of per-frame detection: max pixel score vs frame label."""
    if mseg.n_frames != gt.n_frames:
        raise LengthMismatch(f"{mseg.n_frames} score frames vs {gt.n_frames} labels")
    scores = mseg.values.max(axis=(1, 2))
    labels = gt.frame_labels
    n_pos = int(labels.sum())
    n_neg = int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateCurve("need both abnormal and normal frames")
    thresholds = _with_anchor_thresholds(thresholds, scores)
    pred = scores[None, :] >= thresholds[:, None]
    tpr = (pred & labels[None, :]).sum(axis=1) / n_pos
    fpr = (pred & ~labels[None, :]).sum(axis=1) / n_neg
    return _curve(thresholds, tpr, fpr)


def classify_pixel_frame(
    frame_scores: np.ndarray,
    gt_mask: np.ndarray | None,
    abnormal: bool,
    threshold: float,
) -> str:
    """Outcome of one frame under the pixel protocol: tp, fp, fn or tn."""
    detection = frame_scores >= threshold
    flagged = bool(detection.any())
    if not abnormal:
        return "fp" if flagged else "tn"
    if not flagged:
        return "fn"
    gt_count = int(gt_mask.sum()) if gt_mask is not None else 0
    covered = int((detection & gt_mask).sum()) if gt_mask is not None else 0
    return "tp" if covered >= PIXEL_COVERAGE * max(gt_count, 1) else "fp"


def pixel_level_roc(
    mseg: ScoreMapSequence,
    gt: GroundTruth,
    thresholds: np.ndarray | None = None,
) -> RocCurve:
    """ROC of localization: detections must cover >= 40% of the GT pixels."""
    if gt.pixel_masks is None:
        raise MissingMasks("pixel-level protocol requires ground-truth masks")
    if mseg.n_frames != gt.n_frames:
        raise LengthMismatch(f"{mseg.n_frames} score frames vs {gt.n_frames} labels")
    if mseg.values.shape[1:] != gt.pixel_masks.shape[1:]:
        raise DimensionMismatch(
            f"score maps {mseg.values.shape[1:]} vs masks {gt.pixel_masks.shape[1:]}; "
            "pixel evaluation runs at frame resolution"
        )
    labels = gt.frame_labels
    n_pos = int(labels.sum())
    n_neg = int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateCurve("need both abnormal and normal frames")

    thresholds = _with_anchor_thresholds(thresholds, mseg.values.max(axis=(1, 2)))

    tp = np.zeros(len(thresholds))
    fp = np.zeros(len(thresholds))
    for t in range(mseg.n_frames):
        detections = mseg.values[t][None, :, :] >= thresholds[:, None, None]
        flagged = detections.any(axis=(1, 2))
        if labels[t]:
            mask = gt.pixel_masks[t]
            covered = (detections & mask[None, :, :]).sum(axis=(1, 2))
            hit = covered >= PIXEL_COVERAGE * max(int(mask.sum()), 1)
            tp += flagged & hit
            fp += flagged & ~hit
        else:
            fp += flagged
    # TPR is monotone in the threshold (a shrinking detection can only lose
    # coverage) but FPR is not: flagged-yet-coverage-failing abnormal frames
    # surface at high thresholds. The sweep is reported as-is; the AUC sorts
    # by FPR before the trapezoid, per the summary definition.
    return _curve(thresholds, tp / n_pos, np.minimum(fp / n_neg, 1.0))


# ---------------------------------------------------------------------------
# Curve summaries


def _as_pairs(points) -> np.ndarray:
    pairs = np.asarray(points, dtype=np.float64)
    if pairs.ndim != 2 or pairs.shape[1] != 2 or pairs.shape[0] < 2:
        raise DegenerateCurve(f"need at least two (fpr, tpr) points, got shape {pairs.shape}")
    has_origin = np.any((pairs[:, 0] == 0.0) & (pairs[:, 1] == 0.0))
    has_one = np.any((pairs[:, 0] == 1.0) & (pairs[:, 1] == 1.0))
    if not (has_origin and has_one):
        raise DegenerateCurve("curve must include the (0,0) and (1,1) anchors")
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order]


def auc(points) -> float:
    """Trapezoidal area under (fpr, tpr) points sorted by fpr."""
    pairs = _as_pairs(points)
    x, y = pairs[:, 0], pairs[:, 1]
    return float(np.sum(np.diff(x) * (y[:-1] + y[1:]) / 2.0))


def eer(points) -> float:
    """Rate at the interpolated crossing of TPR = 1 - FPR.

    Along the curve g = tpr + fpr - 1 is non-decreasing, from -1 at (0,0) to
    +1 at (1,1), so the crossing exists and is unique up to a plateau.
    """
    pairs = _as_pairs(points)
    g = pairs[:, 1] + pairs[:, 0] - 1.0
    idx = int(np.argmax(g >= 0.0))
    if g[idx] == 0.0:
        return float(pairs[idx, 0])
    x1, y1 = pairs[idx - 1]
    x2, y2 = pairs[idx]
    denom = (y2 - y1) + (x2 - x1)
    frac = (1.0 - x1 - y1) / denom
    return float(x1 + frac * (x2 - x1))


# ---------------------------------------------------------------------------
# Export


def export_results(curve: RocCurve, path, svg_path=None):
    """Write the curve as CSV (header threshold,fpr,tpr; footer auc and eer rows)."""
    if len(curve.points) == 0:
        raise DegenerateCurve("cannot export an empty curve")
    lines = [CSV_HEADER]
    for threshold, tpr, fpr in curve.points:
        lines.append(f"{threshold:.9g},{fpr:.9g},{tpr:.9g}")
    lines.append(f"auc,{curve.auc:.9g}")
    lines.append(f"eer,{curve.eer:.9g}")
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
    if svg_path is not None:
        write_roc_svg(curve, svg_path)


def read_results(path) -> RocCurve:
    """Re-import an exported CSV."""
    try:
        lines = Path(path).read_text(encoding="ascii").splitlines()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if not lines or lines[0] != CSV_HEADER:
        raise ValidationError(f"{path}: missing {CSV_HEADER!r} header")
    points, auc_value, eer_value = [], None, None
    for line in lines[1:]:
        key, *rest = line.split(",")
        if key == "auc":
            auc_value = float(rest[0])
        elif key == "eer":
            eer_value = float(rest[0])
        else:
            threshold, fpr, tpr = float(key), float(rest[0]), float(rest[1])
            points.append((threshold, tpr, fpr))
    if auc_value is None or eer_value is None or not points:
        raise ValidationError(f"{path}: incomplete results file")
    return RocCurve(points=np.array(points), auc=auc_value, eer=eer_value)


def write_roc_svg(curve: RocCurve, path, size: int = 320):
    """Minimal standalone ROC polyline plot."""
    pad = 20
    span = size - 2 * pad
    pairs = curve.fpr_tpr()
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    pts = " ".join(
        f"{pad + fpr * span:.1f},{pad + (1.0 - tpr) * span:.1f}" for fpr, tpr in pairs[order]
    )
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">\n'
        f'<rect width="{size}" height="{size}" fill="white"/>\n'
        f'<line x1="{pad}" y1="{size - pad}" x2="{size - pad}" y2="{pad}" '
        f'stroke="#bbb" stroke-dasharray="4"/>\n'
        f'<polyline points="{pts}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>\n'
        f'<text x="{pad}" y="{pad - 6}" font-size="11">AUC {curve.auc:.4f}  '
        f"EER {curve.eer:.4f}</text>\n"
        "</svg>\n"
    )
    try:
        Path(path).write_text(svg, encoding="ascii")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
