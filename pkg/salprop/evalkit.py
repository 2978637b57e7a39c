# salprop/evalkit.py
"""
Proposal recall evaluation.

Ground truth comes from VOC-style XML files or a plain CSV. Recall is pooled
over every ground-truth box of every image: a box counts as found at N when
one of the top-N proposals of its image overlaps it with IoU >= threshold.
From the recall-vs-N curve come the AUC (percent), the smallest N reaching
75% recall and the recall at max_n.
"""

import logging
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .boxes import Window, iou, iou_matrix
from .common import (
    IdMismatch,
    MissingField,
    NoGroundTruth,
    ParseError,
    atomic_write_text,
    read_csv_rows,
    render_csv,
)

logger = logging.getLogger(__name__)

NOT_REACHED = "-"
GT_HEADER = ["image_id", "x", "y", "w", "h"]
CURVE_HEADER = ["iou", "n", "recall"]
SUMMARY_HEADER = ["iou", "auc", "n_at_75", "recall_at_max", "time_s"]
PLOT_HEADER = ["series", "iou", "n", "recall"]

__all__ = [
    "GroundTruthBox",
    "EvalReport",
    "iou",
    "parse_voc_xml",
    "read_gt_csv",
    "load_annotations",
    "recall_curve",
    "recall_at_n",
    "auc",
    "n_at_recall",
    "format_n",
    "evaluate",
    "format_summary_row",
    "write_report_csv",
    "read_report_csv",
    "write_curves_csv",
    "sweep_nms",
]


@dataclass(frozen=True)
class GroundTruthBox:
    image_id: str
    x: int
    y: int
    w: int
    h: int
    class_name: str = ""

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ParseError(f"{self.image_id}: ground-truth box with size {self.w}x{self.h}")

    @property
    def window(self) -> Window:
        return Window(self.x, self.y, self.w, self.h)


@dataclass
class EvalReport:
    """Recall curves and derived metrics, keyed by IoU threshold."""

    max_n: int
    n_gt: int = 0
    curves: Dict[float, np.ndarray] = field(default_factory=dict)
    auc: Dict[float, float] = field(default_factory=dict)
    n_at_75: Dict[float, Optional[int]] = field(default_factory=dict)
    recall_at_max: Dict[float, float] = field(default_factory=dict)
    # mean detect seconds per image; None when the proposals carry no timing
    seconds_per_image: Optional[float] = None

    @property
    def thresholds(self) -> List[float]:
        return list(self.curves)


# ---------------------------------------------------------------- ground truth
def _child_int(node, tag: str, path) -> int:
    child = node.find(tag)
    if child is None or child.text is None or not child.text.strip():
        raise MissingField(f"{path}: object without <{tag}>")
    try:
        return int(round(float(child.text)))
    except ValueError as e:
        raise ParseError(f"{path}: <{tag}> is not a number ({child.text!r})") from e


def parse_voc_xml(path: os.PathLike) -> List[GroundTruthBox]:
    """
    Boxes of one VOC annotation file, skipping objects marked difficult.

    VOC corners are 1-based and inclusive, so w = xmax - xmin + 1. The image id
    is the file stem.

    Raises
    ------
    ParseError
        On an empty or malformed XML document.
    MissingField
        When an object lacks its bndbox or one of the corner fields.
    """
    path = Path(path)
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as e:
        raise ParseError(f"{path}: malformed annotation ({e})") from e
    boxes = []
    for obj in root.findall("object"):
        difficult = obj.find("difficult")
        if difficult is not None and (difficult.text or "0").strip() not in ("", "0"):
            continue
        bnd = obj.find("bndbox")
        if bnd is None:
            raise MissingField(f"{path}: object without <bndbox>")
        xmin, ymin, xmax, ymax = (_child_int(bnd, t, path) for t in ("xmin", "ymin", "xmax", "ymax"))
        name = obj.find("name")
        boxes.append(
            GroundTruthBox(
                image_id=path.stem,
                x=xmin,
                y=ymin,
                w=xmax - xmin + 1,
                h=ymax - ymin + 1,
                class_name=(name.text or "").strip() if name is not None else "",
            )
        )
    return boxes


def read_gt_csv(path: os.PathLike) -> Dict[str, List[GroundTruthBox]]:
    """Boxes from a CSV with header image_id,x,y,w,h (an optional class_name column is kept)."""
    path = Path(path)
    rows = read_csv_rows(path)
    if not rows or [c.strip() for c in rows[0][:5]] != GT_HEADER:
        raise ParseError(f"{path}: expected header {','.join(GT_HEADER)}")
    out: Dict[str, List[GroundTruthBox]] = {}
    for n, row in enumerate(rows[1:], start=2):
        if len(row) < 5:
            raise MissingField(f"{path}: row {n} has {len(row)} fields")
        try:
            x, y, w, h = (int(v) for v in row[1:5])
        except ValueError as e:
            raise ParseError(f"{path}: row {n}: {e}") from e
        box = GroundTruthBox(row[0].strip(), x, y, w, h, row[5].strip() if len(row) > 5 else "")
        out.setdefault(box.image_id, []).append(box)
    return out


def load_annotations(directory: os.PathLike) -> Dict[str, List[GroundTruthBox]]:
    """All *.xml and *.csv annotations of a directory, keyed by image id."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"annotation directory not found: {directory}")
    out: Dict[str, List[GroundTruthBox]] = {}
    for path in sorted(directory.glob("*.xml")):
        out.setdefault(path.stem, []).extend(parse_voc_xml(path))
    for path in sorted(directory.glob("*.csv")):
        for image_id, boxes in read_gt_csv(path).items():
            out.setdefault(image_id, []).extend(boxes)
    return out


# ---------------------------------------------------------------- metrics
def _as_boxes(items) -> np.ndarray:
    """(n, 4) array from a ProposalSet, Proposals, Windows or ground-truth boxes."""
    if hasattr(items, "boxes") and callable(items.boxes):
        return items.boxes()
    rows = []
    for it in items:
        win = getattr(it, "window", it)
        rows.append(win.as_tuple() if hasattr(win, "as_tuple") else tuple(win))
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def first_match_ranks(proposals, gts, iou_thr: float) -> np.ndarray:
    """1-based rank of the first proposal covering each ground-truth box (0 if none)."""
    gt = _as_boxes(gts)
    props = _as_boxes(proposals)
    ranks = np.zeros(len(gt), dtype=np.int64)
    if len(gt) == 0 or len(props) == 0:
        return ranks
    hit = iou_matrix(gt, props) >= iou_thr
    found = hit.any(axis=1)
    ranks[found] = hit[found].argmax(axis=1) + 1
    return ranks


def recall_curve(ranks: np.ndarray, max_n: int) -> np.ndarray:
    """Recall at N = 1..max_n from pooled first-match ranks."""
    ranks = np.asarray(ranks, dtype=np.int64)
    if len(ranks) == 0:
        raise NoGroundTruth("no ground-truth boxes to evaluate")
    found = ranks[(ranks > 0) & (ranks <= max_n)]
    counts = np.bincount(found, minlength=max_n + 1)[1 : max_n + 1]
    return np.cumsum(counts) / len(ranks)


def recall_at_n(proposals, gts, N: int, iou_thr: float) -> float:
    """Fraction of ``gts`` matched by one of the top-N ``proposals`` at IoU >= iou_thr."""
    if N < 1:
        raise ValueError("N must be at least 1")
    ranks = first_match_ranks(proposals, gts, iou_thr)
    if len(ranks) == 0:
        raise NoGroundTruth("no ground-truth boxes to evaluate")
    return float(np.mean((ranks > 0) & (ranks <= N)))


def auc(curve) -> float:
    """Trapezoidal area under recall vs N over its N range, in percent."""
    curve = np.asarray(curve, dtype=np.float64)
    if curve.size == 0:
        raise ValueError("empty recall curve")
    if curve.size == 1:
        return float(curve[0] * 100.0)
    area = float((curve[:-1] + curve[1:]).sum()) / 2.0
    return 100.0 * area / (curve.size - 1)


def n_at_recall(curve, target: float = 0.75) -> Optional[int]:
    """Smallest N with recall >= target, or None when never reached."""
    hits = np.flatnonzero(np.asarray(curve) >= target)
    return int(hits[0]) + 1 if hits.size else None


def format_n(n: Optional[int]) -> str:
    return NOT_REACHED if n is None else str(n)


def evaluate(
    proposals: Mapping[str, object],
    annotations: Mapping[str, Sequence[GroundTruthBox]],
    iou_list: Sequence[float] = (0.5, 0.6, 0.7),
    max_n: int = 1000,
) -> EvalReport:
    """
    Pooled recall curves over a set of images.

    Raises
    ------
    IdMismatch
        If proposal and annotation image ids differ.
    NoGroundTruth
        If no image carries a ground-truth box.
    """
    missing = sorted(set(annotations) - set(proposals))
    extra = sorted(set(proposals) - set(annotations))
    if missing or extra:
        raise IdMismatch(f"image ids differ: no proposals for {missing[:5]}, no annotations for {extra[:5]}")
    n_gt = sum(len(v) for v in annotations.values())
    if n_gt == 0:
        raise NoGroundTruth("annotations contain no boxes")
    report = EvalReport(max_n=max_n, n_gt=n_gt)
    ids = sorted(annotations)
    timings = [getattr(proposals[i], "elapsed", 0.0) for i in ids]
    if any(t > 0 for t in timings):
        report.seconds_per_image = float(np.mean(timings))
    for thr in iou_list:
        thr = float(thr)
        ranks = np.concatenate([first_match_ranks(proposals[i], annotations[i], thr) for i in ids])
        curve = recall_curve(ranks, max_n)
        report.curves[thr] = curve
        report.auc[thr] = auc(curve)
        report.n_at_75[thr] = n_at_recall(curve, 0.75)
        report.recall_at_max[thr] = float(curve[-1])
        logger.info(
            "IoU %.2f: AUC %.1f, N@75%% %s, recall@%d %.3f",
            thr,
            report.auc[thr],
            format_n(report.n_at_75[thr]),
            max_n,
            curve[-1],
        )
    return report


def format_summary_row(report: EvalReport, name: str = "salprop") -> str:
    """One comparison-table row: AUC, N@75% and recall per IoU threshold, then seconds per image."""
    cells = [name]
    for thr in report.thresholds:
        cells.append(
            f"IoU {thr:g}: AUC {report.auc[thr]:.1f} | N@75% {format_n(report.n_at_75[thr])}"
            f" | recall {100.0 * report.recall_at_max[thr]:.0f}%"
        )
    t = report.seconds_per_image
    cells.append(f"time {t:.2f} s" if t is not None else f"time {NOT_REACHED}")
    return " || ".join(cells)


# ---------------------------------------------------------------- report files
def write_report_csv(report: EvalReport, path: os.PathLike, comment: str = "") -> Path:
    curve_rows = [
        (f"{thr:g}", n + 1, repr(float(r))) for thr, curve in report.curves.items() for n, r in enumerate(curve)
    ]
    text = render_csv(CURVE_HEADER, curve_rows, comment)
    summary_rows = [
        (
            f"{thr:g}",
            repr(report.auc[thr]),
            format_n(report.n_at_75[thr]),
            repr(report.recall_at_max[thr]),
            NOT_REACHED if report.seconds_per_image is None else repr(report.seconds_per_image),
        )
        for thr in report.thresholds
    ]
    text += "\n" + render_csv(SUMMARY_HEADER, summary_rows)
    return atomic_write_text(path, text)


def read_report_csv(path: os.PathLike) -> EvalReport:
    """
    Parse a report written by :func:`write_report_csv`.

    Raises
    ------
    ParseError
        On missing headers or malformed values.
    """
    path = Path(path)
    rows = [[c.strip() for c in r] for r in read_csv_rows(path)]
    if not rows or rows[0] != CURVE_HEADER:
        raise ParseError(f"{path}: expected header {','.join(CURVE_HEADER)}")
    try:
        split = rows.index(SUMMARY_HEADER)
    except ValueError as e:
        raise ParseError(f"{path}: summary block missing") from e
    points: Dict[float, List[Tuple[int, float]]] = {}
    try:
        for row in rows[1:split]:
            thr, n, r = row
            points.setdefault(float(thr), []).append((int(n), float(r)))
        report = EvalReport(max_n=0)
        for thr, pts in points.items():
            pts.sort()
            report.curves[thr] = np.array([r for _n, r in pts])
            report.max_n = max(report.max_n, pts[-1][0])
        for row in rows[split + 1 :]:
            thr_s, auc_s, n75, rmax, secs = row
            thr = float(thr_s)
            report.auc[thr] = float(auc_s)
            report.n_at_75[thr] = None if n75 == NOT_REACHED else int(n75)
            report.recall_at_max[thr] = float(rmax)
            if secs != NOT_REACHED:
                report.seconds_per_image = float(secs)
            report.curves.setdefault(thr, np.zeros(0))
    except ValueError as e:
        raise ParseError(f"{path}: malformed report row ({e})") from e
    return report


def write_curves_csv(report: EvalReport, path: os.PathLike, comment: str = "") -> Path:
    """Long-format plot data: one series per IoU threshold."""
    rows = [
        (f"iou@{thr:g}", f"{thr:g}", n + 1, repr(float(r)))
        for thr, curve in report.curves.items()
        for n, r in enumerate(curve)
    ]
    return atomic_write_text(path, render_csv(PLOT_HEADER, rows, comment))


# ---------------------------------------------------------------- NMS sweep
@dataclass
class NmsSweep:
    thetas: List[float]
    recall: Dict[float, List[float]]  # per IoU, one value per theta

    def best(self) -> Dict[float, float]:
        """NMS cut-off with the highest recall per IoU; ties go to the smaller cut-off."""
        return {thr: self.thetas[int(np.argmax(vals))] for thr, vals in self.recall.items()}


def sweep_nms(
    pools: Mapping[str, Sequence],
    annotations: Mapping[str, Sequence[GroundTruthBox]],
    thetas: Sequence[float],
    iou_list: Sequence[float] = (0.5, 0.7),
    max_n: int = 1000,
) -> NmsSweep:
    """Recall at ``max_n`` after NMS at each cut-off, from pre-NMS candidate pools."""
    from .proposals import nms_boxes

    sweep = NmsSweep(thetas=[float(t) for t in thetas], recall={float(t): [] for t in iou_list})
    for theta in sweep.thetas:
        kept = {image_id: nms_boxes(pool, theta)[:max_n] for image_id, pool in pools.items()}
        report = evaluate(kept, annotations, iou_list, max_n)
        for thr in sweep.recall:
            sweep.recall[thr].append(report.recall_at_max[thr])
    return sweep
