# salprop/proposals.py
"""
Saliency-ranked window proposals.

Windows are scored by the salient edge mass they fully contain,

    S_w = sum_j s_j * l_j / sqrt(w * h)

over edgelets labelled object by the CRF, where s_j is the Bayesian posterior
and l_j the edgelet length. All windows of one size are scored at once from a
2-D difference array over their translation grid; the best ``top_k`` are then
re-scored exactly, refined by coordinate search and thinned by greedy NMS.
"""

import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .bayes import EdgeletSaliency, compute_saliency
from .boxes import Window, iou_matrix
from .common import (
    ImageTooSmall,
    ParseError,
    atomic_write_text,
    fallback_message,
    read_csv_rows,
    read_header_settings,
    render_csv,
)
from .crf import CrfModel, EdgeGraph, build_graph, predict_labels
from .edges import EdgeMap, Edgelet, extract_edgelets, prepare_sparse_map
from .features import NodeFeatures, compute_node_features
from .imagio import RgbImage, luminance, rgb_to_lab

logger = logging.getLogger(__name__)

ASPECTS = (1.0 / 3.0, 1.0 / math.sqrt(3.0), 1.0, math.sqrt(3.0), 3.0)
MIN_SIDE = 8
MIN_REFINE_STEP = 2.0
GRID_CELL = 16
PROPOSAL_HEADER = ["rank", "x", "y", "w", "h", "score"]


@dataclass(frozen=True)
class Proposal:
    window: Window
    score: float
    rank: int = 0


@dataclass
class ProposalSet:
    image_id: str = ""
    proposals: List[Proposal] = field(default_factory=list)
    seed: int = 0
    elapsed: float = 0.0
    analysis: Optional["SceneAnalysis"] = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.proposals)

    def boxes(self) -> np.ndarray:
        """(n, 4) array of (x, y, w, h) in rank order."""
        return np.array([p.window.as_tuple() for p in self.proposals], dtype=np.int64).reshape(-1, 4)

    def scores(self) -> np.ndarray:
        return np.array([p.score for p in self.proposals], dtype=np.float64)


def _round(v: float) -> int:
    return int(math.floor(v + 0.5))


def translation_stride(side: int, alpha: float) -> int:
    """Integer step that makes adjacent same-size windows overlap by IoU ~= alpha."""
    return max(1, int(math.floor(side * (1.0 - alpha) / (1.0 + alpha))))


def area_fractions(scale_min: float = 0.005, scale_max: float = 0.95, scale_step: float = 0.01) -> List[float]:
    if scale_min >= scale_max or scale_step <= 0:
        raise ValueError("need scale_min < scale_max and a positive scale_step")
    count = int(math.floor((scale_max - scale_min) / scale_step + 1e-9)) + 1
    return [scale_min + i * scale_step for i in range(count)]


def window_sizes(
    img_w: int,
    img_h: int,
    scale_min: float = 0.005,
    scale_max: float = 0.95,
    scale_step: float = 0.01,
    aspects: Sequence[float] = ASPECTS,
) -> List[Tuple[int, int]]:
    """Distinct (w, h) window sizes, in scale-then-aspect order."""
    sizes: List[Tuple[int, int]] = []
    seen = set()
    area = img_w * img_h
    for a in area_fractions(scale_min, scale_max, scale_step):
        for r in aspects:
            w = _round(math.sqrt(a * area * r))
            h = _round(math.sqrt(a * area / r))
            if w < MIN_SIDE or h < MIN_SIDE or w > img_w or h > img_h or (w, h) in seen:
                continue
            seen.add((w, h))
            sizes.append((w, h))
    return sizes


def enumerate_windows(
    img_w: int,
    img_h: int,
    alpha: float = 0.65,
    scale_min: float = 0.005,
    scale_max: float = 0.95,
    scale_step: float = 0.01,
    aspects: Sequence[float] = ASPECTS,
) -> List[Window]:
    """
    Sliding windows over all scales and aspect ratios.

    Raises
    ------
    ImageTooSmall
        If no window of at least 8 x 8 pixels fits the image.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    windows = []
    for w, h in window_sizes(img_w, img_h, scale_min, scale_max, scale_step, aspects):
        sx, sy = translation_stride(w, alpha), translation_stride(h, alpha)
        for y in range(0, img_h - h + 1, sy):
            for x in range(0, img_w - w + 1, sx):
                windows.append(Window(x, y, w, h))
    if not windows:
        raise ImageTooSmall(f"no window of at least {MIN_SIDE}x{MIN_SIDE} fits a {img_w}x{img_h} image")
    return windows


# ---------------------------------------------------------------- scoring
@dataclass(frozen=True)
class SalientEdgeIndex:
    """
    Object edgelets with their bounding boxes and weights s_j * l_j.

    Arrays cover every edgelet (ascending id order); only object-labelled
    edgelets are bucketed into the spatial grid.
    """

    ids: np.ndarray
    bboxes: np.ndarray  # (n, 4) inclusive x0, y0, x1, y1
    lengths: np.ndarray
    saliency: np.ndarray
    labels: np.ndarray
    shape: Tuple[int, int]
    cell: int = GRID_CELL
    grid: Dict[Tuple[int, int], List[int]] = field(default_factory=dict, repr=False)

    @classmethod
    def build(
        cls,
        edgelets: Sequence[Edgelet],
        saliency: Sequence[float],
        labels: Sequence[int],
        shape: Tuple[int, int],
        cell: int = GRID_CELL,
    ) -> "SalientEdgeIndex":
        order = sorted(range(len(edgelets)), key=lambda i: edgelets[i].id)
        edgelets = [edgelets[i] for i in order]
        saliency = np.asarray(saliency, dtype=np.float64)[order] if len(order) else np.zeros(0)
        labels = np.asarray(labels, dtype=np.int64)[order] if len(order) else np.zeros(0, dtype=np.int64)
        bboxes = np.array([e.bbox for e in edgelets], dtype=np.int64).reshape(-1, 4)
        grid: Dict[Tuple[int, int], List[int]] = {}
        for k in np.flatnonzero(labels == 1):
            key = (int(bboxes[k, 0]) // cell, int(bboxes[k, 1]) // cell)
            grid.setdefault(key, []).append(int(k))
        return cls(
            ids=np.array([e.id for e in edgelets], dtype=np.int64),
            bboxes=bboxes,
            lengths=np.array([e.length for e in edgelets], dtype=np.int64),
            saliency=saliency,
            labels=labels,
            shape=tuple(shape),
            cell=cell,
            grid=grid,
        )

    @property
    def weights(self) -> np.ndarray:
        return self.saliency * self.lengths

    @property
    def n_objects(self) -> int:
        return int(np.sum(self.labels == 1))

    def candidates(self, win: Window) -> List[int]:
        """Object edgelet slots whose top-left corner falls in a grid cell touched by ``win``."""
        c = self.cell
        out: List[int] = []
        for gy in range(win.y // c, (win.y1 - 1) // c + 1):
            for gx in range(win.x // c, (win.x1 - 1) // c + 1):
                out.extend(self.grid.get((gx, gy), ()))
        return out


def score_window(win: Window, index: SalientEdgeIndex) -> float:
    """S_w of one window: contained object edge mass over sqrt(area)."""
    b = index.bboxes
    total = 0.0
    for k in sorted(index.candidates(win)):
        if b[k, 0] >= win.x and b[k, 1] >= win.y and b[k, 2] < win.x1 and b[k, 3] < win.y1:
            total += float(index.saliency[k]) * int(index.lengths[k])
    return total / math.sqrt(win.w * win.h)


def score_size(w: int, h: int, index: SalientEdgeIndex, alpha: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Approximate scores of every translation of a w x h window.

    Returns
    -------
    (xs, ys, scores)
        Grid positions and scores, flattened row-major.
    """
    img_h, img_w = index.shape
    sx, sy = translation_stride(w, alpha), translation_stride(h, alpha)
    nx = (img_w - w) // sx + 1
    ny = (img_h - h) // sy + 1
    acc = np.zeros((ny + 1, nx + 1))
    obj = np.flatnonzero(index.labels == 1)
    if len(obj):
        b = index.bboxes[obj]
        wt = index.weights[obj]
        # window origin x must satisfy x1 - w + 1 <= x <= x0
        ix0 = np.maximum(0, -((-(b[:, 2] - w + 1)) // sx))
        ix1 = np.minimum(nx - 1, b[:, 0] // sx)
        iy0 = np.maximum(0, -((-(b[:, 3] - h + 1)) // sy))
        iy1 = np.minimum(ny - 1, b[:, 1] // sy)
        ok = (ix0 <= ix1) & (iy0 <= iy1)
        for x0, x1, y0, y1, v in zip(ix0[ok], ix1[ok], iy0[ok], iy1[ok], wt[ok]):
            acc[y0, x0] += v
            acc[y0, x1 + 1] -= v
            acc[y1 + 1, x0] -= v
            acc[y1 + 1, x1 + 1] += v
    sums = acc.cumsum(axis=0).cumsum(axis=1)[:ny, :nx]
    gy, gx = np.mgrid[0:ny, 0:nx]
    return (gx * sx).ravel(), (gy * sy).ravel(), (sums / math.sqrt(w * h)).ravel()


def rank_order(scores: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """Indices by descending score; ties by ascending (x, y, w, h)."""
    boxes = np.asarray(boxes).reshape(-1, 4)
    return np.lexsort((boxes[:, 3], boxes[:, 2], boxes[:, 1], boxes[:, 0], -np.asarray(scores)))


def top_windows(
    index: SalientEdgeIndex,
    alpha: float = 0.65,
    top_k: int = 1000,
    scale_min: float = 0.005,
    scale_max: float = 0.95,
    scale_step: float = 0.01,
) -> List[Proposal]:
    """The ``top_k`` best windows with a positive score, exactly scored and ranked."""
    img_h, img_w = index.shape
    sizes = window_sizes(img_w, img_h, scale_min, scale_max, scale_step)
    if not sizes:
        raise ImageTooSmall(f"no window of at least {MIN_SIDE}x{MIN_SIDE} fits a {img_w}x{img_h} image")
    boxes, scores = [], []
    n_windows = 0
    for w, h in sizes:
        xs, ys, sc = score_size(w, h, index, alpha)
        n_windows += len(sc)
        pos = sc > 1e-12
        if pos.any():
            boxes.append(np.stack([xs[pos], ys[pos], np.full(pos.sum(), w), np.full(pos.sum(), h)], axis=1))
            scores.append(sc[pos])
    logger.debug("scored %d windows over %d sizes", n_windows, len(sizes))
    if not boxes:
        return []
    boxes_arr = np.vstack(boxes)
    scores_arr = np.concatenate(scores)
    keep = rank_order(scores_arr, boxes_arr)[:top_k]
    out = []
    for k in keep:
        win = Window(*(int(v) for v in boxes_arr[k]))
        out.append(Proposal(win, score_window(win, index)))
    return _ranked(out)


def _ranked(props: Sequence[Proposal]) -> List[Proposal]:
    if not props:
        return []
    boxes = np.array([p.window.as_tuple() for p in props])
    order = rank_order(np.array([p.score for p in props]), boxes)
    return [Proposal(props[k].window, props[k].score, rank=r + 1) for r, k in enumerate(order)]


def _clip(x: int, y: int, w: int, h: int, img_w: int, img_h: int) -> Optional[Window]:
    x = max(0, x)
    y = max(0, y)
    w = min(w, img_w - x)
    h = min(h, img_h - y)
    if w < 1 or h < 1:
        return None
    return Window(x, y, w, h)


def refine_window(win: Window, score: float, index: SalientEdgeIndex, alpha: float = 0.65) -> Proposal:
    """
    Greedy coordinate ascent on one box.

    Each of x, y, w and h is moved by +-step while the score strictly rises;
    x and w use half the horizontal stride as their first step, y and h half
    the vertical stride. Steps halve until they drop below 2 pixels.
    """
    img_h, img_w = index.shape
    step = [translation_stride(win.w, alpha) / 2.0, translation_stride(win.h, alpha) / 2.0]
    best, best_score = win, score
    while max(step) >= MIN_REFINE_STEP:
        improved = True
        while improved:
            improved = False
            for coord in range(4):
                s = step[coord % 2]
                if s < MIN_REFINE_STEP:
                    continue
                d = _round(s)
                for sign in (1, -1):
                    vals = list(best.as_tuple())
                    vals[coord] += sign * d
                    cand = _clip(*vals, img_w, img_h)
                    if cand is None or cand == best:
                        continue
                    cand_score = score_window(cand, index)
                    if cand_score > best_score:
                        best, best_score = cand, cand_score
                        improved = True
                        break
        step = [s / 2.0 for s in step]
    return Proposal(best, best_score)


def refine(proposals: Sequence[Proposal], index: SalientEdgeIndex, alpha: float = 0.65) -> List[Proposal]:
    """Refine every box and re-rank by the new scores."""
    return _ranked([refine_window(p.window, p.score, index, alpha) for p in proposals])


def nms_boxes(proposals: Sequence[Proposal], theta: float = 0.75) -> List[Proposal]:
    """
    Greedy suppression: walk boxes by descending score and keep a box when its
    IoU with every kept box is at most ``theta``. Ranks restart at 1.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    if not proposals:
        return []
    boxes = np.array([p.window.as_tuple() for p in proposals], dtype=np.float64)
    scores = np.array([p.score for p in proposals])
    order = np.argsort(-scores, kind="stable")
    keep = []
    while order.size > 0:
        i = order[0]
        keep.append(int(i))
        overlap = iou_matrix(boxes[i : i + 1], boxes[order[1:]])[0]
        order = order[1:][overlap <= theta]
    return [Proposal(proposals[k].window, proposals[k].score, rank=r + 1) for r, k in enumerate(keep)]


# ---------------------------------------------------------------- pipeline
@dataclass
class SceneAnalysis:
    """Intermediate results of one image, kept for debugging dumps and the NMS sweep."""

    shape: Tuple[int, int]
    edgelets: List[Edgelet] = field(default_factory=list)
    features: List[NodeFeatures] = field(default_factory=list)
    saliency: List[EdgeletSaliency] = field(default_factory=list)
    graph: Optional[EdgeGraph] = None
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def index(self) -> SalientEdgeIndex:
        return SalientEdgeIndex.build(
            self.edgelets, [r.posterior for r in self.saliency], self.labels, self.shape
        )


def analyze_scene(image: RgbImage, edge_map: Optional[EdgeMap], model: CrfModel, config) -> SceneAnalysis:
    """Edges, features, saliency and CRF labels of one image."""
    lab = rgb_to_lab(image)
    lum = luminance(lab)
    sparse = prepare_sparse_map(edge_map, lab, config.sigma)
    edgelets = extract_edgelets(sparse, config.min_len, config.min_mag)
    analysis = SceneAnalysis(shape=image.shape, edgelets=edgelets)
    if not edgelets:
        return analysis
    analysis.features = compute_node_features(edgelets, lab, lum, sparse, config)
    analysis.saliency = compute_saliency(edgelets, analysis.features, config.beta)
    analysis.graph = build_graph(edgelets, analysis.features, config.link_radius, config.max_degree)
    analysis.labels = predict_labels(analysis.graph, model, config.bp_iters, config.damping)
    logger.debug(
        "%d edgelets, %d links, %d labelled object",
        len(edgelets),
        analysis.graph.n_links,
        int(analysis.labels.sum()),
    )
    return analysis


def candidate_pool(analysis: SceneAnalysis, config) -> List[Proposal]:
    """Refined, ranked proposals before NMS."""
    img_h, img_w = analysis.shape
    if not window_sizes(img_w, img_h, config.scale_min, config.scale_max, config.scale_step):
        raise ImageTooSmall(f"no window of at least {MIN_SIDE}x{MIN_SIDE} fits a {img_w}x{img_h} image")
    if not analysis.edgelets:
        fallback_message("Proposals", "no edgelets found", "an empty proposal set")
        return []
    index = analysis.index()
    if index.n_objects == 0:
        fallback_message("Proposals", "no edgelet labelled object", "an empty proposal set")
        return []
    top = top_windows(index, config.alpha, config.top_k, config.scale_min, config.scale_max, config.scale_step)
    return refine(top, index, config.alpha)


def finalize(pool: Sequence[Proposal], theta: float, max_n: int) -> List[Proposal]:
    return nms_boxes(pool, theta)[:max_n] if pool else []


def generate_proposals(
    image: RgbImage,
    edge_map: Optional[EdgeMap],
    model: CrfModel,
    config,
    image_id: str = "",
) -> ProposalSet:
    """
    Full pipeline for one image.

    ``edge_map`` may be dense or sparse; None runs the built-in detector.
    An image without edgelets yields an empty ProposalSet. The scene
    analysis behind the proposals rides along as ``ProposalSet.analysis``.
    """
    started = time.perf_counter()
    analysis = analyze_scene(image, edge_map, model, config)
    pool = candidate_pool(analysis, config)
    props = finalize(pool, config.nms_theta, config.max_n)
    elapsed = time.perf_counter() - started
    logger.info("%s: %d proposals in %.2f s", image_id or "image", len(props), elapsed)
    return ProposalSet(image_id=image_id, proposals=props, seed=config.seed, elapsed=elapsed, analysis=analysis)


# ---------------------------------------------------------------- CSV
def write_proposals_csv(pset: ProposalSet, path: os.PathLike, comment: str = "") -> Path:
    rows = [(p.rank, *p.window.as_tuple(), repr(float(p.score))) for p in pset.proposals]
    return atomic_write_text(path, render_csv(PROPOSAL_HEADER, rows, comment))


def read_proposals_csv(path: os.PathLike, image_id: Optional[str] = None) -> ProposalSet:
    """
    Read a proposal CSV; rows are returned in rank order.

    Raises
    ------
    ParseError
        On a wrong header or malformed rows.
    """
    path = Path(path)
    rows = read_csv_rows(path)
    if not rows or [c.strip() for c in rows[0]] != PROPOSAL_HEADER:
        raise ParseError(f"{path}: expected header {','.join(PROPOSAL_HEADER)}")
    props = []
    for n, row in enumerate(rows[1:], start=2):
        if len(row) != len(PROPOSAL_HEADER):
            raise ParseError(f"{path}: row {n} has {len(row)} fields")
        try:
            rank, x, y, w, h = (int(v) for v in row[:5])
            props.append(Proposal(Window(x, y, w, h), float(row[5]), rank))
        except ValueError as e:
            raise ParseError(f"{path}: row {n}: {e}") from e
    props.sort(key=lambda p: p.rank)
    settings = read_header_settings(path)
    try:
        elapsed = float(settings.get("elapsed_s", 0.0))
        seed = int(settings.get("seed", 0))
    except ValueError as e:
        raise ParseError(f"{path}: malformed header ({e})") from e
    return ProposalSet(
        image_id=image_id if image_id is not None else path.stem,
        proposals=props,
        seed=seed,
        elapsed=elapsed,
    )
