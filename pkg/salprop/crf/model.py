# salprop/crf/model.py
"""
CRF weights, the joint feature map and the text model file.

The score of a labeling l on a graph with node vectors x_i and link vectors
e_ij is

    sum_i <W1[l_i], x_i> + sum_(i,j) <W2[2 l_i + l_j], e_ij>

so that with w = [W1.ravel(), W2.ravel()] it equals <w, joint_feature(graph, l)>.

Model file:
    SALPROP-MODEL v1
    <7 feature means>
    <7 feature standard deviations>
    <W1 row for label 0>
    <W1 row for label 1>
    <W2 rows for label pairs 00, 01, 10, 11>
"""

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from ..common import BadValue, BadVersion, NonFinite, ParseError, atomic_write_text
from ..features import LINK_DIM, NODE_DIM
from .graph import EdgeGraph, as_labeling

logger = logging.getLogger(__name__)

MODEL_MAGIC = "SALPROP-MODEL"
MODEL_VERSION = "v1"
N_LABELS = 2
W1_SIZE = N_LABELS * NODE_DIM
W2_SIZE = N_LABELS * N_LABELS * LINK_DIM
JOINT_DIM = W1_SIZE + W2_SIZE


@dataclass
class TrainingSummary:
    """What the learner reports after a run; not part of the model file."""

    # gaps[0] belongs to the zero starting weights, then one entry per pass
    gaps: List[float] = field(default_factory=list)
    passes: int = 0
    converged: bool = False
    accuracy: float = float("nan")

    @property
    def final_gap(self) -> float:
        return self.gaps[-1] if self.gaps else float("nan")


@dataclass(frozen=True, eq=False)
class CrfModel:
    W1: np.ndarray
    W2: np.ndarray
    feature_mean: np.ndarray
    feature_std: np.ndarray
    version: str = MODEL_VERSION
    summary: Optional[TrainingSummary] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        shapes = {
            "W1": (N_LABELS, NODE_DIM),
            "W2": (N_LABELS * N_LABELS, LINK_DIM),
            "feature_mean": (NODE_DIM,),
            "feature_std": (NODE_DIM,),
        }
        for name, shape in shapes.items():
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise BadValue(f"{name} must have shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise NonFinite(f"{name} contains NaN or Inf")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.feature_std <= 0):
            raise BadValue("feature_std must be strictly positive")

    def __eq__(self, other):
        if not isinstance(other, CrfModel):
            return NotImplemented
        return self.version == other.version and all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in ("W1", "W2", "feature_mean", "feature_std")
        )

    @classmethod
    def zeros(cls) -> "CrfModel":
        return cls(
            W1=np.zeros((N_LABELS, NODE_DIM)),
            W2=np.zeros((N_LABELS * N_LABELS, LINK_DIM)),
            feature_mean=np.zeros(NODE_DIM),
            feature_std=np.ones(NODE_DIM),
        )

    @classmethod
    def from_vector(cls, w, feature_mean, feature_std, summary: Optional[TrainingSummary] = None) -> "CrfModel":
        w = np.asarray(w, dtype=np.float64).reshape(JOINT_DIM)
        return cls(
            W1=w[:W1_SIZE].reshape(N_LABELS, NODE_DIM),
            W2=w[W1_SIZE:].reshape(N_LABELS * N_LABELS, LINK_DIM),
            feature_mean=feature_mean,
            feature_std=feature_std,
            summary=summary,
        )

    @property
    def w(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.W2.ravel()])


def unary_scores(graph: EdgeGraph, model: CrfModel) -> np.ndarray:
    """(n, 2) score of each label at each node."""
    return graph.nodes @ model.W1.T


def pairwise_scores(graph: EdgeGraph, model: CrfModel) -> np.ndarray:
    """(m, 2, 2) score of each (l_i, l_j) pair on each link."""
    return (graph.links @ model.W2.T).reshape(-1, N_LABELS, N_LABELS)


def joint_feature(graph: EdgeGraph, labeling) -> np.ndarray:
    """The 30-D vector psi with energy = <w, psi>."""
    labels = as_labeling(labeling, graph.n_nodes)
    psi1 = np.zeros((N_LABELS, NODE_DIM))
    np.add.at(psi1, labels, graph.nodes)
    psi2 = np.zeros((N_LABELS * N_LABELS, LINK_DIM))
    if graph.n_links:
        pair = N_LABELS * labels[graph.edges[:, 0]] + labels[graph.edges[:, 1]]
        np.add.at(psi2, pair, graph.links)
    return np.concatenate([psi1.ravel(), psi2.ravel()])


def energy(graph: EdgeGraph, labeling, model: CrfModel) -> float:
    """
    Score of ``labeling`` under ``model`` (higher is better).

    Node features are used as stored in ``graph``; normalise raw graphs with
    ``graph.normalized(model.feature_mean, model.feature_std)`` first.

    Raises
    ------
    SizeMismatch
        If the labeling length differs from the node count.
    """
    labels = as_labeling(labeling, graph.n_nodes)
    unary = unary_scores(graph, model)
    total = float(unary[np.arange(graph.n_nodes), labels].sum())
    if graph.n_links:
        pair = pairwise_scores(graph, model)
        total += float(pair[np.arange(graph.n_links), labels[graph.edges[:, 0]], labels[graph.edges[:, 1]]].sum())
    return total


# ---------------------------------------------------------------- file format
def _fmt(values) -> str:
    return " ".join("%.17g" % float(v) for v in np.ravel(values))


def save_model(model: CrfModel, path: os.PathLike) -> Path:
    lines = [f"{MODEL_MAGIC} {model.version}", _fmt(model.feature_mean), _fmt(model.feature_std)]
    lines += [_fmt(row) for row in model.W1]
    lines += [_fmt(row) for row in model.W2]
    target = atomic_write_text(path, "\n".join(lines) + "\n")
    logger.info("model written to %s", target)
    return target


def _parse_row(line: str, expected: int, what: str, path) -> np.ndarray:
    parts = line.split()
    if len(parts) != expected:
        raise ParseError(f"{path}: {what} needs {expected} values, found {len(parts)}")
    try:
        return np.array([float(p) for p in parts], dtype=np.float64)
    except ValueError as e:
        raise ParseError(f"{path}: bad number in {what} ({e})") from e


def load_model(path: os.PathLike) -> CrfModel:
    """
    Read a model file written by :func:`save_model`.

    Raises
    ------
    FileNotFoundError
        If ``path`` does not exist.
    BadVersion
        If the version tag is not v1.
    ParseError
        On a missing header, missing lines or malformed numbers.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError(f"{path}: empty model file")
    header = lines[0].split()
    if len(header) != 2 or header[0] != MODEL_MAGIC:
        raise ParseError(f"{path}: missing '{MODEL_MAGIC}' header")
    if header[1] != MODEL_VERSION:
        raise BadVersion(f"{path}: unsupported model version {header[1]!r}")
    expected_lines = 1 + 2 + N_LABELS + N_LABELS * N_LABELS
    if len(lines) != expected_lines:
        raise ParseError(f"{path}: expected {expected_lines} lines, found {len(lines)}")
    mean = _parse_row(lines[1], NODE_DIM, "feature_mean", path)
    std = _parse_row(lines[2], NODE_DIM, "feature_std", path)
    W1 = np.stack([_parse_row(lines[3 + r], NODE_DIM, f"W1 row {r}", path) for r in range(N_LABELS)])
    W2 = np.stack(
        [_parse_row(lines[3 + N_LABELS + r], LINK_DIM, f"W2 row {r}", path) for r in range(N_LABELS * N_LABELS)]
    )
    try:
        return CrfModel(W1=W1, W2=W2, feature_mean=mean, feature_std=std, version=header[1])
    except (BadValue, NonFinite) as e:
        raise ParseError(f"{path}: {e}") from e
