# salprop/crf/training.py
"""
Block-coordinate Frank-Wolfe learner for the structured SVM

    min_w  1/2 |w|^2 + C * sum_i max_y ( loss(y_i, y) + <w, psi(x_i, y)> - <w, psi(x_i, y_i)> )

with Hamming loss. Loss-augmented decoding adds the per-node loss to the
unary scores and reuses the MAP decoder. The weighted-average iterate is
returned. The duality gap of the current iterate is recorded before the first
pass and checked after every pass.
"""

import logging
from typing import Sequence, Tuple

import numpy as np

from ..common import EmptyTrainingSet, NonFinite
from .graph import EdgeGraph, TrainingSample, as_labeling
from .inference import decode, predict_labels
from .model import JOINT_DIM, N_LABELS, W1_SIZE, CrfModel, TrainingSummary, joint_feature

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-12


def normalization_stats(raw_nodes: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-component mean and standard deviation of training node features.

    Components that are constant over the training set are left as they are
    (mean 0, std 1).
    """
    mean = raw_nodes.mean(axis=0)
    std = raw_nodes.std(axis=0)
    constant = std < STD_FLOOR
    mean[constant] = 0.0
    std[constant] = 1.0
    return mean, std


def _score_tables(graph: EdgeGraph, w: np.ndarray):
    W1 = w[:W1_SIZE].reshape(N_LABELS, -1)
    W2 = w[W1_SIZE:].reshape(N_LABELS * N_LABELS, -1)
    return graph.nodes @ W1.T, (graph.links @ W2.T).reshape(-1, N_LABELS, N_LABELS)


def _loss_augmented(graph: EdgeGraph, gold: np.ndarray, w: np.ndarray, max_iters: int, damping: float):
    unary, pair = _score_tables(graph, w)
    offset = np.ones((graph.n_nodes, N_LABELS))
    offset[np.arange(graph.n_nodes), gold] = 0.0
    y_hat = decode(unary + offset, pair, graph.edges, max_iters=max_iters, damping=damping)
    return y_hat, float(np.sum(y_hat != gold))


def train_bcfw(
    samples: Sequence[TrainingSample],
    C: float = 1.0,
    max_passes: int = 200,
    gap_tol: float = 1e-3,
    seed: int = 42,
    max_iters: int = 50,
    damping: float = 0.5,
) -> CrfModel:
    """
    Learn CRF weights from labelled graphs with raw node features.

    Normalisation statistics are computed from the training nodes and stored
    in the returned model. Samples are visited in an order shuffled by
    ``seed`` each pass; the same seed reproduces the same weights.

    Raises
    ------
    EmptyTrainingSet
        If there are no samples or no nodes.
    NonFinite
        If the weights diverge.
    """
    if not samples:
        raise EmptyTrainingSet("no training samples")
    raw = np.vstack([s.graph.nodes for s in samples])
    if len(raw) == 0:
        raise EmptyTrainingSet("training samples contain no edgelets")
    if C < 0:
        raise ValueError("C must be non-negative")
    mean, std = normalization_stats(raw)
    graphs = [s.graph.normalized(mean, std) for s in samples]
    golds = [as_labeling(s.gold, s.graph.n_nodes) for s in samples]
    psi_gold = np.stack([joint_feature(g, y) for g, y in zip(graphs, golds)])

    n = len(graphs)
    w = np.zeros(JOINT_DIM)
    w_mat = np.zeros((n, JOINT_DIM))
    l_mat = np.zeros(n)
    l_total = 0.0
    w_avg = np.zeros(JOINT_DIM)
    rng = np.random.default_rng(seed)
    summary = TrainingSummary()
    summary.gaps.append(_duality_gap(graphs, golds, psi_gold, w, l_total, C, max_iters, damping))
    logger.debug("initial duality gap %.6g", summary.gaps[0])
    k = 0

    for p in range(max_passes):
        for i in rng.permutation(n):
            y_hat, loss = _loss_augmented(graphs[i], golds[i], w, max_iters, damping)
            ws = C * (psi_gold[i] - joint_feature(graphs[i], y_hat))
            ls = loss / n
            w_diff = w_mat[i] - ws
            gamma = (w_diff @ w - C * n * (l_mat[i] - ls)) / (w_diff @ w_diff + 1e-15)
            gamma = max(0.0, min(1.0, gamma))

            w -= w_mat[i]
            w_mat[i] = (1.0 - gamma) * w_mat[i] + gamma * ws
            w += w_mat[i]
            l_total -= l_mat[i]
            l_mat[i] = (1.0 - gamma) * l_mat[i] + gamma * ls
            l_total += l_mat[i]

            rho = 2.0 / (k + 2.0)
            w_avg = (1.0 - rho) * w_avg + rho * w
            k += 1
            if not np.all(np.isfinite(w)):
                raise NonFinite(f"weights diverged in pass {p + 1}")

        gap = _duality_gap(graphs, golds, psi_gold, w, l_total, C, max_iters, damping)
        summary.gaps.append(gap)
        summary.passes = p + 1
        logger.info("pass %d: duality gap %.6g", p + 1, gap)
        if gap < gap_tol:
            summary.converged = True
            break
    else:
        logger.warning("BCFW stopped after %d passes with gap %.6g (tolerance %.3g)", max_passes, gap, gap_tol)

    model = CrfModel.from_vector(w_avg, mean, std, summary=summary)
    summary.accuracy = hamming_accuracy([s.graph for s in samples], golds, model, max_iters, damping)
    return model


def _duality_gap(graphs, golds, psi_gold, w, l_total, C, max_iters, damping) -> float:
    """Frank-Wolfe duality gap of the current iterate over the whole training set."""
    n = len(graphs)
    ws = np.zeros(JOINT_DIM)
    loss_sum = 0.0
    for i, (g, y) in enumerate(zip(graphs, golds)):
        y_hat, loss = _loss_augmented(g, y, w, max_iters, damping)
        ws += C * (psi_gold[i] - joint_feature(g, y_hat))
        loss_sum += loss
    return float((w - ws) @ w - C * n * l_total + C * loss_sum)


def hamming_accuracy(
    graphs: Sequence[EdgeGraph],
    golds: Sequence,
    model: CrfModel,
    max_iters: int = 50,
    damping: float = 0.5,
) -> float:
    """Fraction of nodes, pooled over raw ``graphs``, whose decoded label matches ``golds``."""
    correct = 0
    total = 0
    for g, y in zip(graphs, golds):
        y = as_labeling(y, g.n_nodes)
        correct += int(np.sum(predict_labels(g, model, max_iters, damping) == y))
        total += len(y)
    return correct / total if total else 1.0
