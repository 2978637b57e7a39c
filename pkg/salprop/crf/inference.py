# salprop/crf/inference.py
"""
MAP decoding of the binary edge-segment CRF.

``map_inference`` runs damped max-product belief propagation (exact on
forests, where damping is switched off) followed by a local search that
flips single nodes and linked node pairs while the score strictly rises.
``map_inference_exact`` enumerates every labeling and serves as the oracle
for small graphs.
"""

import logging
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..common import TooLarge
from .graph import EdgeGraph
from .model import CrfModel, pairwise_scores, unary_scores

logger = logging.getLogger(__name__)

MAX_EXACT_NODES = 20
MESSAGE_TOL = 1e-6
IMPROVE_EPS = 1e-12


def is_forest(n_nodes: int, edges: np.ndarray) -> bool:
    """True when the graph has no cycle."""
    if len(edges) == 0:
        return True
    adj = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n_nodes, n_nodes))
    n_comp, _ = connected_components(adj, directed=False)
    return len(edges) == n_nodes - n_comp


def max_product_beliefs(
    unary: np.ndarray,
    pair: np.ndarray,
    edges: np.ndarray,
    max_iters: int = 50,
    damping: float = 0.5,
) -> np.ndarray:
    """
    Max-marginal beliefs after synchronous max-product message passing.

    Parameters
    ----------
    unary : (n, 2) label scores.
    pair : (m, 2, 2) pair scores indexed [l_i, l_j] for each edge (i, j).
    edges : (m, 2) node index pairs.

    Returns
    -------
    np.ndarray
        (n, 2) unary score plus all incoming messages.
    """
    n, m = len(unary), len(edges)
    if m == 0:
        return unary.copy()
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    tables = np.concatenate([pair, pair.transpose(0, 2, 1)])  # [src label, dst label]
    reverse = np.concatenate([np.arange(m) + m, np.arange(m)])
    msgs = np.zeros((2 * m, 2))

    for it in range(max_iters):
        incoming = np.zeros((n, 2))
        np.add.at(incoming, dst, msgs)
        outgoing = (unary + incoming)[src] - msgs[reverse]
        new = (outgoing[:, :, None] + tables).max(axis=1)
        new -= new.max(axis=1, keepdims=True)
        updated = damping * msgs + (1.0 - damping) * new
        delta = float(np.abs(updated - msgs).max())
        msgs = updated
        if delta < MESSAGE_TOL:
            logger.debug("belief propagation converged after %d iterations", it + 1)
            break
    else:
        logger.debug("belief propagation stopped at max_iters=%d (last change %.3g)", max_iters, delta)
    incoming = np.zeros((n, 2))
    np.add.at(incoming, dst, msgs)
    return unary + incoming


def local_search(unary: np.ndarray, pair: np.ndarray, edges: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Flip single nodes, then linked pairs, while any flip strictly raises the score."""
    labels = labels.copy()
    n = len(unary)
    incident = [[] for _ in range(n)]
    for k, (i, j) in enumerate(edges):
        incident[i].append((k, int(j), True))
        incident[j].append((k, int(i), False))

    def link_score(k, li, lj):
        return pair[k, li, lj]

    def flip_gain(i):
        old, new = labels[i], 1 - labels[i]
        gain = unary[i, new] - unary[i, old]
        for k, other, first in incident[i]:
            lo = labels[other]
            if first:
                gain += link_score(k, new, lo) - link_score(k, old, lo)
            else:
                gain += link_score(k, lo, new) - link_score(k, lo, old)
        return gain

    improved = True
    while improved:
        improved = False
        for i in range(n):
            if flip_gain(i) > IMPROVE_EPS:
                labels[i] = 1 - labels[i]
                improved = True
        if improved:
            continue
        for k, (i, j) in enumerate(edges):
            gi = flip_gain(i)
            labels[i] = 1 - labels[i]
            gj = flip_gain(j)
            if gi + gj > IMPROVE_EPS:
                labels[j] = 1 - labels[j]
                improved = True
            else:
                labels[i] = 1 - labels[i]
    return labels


def decode(
    unary: np.ndarray,
    pair: np.ndarray,
    edges: np.ndarray,
    max_iters: int = 50,
    damping: float = 0.5,
    polish: bool = True,
) -> np.ndarray:
    """MAP labeling from score tables; ties go to label 0."""
    n = len(unary)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if is_forest(n, edges):
        # synchronous updates on a forest settle within its diameter
        beliefs = max_product_beliefs(unary, pair, edges, max_iters=max(max_iters, n), damping=0.0)
    else:
        beliefs = max_product_beliefs(unary, pair, edges, max_iters=max_iters, damping=damping)
    labels = (beliefs[:, 1] > beliefs[:, 0]).astype(np.int64)
    if polish and len(edges):
        labels = local_search(unary, pair, edges, labels)
    return labels


def map_inference(
    graph: EdgeGraph,
    model: CrfModel,
    max_iters: int = 50,
    damping: float = 0.5,
    unary_offset: Optional[np.ndarray] = None,
    polish: bool = True,
) -> np.ndarray:
    """
    Highest-scoring labeling found by loopy belief propagation.

    ``graph`` must already carry normalised node features (see
    :func:`predict_labels` for raw graphs). ``unary_offset`` is an optional
    (n, 2) array added to the unary scores, used for loss-augmented decoding.
    """
    unary = unary_scores(graph, model)
    if unary_offset is not None:
        unary = unary + unary_offset
    return decode(unary, pairwise_scores(graph, model), graph.edges, max_iters, damping, polish)


def map_inference_exact(graph: EdgeGraph, model: CrfModel, unary_offset: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Exhaustive MAP: the best of all 2^n labelings, lexicographically smallest on ties.

    Raises
    ------
    TooLarge
        If the graph has more than 20 nodes.
    """
    n = graph.n_nodes
    if n > MAX_EXACT_NODES:
        raise TooLarge(f"exhaustive search is limited to {MAX_EXACT_NODES} nodes, graph has {n}")
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    unary = unary_scores(graph, model)
    if unary_offset is not None:
        unary = unary + unary_offset
    pair = pairwise_scores(graph, model)
    codes = np.arange(2**n, dtype=np.int64)
    # node 0 is the most significant bit, so code order is lexicographic order
    bits = [(codes >> (n - 1 - i)) & 1 for i in range(n)]
    scores = np.zeros(len(codes))
    for i in range(n):
        scores += unary[i][bits[i]]
    for k, (i, j) in enumerate(graph.edges):
        scores += pair[k][bits[i], bits[j]]
    best = int(np.argmax(scores))
    return np.array([(best >> (n - 1 - i)) & 1 for i in range(n)], dtype=np.int64)


def predict_labels(raw_graph: EdgeGraph, model: CrfModel, max_iters: int = 50, damping: float = 0.5) -> np.ndarray:
    """Normalise a raw graph with the model statistics and decode it."""
    graph = raw_graph.normalized(model.feature_mean, model.feature_std)
    return map_inference(graph, model, max_iters=max_iters, damping=damping)
