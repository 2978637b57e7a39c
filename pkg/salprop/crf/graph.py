# salprop/crf/graph.py
"""
Edge feature graph: one node per edgelet, links between spatially close edgelets.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from sklearn.cluster import KMeans

from ..common import SizeMismatch
from ..edges import Edgelet
from ..features import LINK_DIM, NODE_DIM, NodeFeatures, link_features

logger = logging.getLogger(__name__)


def as_labeling(labels, n_nodes: Optional[int] = None) -> np.ndarray:
    """Validate a labeling: one 0 (non-object) or 1 (object) per node."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    if n_nodes is not None and len(labels) != n_nodes:
        raise SizeMismatch(f"labeling has {len(labels)} entries, graph has {n_nodes} nodes")
    return labels


@dataclass(frozen=True)
class EdgeGraph:
    """
    Nodes, links and their feature vectors.

    Attributes
    ----------
    node_ids : tuple of int
        Edgelet id of each node.
    nodes : np.ndarray
        (n, 7) node feature matrix.
    edges : np.ndarray
        (m, 2) node index pairs with i < j, sorted, without duplicates.
    links : np.ndarray
        (m, 4) link feature matrix aligned with ``edges``.
    centroids : np.ndarray
        (n, 2) edgelet centroids (x, y), needed to recompute link features.
    """

    node_ids: Tuple[int, ...]
    nodes: np.ndarray
    edges: np.ndarray
    links: np.ndarray
    centroids: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=np.float64).reshape(-1, NODE_DIM)
        edges = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        links = np.array(self.links, dtype=np.float64).reshape(-1, LINK_DIM)
        centroids = np.array(self.centroids, dtype=np.float64).reshape(-1, 2)
        n = len(nodes)
        if len(self.node_ids) != n or len(centroids) != n:
            raise SizeMismatch("node ids, features and centroids must align")
        if len(links) != len(edges):
            raise SizeMismatch("one link feature vector per edge is required")
        if len(edges):
            if np.any(edges[:, 0] >= edges[:, 1]) or edges.min() < 0 or edges.max() >= n:
                raise ValueError("edges must be (i, j) node indices with i < j")
            if len(np.unique(edges, axis=0)) != len(edges):
                raise ValueError("duplicate edges")
        for name, arr in (("nodes", nodes), ("edges", edges), ("links", links), ("centroids", centroids)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "node_ids", tuple(int(i) for i in self.node_ids))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_links(self) -> int:
        return len(self.edges)

    def adjacency(self) -> List[List[int]]:
        adj: List[List[int]] = [[] for _ in range(self.n_nodes)]
        for i, j in self.edges:
            adj[i].append(int(j))
            adj[j].append(int(i))
        return adj

    def normalized(self, mean, std) -> "EdgeGraph":
        """Copy with z-scored node features and link features recomputed from them."""
        nodes = (self.nodes - np.asarray(mean)) / np.asarray(std)
        links = _link_matrix(nodes, self.centroids, self.edges)
        return EdgeGraph(self.node_ids, nodes, self.edges, links, self.centroids)

    @classmethod
    def from_arrays(cls, nodes, edges=(), centroids=None, node_ids=None) -> "EdgeGraph":
        """Build a graph from raw arrays, computing link features from node vectors."""
        nodes = np.asarray(nodes, dtype=np.float64).reshape(-1, NODE_DIM)
        n = len(nodes)
        edges = np.asarray(sorted({(min(i, j), max(i, j)) for i, j in edges}), dtype=np.int64).reshape(-1, 2)
        centroids = np.zeros((n, 2)) if centroids is None else np.asarray(centroids, dtype=np.float64)
        node_ids = tuple(range(n)) if node_ids is None else tuple(node_ids)
        return cls(node_ids, nodes, edges, _link_matrix(nodes, centroids, edges), centroids)


@dataclass(frozen=True)
class TrainingSample:
    graph: EdgeGraph
    gold: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gold", as_labeling(self.gold, self.graph.n_nodes))


def _link_matrix(nodes: np.ndarray, centroids: np.ndarray, edges: np.ndarray) -> np.ndarray:
    if len(edges) == 0:
        return np.zeros((0, LINK_DIM))
    return np.stack(
        [link_features(nodes[i], centroids[i], nodes[j], centroids[j]).values for i, j in edges]
    )


def endpoint_distances(edgelets: Sequence[Edgelet]) -> np.ndarray:
    """(n, n) minimum distance between the endpoint pixels of each edgelet pair; inf on the diagonal."""
    ends = np.stack([e.endpoints.astype(np.float64) for e in edgelets])  # (n, 2, 2)
    diff = ends[:, None, :, None, :] - ends[None, :, None, :, :]  # (n, n, 2, 2, 2)
    dist = np.sqrt((diff**2).sum(axis=-1)).min(axis=(2, 3))
    np.fill_diagonal(dist, np.inf)
    return dist


def build_graph(
    edgelets: Sequence[Edgelet],
    node_features: Sequence[NodeFeatures],
    link_radius: float = 15.0,
    max_degree: int = 8,
) -> EdgeGraph:
    """
    Link edgelets whose endpoints come within ``link_radius`` pixels.

    Each node keeps at most ``max_degree`` nearest candidates (ties go to the
    lower id); a link is made when both ends keep each other, so no node
    exceeds the cap.
    """
    if len(edgelets) != len(node_features):
        raise SizeMismatch(f"{len(edgelets)} edgelets but {len(node_features)} feature vectors")
    n = len(edgelets)
    nodes = np.array([np.asarray(getattr(f, "values", f)) for f in node_features], dtype=np.float64).reshape(n, NODE_DIM)
    centroids = np.array([e.centroid for e in edgelets], dtype=np.float64).reshape(n, 2)
    ids = tuple(e.id for e in edgelets)
    if n < 2:
        return EdgeGraph(ids, nodes, np.zeros((0, 2)), np.zeros((0, LINK_DIM)), centroids)

    dist = endpoint_distances(edgelets)
    order = np.arange(n)
    kept = np.zeros((n, n), dtype=bool)
    for i in range(n):
        cand = np.flatnonzero(dist[i] <= link_radius)
        if len(cand) > max_degree:
            cand = cand[np.lexsort((order[cand], dist[i, cand]))][:max_degree]
        kept[i, cand] = True
    mutual = np.triu(kept & kept.T, k=1)
    edges = np.argwhere(mutual)
    logger.debug("edge graph: %d nodes, %d links", n, len(edges))
    return EdgeGraph(ids, nodes, edges, _link_matrix(nodes, centroids, edges), centroids)


def weak_labels(
    edgelets: Sequence[Edgelet],
    gt_mask: np.ndarray,
    boundary_tol: float = 2.0,
    image_shape: Optional[Tuple[int, int]] = None,
) -> np.ndarray:
    """
    Training labels derived from a binary object mask.

    An edgelet is object (1) when at least half of its pixels lie within
    ``boundary_tol`` of the mask boundary. Otherwise a two-cluster 1-D k-means
    on edgelet strengths, seeded with the minimum and maximum strength, marks
    the high cluster as object. With a single distinct strength only the
    boundary rule applies.

    Raises
    ------
    SizeMismatch
        If the mask shape differs from ``image_shape`` or an edgelet pixel
        falls outside the mask.
    """
    mask = np.asarray(gt_mask, dtype=bool)
    if image_shape is not None and mask.shape != tuple(image_shape):
        raise SizeMismatch(f"mask is {mask.shape[1]}x{mask.shape[0]}, image is {image_shape[1]}x{image_shape[0]}")
    labels = np.zeros(len(edgelets), dtype=np.int64)
    if not edgelets:
        return labels
    h, w = mask.shape
    for e in edgelets:
        xs, ys = e.pixels[:, 0], e.pixels[:, 1]
        if xs.min() < 0 or ys.min() < 0 or xs.max() >= w or ys.max() >= h:
            raise SizeMismatch(f"edgelet {e.id} lies outside the {w}x{h} mask")

    boundary = mask & ~ndimage.binary_erosion(mask, border_value=1)
    if boundary.any():
        dist = ndimage.distance_transform_edt(~boundary)
    else:
        dist = np.full(mask.shape, np.inf)
    for idx, e in enumerate(edgelets):
        near = dist[e.pixels[:, 1], e.pixels[:, 0]] <= boundary_tol
        if near.mean() >= 0.5:
            labels[idx] = 1

    strengths = np.array([e.strength for e in edgelets], dtype=np.float64)
    if np.unique(strengths).size < 2:
        logger.debug("weak labels: all strengths equal, boundary rule only")
        return labels
    km = KMeans(
        n_clusters=2,
        init=np.array([[strengths.min()], [strengths.max()]]),
        n_init=1,
        tol=0.0,
        max_iter=300,
    ).fit(strengths[:, None])
    high = int(np.argmax(km.cluster_centers_[:, 0]))
    labels[(labels == 0) & (km.labels_ == high)] = 1
    logger.debug("weak labels: %d of %d edgelets marked object", int(labels.sum()), len(labels))
    return labels
