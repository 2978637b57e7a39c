# salprop/features.py
"""
Per-edgelet low-level features and the CRF node/link feature vectors.

Node vector order is fixed: [f_G, DoG1, DoG2, LoG1, LoG2, f_LTP, strength].
Link vector order: [up_down, right_left, mean_diff, var_diff].

All per-edgelet features are independent of the order in which the
edgelet's pixels are listed.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .common import fallback_message
from .edges import EdgeMap, Edgelet, oriented_gradients
from .imagio import LabImage, ScalarField

logger = logging.getLogger(__name__)

NODE_DIM = 7
LINK_DIM = 4
NODE_FIELDS = ("f_G", "DoG1", "DoG2", "LoG1", "LoG2", "f_LTP", "strength")
LINK_FIELDS = ("up_down", "right_left", "mean_diff", "var_diff")

# LTP neighbours as (dx, dy), clockwise from the top-left; bit b has weight 2**b.
LTP_OFFSETS = ((-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0))

# DoG is G(1.6 s) - G(s).
DOG_RATIO = 1.6


@dataclass(frozen=True)
class NodeFeatures:
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.shape != (NODE_DIM,):
            raise ValueError(f"node features have {NODE_DIM} entries, got {values.shape[0]}")
        if not np.all(np.isfinite(values)):
            raise ValueError("node features must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def f_G(self) -> float:
        return float(self.values[0])

    @property
    def f_LTP(self) -> float:
        return float(self.values[5])

    @property
    def strength(self) -> float:
        return float(self.values[6])


@dataclass(frozen=True)
class LinkFeatures:
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.shape != (LINK_DIM,):
            raise ValueError(f"link features have {LINK_DIM} entries, got {values.shape[0]}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def up_down(self) -> int:
        return int(self.values[0])

    @property
    def right_left(self) -> int:
        return int(self.values[1])

    @property
    def mean_diff(self) -> float:
        return float(self.values[2])

    @property
    def var_diff(self) -> float:
        return float(self.values[3])


@dataclass(frozen=True)
class TextureContext:
    """Ascending per-family variances of the two patches beside an edgelet."""

    dog1: float
    dog2: float
    log1: float
    log2: float
    degenerate: bool = False
    seed: int = 0

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return self.dog1, self.dog2, self.log1, self.log2


def _canonical(pixels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates sorted in raster order, returned as (xs, ys)."""
    pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    order = np.lexsort((pixels[:, 0], pixels[:, 1]))
    return pixels[order, 0], pixels[order, 1]


# ---------------------------------------------------------------- filter stacks
def color_gradient_stack(lab: LabImage, sigma: float = 1.0) -> np.ndarray:
    """(4, H, W) oriented gradient magnitudes summed over the L, a and b channels."""
    return sum(oriented_gradients(ch, sigma) for ch in lab.channels())


def dog_stack(values: np.ndarray, k: float = 0.5) -> np.ndarray:
    """(2, H, W) difference-of-Gaussians responses at scales k and 2k."""
    values = np.asarray(values, dtype=np.float64)
    return np.stack(
        [ndimage.gaussian_filter(values, DOG_RATIO * s) - ndimage.gaussian_filter(values, s) for s in (k, 2 * k)]
    )


def log_stack(values: np.ndarray, k: float = 0.5) -> np.ndarray:
    """(3, H, W) scale-normalised Laplacian-of-Gaussian responses at k, 2k and 4k."""
    values = np.asarray(values, dtype=np.float64)
    return np.stack([s * s * ndimage.gaussian_laplace(values, s) for s in (k, 2 * k, 4 * k)])


@dataclass
class FeatureContext:
    """
    Filter responses of one image, computed once and shared by all its edgelets.

    Attributes
    ----------
    gradients : np.ndarray
        (4, H, W) colour-gradient stack for f_G.
    padded_luminance : np.ndarray
        Luminance with a one-pixel replicated border for LTP codes.
    dog, log : np.ndarray
        (2, H, W) and (3, H, W) texture filter responses.
    """

    gradients: np.ndarray
    padded_luminance: np.ndarray
    dog: np.ndarray
    log: np.ndarray
    shape: Tuple[int, int] = field(default=(0, 0))

    @classmethod
    def build(cls, lab: LabImage, luminance: ScalarField, sigma: float = 1.0, k: float = 0.5) -> "FeatureContext":
        lum = luminance.values
        return cls(
            gradients=color_gradient_stack(lab, sigma),
            padded_luminance=np.pad(lum, 1, mode="edge"),
            dog=dog_stack(lum, k),
            log=log_stack(lum, k),
            shape=lum.shape,
        )


# ---------------------------------------------------------------- f_G
def color_gradient_feature(
    edgelet: Edgelet,
    lab: Optional[LabImage] = None,
    sigma: float = 1.0,
    gradients: Optional[np.ndarray] = None,
) -> float:
    """
    Colour-gradient energy of an edgelet.

    For each of the four orientations the gradient magnitudes of all member
    pixels are summed; the result is the Euclidean norm of those four sums.

    Parameters
    ----------
    edgelet : Edgelet
    lab : LabImage, optional
        Source image; ignored when ``gradients`` is given.
    sigma : float
        Gaussian derivative scale.
    gradients : np.ndarray, optional
        Precomputed (4, H, W) stack, see :func:`color_gradient_stack`.
    """
    if gradients is None:
        if lab is None:
            raise ValueError("either lab or gradients is required")
        gradients = color_gradient_stack(lab, sigma)
    xs, ys = _canonical(edgelet.pixels)
    sums = np.asarray(gradients)[:, ys, xs].sum(axis=1)
    return float(math.sqrt(float(np.dot(sums, sums))))


# ---------------------------------------------------------------- f_LTP
def ltp_codes(padded: np.ndarray, xs: np.ndarray, ys: np.ndarray, T: float = 5.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Upper and lower binary pattern codes of the given pixels.

    ``padded`` is the intensity image with a one-pixel replicated border.
    A neighbour sets its bit in the upper code when it is at least T brighter
    than the centre, and in the lower code when it is at least T darker.
    """
    center = padded[ys + 1, xs + 1]
    upper = np.zeros(len(xs), dtype=np.int64)
    lower = np.zeros(len(xs), dtype=np.int64)
    for bit, (dx, dy) in enumerate(LTP_OFFSETS):
        diff = padded[ys + 1 + dy, xs + 1 + dx] - center
        upper += (diff >= T).astype(np.int64) << bit
        lower += (diff <= -T).astype(np.int64) << bit
    return upper, lower


def ltp_feature(
    edgelet: Edgelet,
    luminance: Optional[ScalarField] = None,
    T: float = 5.0,
    padded: Optional[np.ndarray] = None,
) -> float:
    """Mean of the population variances of the upper and lower LTP codes over the edgelet."""
    if T <= 0:
        raise ValueError("LTP threshold must be positive")
    if padded is None:
        if luminance is None:
            raise ValueError("either luminance or padded is required")
        padded = np.pad(luminance.values, 1, mode="edge")
    xs, ys = _canonical(edgelet.pixels)
    upper, lower = ltp_codes(padded, xs, ys, T)
    return float((np.var(upper.astype(np.float64)) + np.var(lower.astype(np.float64))) / 2.0)


# ---------------------------------------------------------------- strength
def edge_strength(edgelet: Edgelet, emap: EdgeMap) -> float:
    xs, ys = _canonical(edgelet.pixels)
    return float(emap.magnitude[ys, xs].max())


# ---------------------------------------------------------------- texture context
def disc_pixels(cx: float, cy: float, radius: float, shape: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    """Integer pixels within ``radius`` of (cx, cy), clipped to the image, in raster order."""
    h, w = shape
    x0, x1 = max(0, int(math.floor(cx - radius))), min(w - 1, int(math.ceil(cx + radius)))
    y0, y1 = max(0, int(math.floor(cy - radius))), min(h - 1, int(math.ceil(cy + radius)))
    if x0 > x1 or y0 > y1:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    yy, xx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    inside = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius
    return xx[inside].astype(np.int64), yy[inside].astype(np.int64)


def context_regions(edgelet: Edgelet, radius: int, shape: Tuple[int, int]):
    """The two discs on either side of the edgelet, along its mean normal."""
    cx, cy = edgelet.centroid
    normal = edgelet.orientation + math.pi / 2
    off = radius + 1
    nx, ny = off * math.cos(normal), off * math.sin(normal)
    return (
        disc_pixels(cx + nx, cy + ny, radius, shape),
        disc_pixels(cx - nx, cy - ny, radius, shape),
    )


def _pooled_variance(stack: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> float:
    if len(xs) == 0:
        return 0.0
    return float(np.var(stack[:, ys, xs]))


def stratified_half(stack: np.ndarray, xs: np.ndarray, ys: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    Indices of half of the region pixels, at least one.

    Pixels are ranked by their squared deviation from the region's pooled
    mean response and paired off in rank order; one pixel of every pair is
    drawn. With an odd count one uniformly chosen pixel sits out first. Every
    pixel is kept with probability 1/2.
    """
    n = len(xs)
    if n < 2:
        return np.arange(n)
    values = stack[:, ys, xs]
    spread = ((values - values.mean()) ** 2).sum(axis=0)
    order = np.argsort(spread, kind="stable")
    if n % 2:
        order = np.delete(order, int(rng.integers(n)))
    pairs = order.reshape(-1, 2)
    return pairs[np.arange(len(pairs)), rng.integers(0, 2, size=len(pairs))]


def texture_context(
    edgelet: Edgelet,
    luminance: Optional[ScalarField] = None,
    k: float = 0.5,
    radius: int = 5,
    seed: int = 42,
    responses: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    sample: bool = True,
) -> TextureContext:
    """
    DoG and LoG texture variances of the two patches beside an edgelet.

    Half of each disc's pixels (at least one) are drawn by
    :func:`stratified_half`, separately for the DoG and the LoG family, from a
    generator seeded with ``(seed, edgelet.id)``. For each region the DoG
    responses of the sampled pixels at both scales are pooled into one
    variance, and likewise for the three LoG scales. The two region values
    are returned in ascending order per family.

    When both discs fall outside the image the result is all zeros with
    ``degenerate`` set.

    Parameters
    ----------
    responses : (dog, log), optional
        Precomputed filter stacks; otherwise built from ``luminance``.
    sample : bool
        False evaluates every disc pixel instead of a random half.
    """
    if k <= 0 or radius < 1:
        raise ValueError("texture context needs k > 0 and radius >= 1")
    if responses is None:
        if luminance is None:
            raise ValueError("either luminance or responses is required")
        responses = (dog_stack(luminance.values, k), log_stack(luminance.values, k))
    dog, log = responses
    shape = dog.shape[1:]
    regions = context_regions(edgelet, radius, shape)
    if all(len(xs) == 0 for xs, _ys in regions):
        fallback_message("Texture context", f"edgelet {edgelet.id}: both patches lie outside the image", "zero variances")
        return TextureContext(0.0, 0.0, 0.0, 0.0, degenerate=True, seed=seed)

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(edgelet.id)]))
    dog_var, log_var = [], []
    for xs, ys in regions:
        for stack, out in ((dog, dog_var), (log, log_var)):
            if sample:
                pick = stratified_half(stack, xs, ys, rng)
                out.append(_pooled_variance(stack, xs[pick], ys[pick]))
            else:
                out.append(_pooled_variance(stack, xs, ys))
    dog_var.sort()
    log_var.sort()
    return TextureContext(dog_var[0], dog_var[1], log_var[0], log_var[1], seed=seed)


# ---------------------------------------------------------------- vectors
def node_features(
    edgelet: Edgelet,
    lab: LabImage,
    luminance: ScalarField,
    emap: EdgeMap,
    config,
    context: Optional[FeatureContext] = None,
) -> NodeFeatures:
    """
    Assemble the 7-D node vector of one edgelet.

    ``config`` supplies ``sigma``, ``T``, ``k``, ``radius`` and ``seed``
    (a :class:`salprop.config.RunConfig`).
    """
    if context is None:
        context = FeatureContext.build(lab, luminance, sigma=config.sigma, k=config.k)
    f_g = color_gradient_feature(edgelet, gradients=context.gradients)
    tex = texture_context(
        edgelet, k=config.k, radius=config.radius, seed=config.seed, responses=(context.dog, context.log)
    )
    f_ltp = ltp_feature(edgelet, T=config.T, padded=context.padded_luminance)
    strength = edge_strength(edgelet, emap)
    return NodeFeatures(np.array([f_g, *tex.as_tuple(), f_ltp, strength]))


def compute_node_features(
    edgelets: Sequence[Edgelet],
    lab: LabImage,
    luminance: ScalarField,
    emap: EdgeMap,
    config,
) -> List[NodeFeatures]:
    """Node vectors for every edgelet of one image, sharing one FeatureContext."""
    if not edgelets:
        return []
    context = FeatureContext.build(lab, luminance, sigma=config.sigma, k=config.k)
    feats = [node_features(e, lab, luminance, emap, config, context=context) for e in edgelets]
    logger.debug("computed node features for %d edgelets", len(feats))
    return feats


def link_features(f_i, c_i: Tuple[float, float], f_j, c_j: Tuple[float, float]) -> LinkFeatures:
    """
    Relative position and feature-difference statistics of a node pair.

    up_down is 1 when i lies above j (smaller y), right_left is 1 when i lies
    to the right of j. ``f_i`` and ``f_j`` may be NodeFeatures or plain vectors.
    """
    vi = np.asarray(getattr(f_i, "values", f_i), dtype=np.float64)
    vj = np.asarray(getattr(f_j, "values", f_j), dtype=np.float64)
    d = vi - vj
    return LinkFeatures(
        np.array(
            [
                1.0 if c_i[1] < c_j[1] else 0.0,
                1.0 if c_i[0] > c_j[0] else 0.0,
                float(np.mean(d)),
                float(np.var(d)),
            ]
        )
    )
