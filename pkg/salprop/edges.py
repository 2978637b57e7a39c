# salprop/edges.py
"""
Edge maps and edgelets.

An edge map carries a per-pixel magnitude in [0, 255] and an edge orientation
in [0, pi). Maps come either from an EMAP file written by an external boundary
detector or from the built-in oriented Gaussian-derivative detector. After
pixel-level non-maximum suppression, strong pixels are chained into edgelets.

EMAP layout (little-endian):
    bytes 0-3    b"EMAP"
    bytes 4-7    width  (uint32)
    bytes 8-11   height (uint32)
    then width*height float32 magnitudes, row-major
    then width*height float32 orientations (radians), row-major
"""

import logging
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from .common import (
    AlreadySparse,
    BadMagic,
    BadValue,
    NotSparse,
    SizeMismatch,
    Truncated,
    atomic_write_bytes,
    fallback_message,
)
from .imagio import LabImage

logger = logging.getLogger(__name__)

EMAP_MAGIC = b"EMAP"
_HEADER = struct.Struct("<4sII")

# Gradient directions checked by the built-in detector and the colour-gradient feature.
ORIENTATIONS = np.deg2rad([0.0, 45.0, 90.0, 135.0])

# Responses below this are treated as an image without any gradient.
FLAT_EPS = 1e-9

# Ring order used for the crossing number: N, NE, E, SE, S, SW, W, NW as (dy, dx).
_RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))
# Walk preference: 4-neighbours first, then diagonals.
_STEPS = ((0, 1), (1, 0), (0, -1), (-1, 0), (1, 1), (1, -1), (-1, -1), (-1, 1))


@dataclass(frozen=True)
class EdgeMap:
    """
    Dense edge magnitude and orientation grids of one image.

    Attributes
    ----------
    magnitude : np.ndarray
        (height, width) values in [0, 255].
    orientation : np.ndarray
        (height, width) edge direction in radians, [0, pi). An orientation of
        pi/2 is a vertical edge (the gradient points along x).
    sparse : bool
        True once non-maximum suppression has been applied.
    flat : bool
        True when the detector found no gradient at all.
    """

    magnitude: np.ndarray
    orientation: np.ndarray
    sparse: bool = False
    flat: bool = False

    def __post_init__(self):
        mag = np.array(self.magnitude, dtype=np.float64)
        ori = np.array(self.orientation, dtype=np.float64)
        if mag.ndim != 2 or mag.shape != ori.shape:
            raise BadValue(f"magnitude {mag.shape} and orientation {ori.shape} grids must match")
        if not (np.all(np.isfinite(mag)) and np.all(np.isfinite(ori))):
            raise BadValue("edge map contains NaN or Inf")
        if mag.size and (mag.min() < 0.0 or mag.max() > 255.0):
            raise BadValue("edge magnitude outside [0, 255]")
        if ori.size and (ori.min() < 0.0 or ori.max() >= math.pi):
            raise BadValue("edge orientation outside [0, pi)")
        mag.setflags(write=False)
        ori.setflags(write=False)
        object.__setattr__(self, "magnitude", mag)
        object.__setattr__(self, "orientation", ori)

    @property
    def width(self) -> int:
        return int(self.magnitude.shape[1])

    @property
    def height(self) -> int:
        return int(self.magnitude.shape[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width


@dataclass(frozen=True)
class Edgelet:
    """
    One edge segment: an ordered, 8-connected chain of edge pixels.

    ``pixels`` holds (x, y) integer coordinates, ``magnitudes`` the edge
    magnitude of each pixel and ``orientation`` the mean edge direction.
    """

    id: int
    pixels: np.ndarray
    magnitudes: np.ndarray
    orientation: float = 0.0

    def __post_init__(self):
        pixels = np.array(self.pixels, dtype=np.int64).reshape(-1, 2)
        mags = np.array(self.magnitudes, dtype=np.float64).reshape(-1)
        if len(pixels) != len(mags):
            raise ValueError("one magnitude per pixel is required")
        pixels.setflags(write=False)
        mags.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "magnitudes", mags)

    @property
    def length(self) -> int:
        return int(len(self.pixels))

    @property
    def strength(self) -> float:
        """Maximum member magnitude."""
        return float(self.magnitudes.max()) if len(self.magnitudes) else 0.0

    @property
    def centroid(self) -> Tuple[float, float]:
        c = self.pixels.mean(axis=0)
        return float(c[0]), float(c[1])

    @property
    def bbox(self) -> Tuple[int, int, int, int]:
        """Inclusive (x0, y0, x1, y1) of the member pixels."""
        lo = self.pixels.min(axis=0)
        hi = self.pixels.max(axis=0)
        return int(lo[0]), int(lo[1]), int(hi[0]), int(hi[1])

    @property
    def endpoints(self) -> np.ndarray:
        return self.pixels[[0, -1]]


def mean_orientation(angles: np.ndarray) -> float:
    """Circular mean of axial angles (period pi), in [0, pi)."""
    angles = np.sort(np.asarray(angles, dtype=np.float64).reshape(-1))
    if angles.size == 0:
        return 0.0
    phi = 0.5 * math.atan2(float(np.sin(2 * angles).sum()), float(np.cos(2 * angles).sum()))
    phi = phi % math.pi
    return 0.0 if phi >= math.pi else phi


def make_edgelet(edgelet_id: int, pixels, emap: EdgeMap) -> Edgelet:
    """Build an Edgelet from (x, y) pixels, reading magnitudes and orientations from ``emap``."""
    pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    xs, ys = pixels[:, 0], pixels[:, 1]
    return Edgelet(
        id=edgelet_id,
        pixels=pixels,
        magnitudes=emap.magnitude[ys, xs],
        orientation=mean_orientation(emap.orientation[ys, xs]),
    )


# ---------------------------------------------------------------- EMAP codec
def read_edge_map(path: os.PathLike) -> EdgeMap:
    """
    Read an EMAP file.

    Raises
    ------
    FileNotFoundError
        If the file does not exist.
    BadMagic
        If the first four bytes are not b"EMAP".
    Truncated
        If the payload is shorter than the header promises.
    BadValue
        On zero dimensions, NaN/Inf, magnitudes outside [0, 255] or
        orientations outside [0, pi).
    """
    raw = Path(path).read_bytes()
    if raw[:4] != EMAP_MAGIC:
        raise BadMagic(f"{path}: not an EMAP file (magic {raw[:4]!r})")
    if len(raw) < _HEADER.size:
        raise Truncated(f"{path}: header is {len(raw)} bytes, expected {_HEADER.size}")
    _magic, width, height = _HEADER.unpack_from(raw, 0)
    if width == 0 or height == 0:
        raise BadValue(f"{path}: empty edge map ({width}x{height})")
    n = width * height
    expected = _HEADER.size + 8 * n
    if len(raw) < expected:
        raise Truncated(f"{path}: payload holds {len(raw) - _HEADER.size} bytes, header promises {8 * n}")
    if len(raw) > expected:
        logger.debug("%s: ignoring %d trailing bytes", path, len(raw) - expected)
    mag = np.frombuffer(raw, dtype="<f4", count=n, offset=_HEADER.size).reshape(height, width)
    ori = np.frombuffer(raw, dtype="<f4", count=n, offset=_HEADER.size + 4 * n).reshape(height, width)
    return EdgeMap(magnitude=mag.astype(np.float64), orientation=ori.astype(np.float64), sparse=False)


def write_edge_map(emap: EdgeMap, path: os.PathLike) -> Path:
    """Write ``emap`` in EMAP layout; values are stored as float32."""
    header = _HEADER.pack(EMAP_MAGIC, emap.width, emap.height)
    payload = (
        header
        + emap.magnitude.astype("<f4").tobytes(order="C")
        + emap.orientation.astype("<f4").tobytes(order="C")
    )
    return atomic_write_bytes(path, payload)


# ---------------------------------------------------------------- detection
def oriented_gradients(channel: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    """
    Absolute Gaussian-derivative responses of one channel.

    Returns
    -------
    np.ndarray
        (4, height, width) responses for gradient directions 0, 45, 90 and 135 degrees.
    """
    channel = np.asarray(channel, dtype=np.float64)
    gx = ndimage.gaussian_filter(channel, sigma, order=(0, 1))
    gy = ndimage.gaussian_filter(channel, sigma, order=(1, 0))
    return np.stack([np.abs(math.cos(t) * gx + math.sin(t) * gy) for t in ORIENTATIONS])


def detect_edges_builtin(lab: LabImage, sigma: float = 1.0) -> EdgeMap:
    """
    Built-in edge detector used when no EMAP file is supplied.

    Per pixel the strongest oriented response over the L, a and b channels is
    kept, scaled to [0, 255] by the image-wide maximum. The orientation is the
    edge direction, i.e. the winning gradient direction plus 90 degrees.
    An image without any gradient yields an all-zero map flagged ``flat``.
    """
    per_channel = np.stack([oriented_gradients(ch, sigma) for ch in lab.channels()])
    responses = per_channel.max(axis=0)  # (4, H, W)
    best = responses.argmax(axis=0)
    strength = responses.max(axis=0)
    peak = float(strength.max())
    orientation = np.mod(ORIENTATIONS[best] + math.pi / 2, math.pi)
    orientation[orientation >= math.pi] = 0.0
    if peak < FLAT_EPS:
        fallback_message("Edge detector", "flat image, no gradient found", "an all-zero edge map")
        return EdgeMap(np.zeros(lab.shape), np.zeros(lab.shape), sparse=False, flat=True)
    magnitude = np.clip(strength * (255.0 / peak), 0.0, 255.0)
    return EdgeMap(magnitude=magnitude, orientation=orientation, sparse=False)


def non_max_suppress(emap: EdgeMap) -> EdgeMap:
    """
    Thin an edge map to one-pixel-wide ridges.

    A pixel survives when it is not weaker than either bilinearly interpolated
    neighbour one pixel away along its gradient direction (the normal to its
    edge orientation); the tie on the backward side goes to the forward pixel
    so that two-pixel plateaus keep exactly one pixel.

    Raises
    ------
    AlreadySparse
        If ``emap`` is already sparse.
    """
    if emap.sparse:
        raise AlreadySparse("non-maximum suppression has already been applied")
    mag = emap.magnitude
    grad_dir = emap.orientation - math.pi / 2
    dx = np.cos(grad_dir)
    dy = np.sin(grad_dir)
    yy, xx = np.mgrid[0 : emap.height, 0 : emap.width].astype(np.float64)
    forward = ndimage.map_coordinates(mag, [yy + dy, xx + dx], order=1, mode="constant", cval=0.0)
    backward = ndimage.map_coordinates(mag, [yy - dy, xx - dx], order=1, mode="constant", cval=0.0)
    keep = (mag > 0.0) & (mag >= forward) & (mag > backward)
    thin = np.where(keep, mag, 0.0)
    logger.debug("NMS kept %d of %d non-zero pixels", int(keep.sum()), int((mag > 0).sum()))
    return EdgeMap(magnitude=thin, orientation=emap.orientation, sparse=True, flat=emap.flat)


# ---------------------------------------------------------------- grouping
def crossing_runs(mask: np.ndarray) -> np.ndarray:
    """
    Number of separate neighbour runs around each pixel (crossing number).

    0 for isolated pixels, 1 for chain ends, 2 for chain interiors and 3 or
    more at junctions.
    """
    padded = np.pad(np.asarray(mask, dtype=bool), 1)
    h, w = mask.shape
    ring = [padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w] for dy, dx in _RING]
    runs = np.zeros(mask.shape, dtype=np.int64)
    for i in range(8):
        runs += (~ring[i - 1]) & ring[i]
    return runs


def _trace(start, mask, visited, orientation, junction) -> List[List[Tuple[int, int]]]:
    """Walk one chain from ``start``, splitting it where orientation drift reaches pi/2."""
    h, w = mask.shape
    y, x = start
    visited[y, x] = True
    groups: List[List[Tuple[int, int]]] = []
    current = [(x, y)]
    drift = 0.0
    while True:
        step = None
        for dy, dx in _STEPS:
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not visited[ny, nx]:
                step = (ny, nx)
                break
        if step is None:
            break
        ny, nx = step
        diff = abs(float(orientation[ny, nx]) - float(orientation[y, x]))
        drift += min(diff, math.pi - diff)
        visited[ny, nx] = True
        if drift >= math.pi / 2:
            groups.append(current)
            current = [(nx, ny)]
            drift = 0.0
        else:
            current.append((nx, ny))
        y, x = ny, nx
        if junction[y, x]:
            break
    groups.append(current)
    return groups


def extract_edgelets(emap: EdgeMap, min_len: int = 15, min_mag: float = 40.0) -> List[Edgelet]:
    """
    Group strong sparse edge pixels into edgelets.

    Pixels with magnitude > ``min_mag`` are chained greedily along 8-connected
    neighbours, starting from chain ends in raster order and then from any
    pixel left over (closed contours). A chain is cut when the accumulated
    orientation change since the last cut reaches pi/2, and it stops at a
    junction pixel, which stays with the first chain that reached it. Groups of
    ``min_len`` pixels or fewer are dropped.

    Raises
    ------
    NotSparse
        If ``emap`` has not been thinned by :func:`non_max_suppress`.
    """
    if not emap.sparse:
        raise NotSparse("edgelets are extracted from a sparse (NMS) edge map")
    mask = emap.magnitude > min_mag
    if not mask.any():
        return []
    runs = crossing_runs(mask)
    junction = runs >= 3
    visited = np.zeros(mask.shape, dtype=bool)
    ys, xs = np.nonzero(mask)
    ends = runs[ys, xs] <= 1
    starts = list(zip(ys[ends], xs[ends])) + list(zip(ys[~ends], xs[~ends]))

    groups: List[List[Tuple[int, int]]] = []
    for y, x in starts:
        if visited[y, x]:
            continue
        groups.extend(_trace((int(y), int(x)), mask, visited, emap.orientation, junction))

    edgelets: List[Edgelet] = []
    for group in groups:
        if len(group) > min_len:
            edgelets.append(make_edgelet(len(edgelets), group, emap))
    logger.debug("grouped %d chains into %d edgelets (min_len=%d)", len(groups), len(edgelets), min_len)
    return edgelets


def prepare_sparse_map(emap: Optional[EdgeMap], lab: LabImage, sigma: float = 1.0) -> EdgeMap:
    """Return a sparse map: thin ``emap`` if needed, or run the built-in detector when it is None."""
    if emap is None:
        emap = detect_edges_builtin(lab, sigma)
    if emap.shape != lab.shape:
        raise SizeMismatch(f"edge map is {emap.width}x{emap.height}, image is {lab.width}x{lab.height}")
    return emap if emap.sparse else non_max_suppress(emap)
