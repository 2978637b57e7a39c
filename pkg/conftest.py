# conftest.py
"""Shared synthetic scenes, edge maps and models for the test suite."""

import numpy as np
import pytest
from PIL import Image

from salprop.config import build_config
from salprop.crf import CrfModel
from salprop.edges import EdgeMap
from salprop.features import NODE_DIM

# White rectangle of the synthetic scene as (x, y, w, h).
RECT = (24, 30, 48, 36)
CLUTTER_GREY = 90


def scene_array(size: int = 96, rect=RECT, clutter: bool = True) -> np.ndarray:
    """Black image with one white rectangle and, optionally, two faint grey bars."""
    img = np.zeros((size, size, 3), dtype=np.uint8)
    x, y, w, h = rect
    img[y : y + h, x : x + w] = 255
    if clutter:
        img[8:10, 10:61] = CLUTTER_GREY
        img[10:81, 85:87] = CLUTTER_GREY
    return img


def rect_mask(size: int = 96, rect=RECT) -> np.ndarray:
    mask = np.zeros((size, size), dtype=np.uint8)
    x, y, w, h = rect
    mask[y : y + h, x : x + w] = 255
    return mask


def strength_model() -> CrfModel:
    """Labels an edgelet object exactly when its strength exceeds 150; no pairwise terms."""
    W1 = np.zeros((2, NODE_DIM))
    W1[0, 6] = -1.0
    W1[1, 6] = 1.0
    mean = np.zeros(NODE_DIM)
    std = np.ones(NODE_DIM)
    mean[6] = 150.0
    std[6] = 50.0
    return CrfModel(W1=W1, W2=np.zeros((4, 4)), feature_mean=mean, feature_std=std)


@pytest.fixture
def config():
    return build_config({}, env={})


@pytest.fixture
def scene():
    return scene_array()


@pytest.fixture
def model():
    return strength_model()


@pytest.fixture
def write_png(tmp_path):
    """Save an array as PNG under tmp_path and return the path."""

    def _write(array, name="image.png"):
        path = tmp_path / name
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path)
        return path

    return _write


@pytest.fixture
def sparse_map():
    """Build a sparse EdgeMap of the given shape from {(x, y): magnitude} and one orientation per pixel."""

    def _build(shape, pixels, orientation=0.0):
        mag = np.zeros(shape)
        ori = np.zeros(shape)
        for (x, y), value in pixels.items():
            mag[y, x] = value
            ori[y, x] = orientation(x, y) if callable(orientation) else orientation
        return EdgeMap(mag, ori, sparse=True)

    return _build


@pytest.fixture
def horizontal_chain():
    """Pixels of a horizontal run: {(x, y): magnitude}."""

    def _chain(x0, y, length, magnitude=100.0):
        return {(x0 + i, y): magnitude for i in range(length)}

    return _chain

