import math
import struct

import numpy as np
import pytest

from salprop.common import AlreadySparse, BadMagic, BadValue, NotSparse, SizeMismatch, Truncated
from salprop.edges import (
    EdgeMap,
    Edgelet,
    crossing_runs,
    detect_edges_builtin,
    extract_edgelets,
    make_edgelet,
    mean_orientation,
    non_max_suppress,
    prepare_sparse_map,
    read_edge_map,
    write_edge_map,
)
from salprop.imagio import LabImage, RgbImage, rgb_to_lab


def _emap_bytes(width, height, mags, oris, magic=b"EMAP"):
    header = struct.pack("<4sII", magic, width, height)
    return header + np.asarray(mags, dtype="<f4").tobytes() + np.asarray(oris, dtype="<f4").tobytes()


def _lab_from_L(L):
    L = np.asarray(L, dtype=np.float64)
    return LabImage(L=L, a=np.zeros_like(L), b=np.zeros_like(L))


class TestEmapCodec:
    def test_read_4x4(self, tmp_path):
        mags = np.arange(16, dtype=np.float32)
        oris = np.full(16, 0.5, dtype=np.float32)
        path = tmp_path / "m.emap"
        path.write_bytes(_emap_bytes(4, 4, mags, oris))
        emap = read_edge_map(path)
        assert emap.shape == (4, 4)
        assert not emap.sparse
        np.testing.assert_array_equal(emap.magnitude, mags.reshape(4, 4))
        np.testing.assert_array_equal(emap.orientation, 0.5)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.emap"
        path.write_bytes(_emap_bytes(4, 4, np.zeros(16), np.zeros(16), magic=b"XXXX"))
        with pytest.raises(BadMagic):
            read_edge_map(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "m.emap"
        path.write_bytes(struct.pack("<4sII", b"EMAP", 100, 100) + np.zeros(50, dtype="<f4").tobytes())
        with pytest.raises(Truncated):
            read_edge_map(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "m.emap"
        path.write_bytes(b"EMAP\x04\x00")
        with pytest.raises(Truncated):
            read_edge_map(path)

    @pytest.mark.parametrize(
        "mag, ori",
        [(float("nan"), 0.0), (256.0, 0.0), (-1.0, 0.0), (10.0, math.pi), (10.0, -0.1)],
    )
    def test_bad_values(self, tmp_path, mag, ori):
        mags = np.full(4, 10.0)
        oris = np.zeros(4)
        mags[2], oris[2] = mag, ori
        path = tmp_path / "m.emap"
        path.write_bytes(_emap_bytes(2, 2, mags, oris))
        with pytest.raises(BadValue):
            read_edge_map(path)

    def test_zero_dimensions(self, tmp_path):
        path = tmp_path / "m.emap"
        path.write_bytes(struct.pack("<4sII", b"EMAP", 0, 5))
        with pytest.raises(BadValue):
            read_edge_map(path)

    def test_write_then_read_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        mag = rng.uniform(0, 255, (9, 13)).astype(np.float32).astype(np.float64)
        ori = rng.uniform(0, 3.14, (9, 13)).astype(np.float32).astype(np.float64)
        path = write_edge_map(EdgeMap(mag, ori), tmp_path / "out.emap")
        again = read_edge_map(path)
        np.testing.assert_array_equal(again.magnitude, mag)
        np.testing.assert_array_equal(again.orientation, ori)
        assert path.read_bytes()[:4] == b"EMAP"
        assert len(path.read_bytes()) == 12 + 8 * 9 * 13


class TestBuiltinDetector:
    def test_constant_image_is_flat(self):
        emap = detect_edges_builtin(_lab_from_L(np.full((20, 20), 50.0)))
        assert emap.flat
        assert np.all(emap.magnitude == 0.0)

    def test_vertical_step(self):
        L = np.zeros((32, 32))
        L[:, 16:] = 100.0
        emap = detect_edges_builtin(_lab_from_L(L))
        assert not emap.flat
        assert emap.magnitude[:, 15:17].max() == pytest.approx(255.0)
        assert emap.magnitude[:, :12].max() < 5.0
        assert emap.orientation[16, 15] == pytest.approx(math.pi / 2)

    def test_disk_gives_a_ring(self):
        yy, xx = np.mgrid[0:48, 0:48]
        r = np.hypot(xx - 24, yy - 24)
        rgb = np.where(r <= 12, 255, 0).astype(np.uint8)
        emap = detect_edges_builtin(rgb_to_lab(RgbImage(np.repeat(rgb[:, :, None], 3, axis=2))))
        ring = np.abs(r - 12) <= 1.5
        assert emap.magnitude[ring].mean() > 100.0
        assert emap.magnitude[r < 6].max() < 1.0
        assert emap.magnitude[r > 18].max() < 1.0

    def test_values_in_range(self):
        rng = np.random.default_rng(0)
        rgb = rng.integers(0, 256, (24, 24, 3)).astype(np.uint8)
        emap = detect_edges_builtin(rgb_to_lab(RgbImage(rgb)))
        assert emap.magnitude.min() >= 0.0 and emap.magnitude.max() <= 255.0
        assert emap.orientation.min() >= 0.0 and emap.orientation.max() < math.pi


class TestNms:
    def test_all_zero(self):
        out = non_max_suppress(EdgeMap(np.zeros((6, 6)), np.zeros((6, 6))))
        assert out.sparse
        assert np.all(out.magnitude == 0.0)

    def test_single_pixel_survives(self):
        mag = np.zeros((9, 9))
        mag[4, 4] = 100.0
        out = non_max_suppress(EdgeMap(mag, np.zeros((9, 9))))
        np.testing.assert_array_equal(out.magnitude, mag)

    def test_triangle_profile(self):
        mag = np.zeros((12, 12))
        mag[3:8, 2:10] = np.array([10.0, 20.0, 30.0, 20.0, 10.0])[:, None]
        out = non_max_suppress(EdgeMap(mag, np.zeros((12, 12))))
        kept = np.argwhere(out.magnitude > 0)
        assert set(kept[:, 0]) == {5}
        assert len(kept) == 8
        assert np.all(out.magnitude[5, 2:10] == 30.0)

    def test_already_sparse(self):
        with pytest.raises(AlreadySparse):
            non_max_suppress(EdgeMap(np.zeros((4, 4)), np.zeros((4, 4)), sparse=True))

    def test_no_stronger_neighbour_along_gradient(self):
        L = np.zeros((40, 40))
        yy, xx = np.mgrid[0:40, 0:40]
        L[np.hypot(xx - 20, yy - 20) <= 10] = 100.0
        dense = detect_edges_builtin(_lab_from_L(L))
        thin = non_max_suppress(dense)
        for y, x in np.argwhere(thin.magnitude > 0):
            g = dense.orientation[y, x] - math.pi / 2
            fy, fx = y + math.sin(g), x + math.cos(g)
            y0, x0 = int(math.floor(fy)), int(math.floor(fx))
            ty, tx = fy - y0, fx - x0
            m = dense.magnitude
            forward = (
                m[y0, x0] * (1 - ty) * (1 - tx)
                + m[y0, x0 + 1] * (1 - ty) * tx
                + m[y0 + 1, x0] * ty * (1 - tx)
                + m[y0 + 1, x0 + 1] * ty * tx
            )
            assert dense.magnitude[y, x] >= forward - 1e-9


class TestEdgelets:
    def test_empty_map(self):
        assert extract_edgelets(EdgeMap(np.zeros((8, 8)), np.zeros((8, 8)), sparse=True)) == []

    def test_requires_sparse(self):
        with pytest.raises(NotSparse):
            extract_edgelets(EdgeMap(np.zeros((8, 8)), np.zeros((8, 8))))

    def test_straight_chain(self, sparse_map, horizontal_chain):
        emap = sparse_map((40, 40), horizontal_chain(5, 10, 30))
        edgelets = extract_edgelets(emap)
        assert len(edgelets) == 1
        e = edgelets[0]
        assert e.length == 30
        assert e.strength == 100.0
        assert e.bbox == (5, 10, 34, 10)
        assert e.centroid == pytest.approx((19.5, 10.0))

    def test_alternating_magnitudes_vanish(self, sparse_map):
        pixels = {(5 + i, 10): (100.0 if i % 2 == 0 else 35.0) for i in range(30)}
        assert extract_edgelets(sparse_map((40, 40), pixels)) == []

    def test_length_threshold_is_strict(self, sparse_map, horizontal_chain):
        assert extract_edgelets(sparse_map((40, 40), horizontal_chain(5, 10, 15))) == []
        assert len(extract_edgelets(sparse_map((40, 40), horizontal_chain(5, 10, 16)))) == 1

    def test_magnitude_threshold_is_strict(self, sparse_map, horizontal_chain):
        assert extract_edgelets(sparse_map((40, 40), horizontal_chain(5, 10, 30, magnitude=40.0))) == []

    def test_l_shape_splits_at_the_bend(self, sparse_map):
        pixels = {(x, 10): 100.0 for x in range(5, 25)}
        pixels.update({(24, y): 100.0 for y in range(11, 31)})

        def orientation(x, y):
            return 0.0 if y == 10 else math.pi / 2

        edgelets = extract_edgelets(sparse_map((40, 40), pixels, orientation))
        assert sorted(e.length for e in edgelets) == [20, 20]
        horizontal = [e for e in edgelets if e.bbox[1] == e.bbox[3]]
        assert len(horizontal) == 1 and horizontal[0].orientation == 0.0

    def test_invariants_on_a_real_scene(self, scene):
        lab = rgb_to_lab(RgbImage(scene))
        sparse = prepare_sparse_map(None, lab)
        edgelets = extract_edgelets(sparse)
        assert edgelets
        seen = set()
        for e in edgelets:
            assert e.length > 15
            assert np.all(e.magnitudes > 40.0)
            assert e.strength == pytest.approx(float(sparse.magnitude[e.pixels[:, 1], e.pixels[:, 0]].max()))
            steps = np.abs(np.diff(e.pixels, axis=0))
            assert np.all(steps.max(axis=1) == 1)
            pix = {tuple(p) for p in e.pixels}
            assert len(pix) == e.length
            assert not (pix & seen)
            seen |= pix
        assert [e.id for e in edgelets] == list(range(len(edgelets)))


class TestHelpers:
    def test_crossing_runs(self):
        mask = np.zeros((5, 5), dtype=bool)
        mask[2, 0:5] = True
        runs = crossing_runs(mask)
        assert runs[2, 0] == 1 and runs[2, 4] == 1
        assert runs[2, 2] == 2
        mask[0:2, 2] = True
        assert crossing_runs(mask)[2, 2] == 3

    def test_mean_orientation_wraps(self):
        assert mean_orientation(np.array([0.05, math.pi - 0.05])) == pytest.approx(0.0, abs=1e-9) or (
            mean_orientation(np.array([0.05, math.pi - 0.05])) == pytest.approx(math.pi, abs=1e-9)
        )
        assert mean_orientation(np.array([1.0, 1.2])) == pytest.approx(1.1)

    def test_mean_orientation_ignores_order(self):
        rng = np.random.default_rng(5)
        angles = rng.uniform(0, math.pi, 31)
        assert mean_orientation(angles) == mean_orientation(rng.permutation(angles))

    def test_make_edgelet_reads_the_map(self, sparse_map, horizontal_chain):
        emap = sparse_map((20, 20), horizontal_chain(2, 3, 5, magnitude=70.0), orientation=0.25)
        e = make_edgelet(7, [(2 + i, 3) for i in range(5)], emap)
        assert isinstance(e, Edgelet)
        assert e.id == 7 and e.length == 5
        assert e.orientation == pytest.approx(0.25)
        np.testing.assert_array_equal(e.endpoints, [[2, 3], [6, 3]])

    def test_prepare_sparse_map_size_mismatch(self):
        with pytest.raises(SizeMismatch):
            prepare_sparse_map(EdgeMap(np.zeros((8, 8)), np.zeros((8, 8))), _lab_from_L(np.zeros((16, 16))))

    def test_prepare_sparse_map_keeps_sparse_input(self):
        emap = EdgeMap(np.zeros((16, 16)), np.zeros((16, 16)), sparse=True)
        assert prepare_sparse_map(emap, _lab_from_L(np.zeros((16, 16)))) is emap
