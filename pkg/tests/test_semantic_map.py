import numpy as np
import pytest

from bevloc.geometry import EgoPose
from bevloc.semantic_map import (
    MapRaster,
    SemanticMap,
    crop_tile,
    load_raster,
    points_in_polygon_inclusive,
    rasterize,
    rasterize_onto,
    save_raster,
)

from conftest import pip_oracle, star_polygon


def rect(x0, y0, x1, y1):
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def one_cat(polys, name="drivable"):
    return SemanticMap((name,), {name: polys})


class TestRasterize:
    def test_aligned_rectangle_exact(self):
        smap = one_cat([rect(0, 0, 4, 4)])
        r = rasterize(smap, (0, 0, 8, 8), 1.0)
        expect = np.zeros((8, 8), dtype=bool)
        expect[:4, :4] = True
        np.testing.assert_array_equal(r.channels[0], expect)

    def test_empty_polygon_list_zero_raster(self):
        r = rasterize(one_cat([]), (0, 0, 4, 4), 0.5)
        assert not r.channels.any()

    def test_right_triangle_against_pip_oracle(self):
        tri = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        r = rasterize(one_cat([tri]), (0, 0, 10, 10), 1.0)
        for row in range(10):
            for col in range(10):
                x, y = r.cell_center(row, col)
                assert r.channels[0, row, col] == pip_oracle(x, y, tri), (row, col)

    def test_boundary_center_counts_inside(self):
        # centers at x=0.5 and x=2.5 lie exactly on the rectangle edges
        smap = one_cat([rect(0.5, 0.5, 2.5, 2.5)])
        r = rasterize(smap, (0, 0, 4, 4), 1.0)
        expect = np.zeros((4, 4), dtype=bool)
        expect[:3, :3] = True
        np.testing.assert_array_equal(r.channels[0], expect)

    def test_random_polygons_against_pip_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            poly = star_polygon(rng, center=rng.uniform(2, 8, 2), n_vertices=int(rng.integers(3, 10)))
            r = rasterize(one_cat([poly]), (0, 0, 12, 12), 0.4)
            h, w = r.shape
            for row in range(h):
                for col in range(w):
                    x, y = r.cell_center(row, col)
                    assert r.channels[0, row, col] == pip_oracle(x, y, poly)

    def test_degenerate_polygon_skipped_with_count(self):
        line = np.array([[0.0, 0.0], [5.0, 0.0], [2.5, 0.0]])
        r = rasterize(one_cat([line, rect(0, 0, 2, 2)]), (0, 0, 4, 4), 1.0)
        assert r.degenerate_skipped == 1
        assert r.channels[0].sum() == 4

    def test_resolution_consistency(self):
        rng = np.random.default_rng(5)
        smap = one_cat([star_polygon(rng, center=(6, 6), n_vertices=9)])
        coarse = rasterize_onto(smap, origin=(0.3, 0.3), shape=(16, 16), resolution=0.6)
        fine = rasterize_onto(smap, origin=(0.3, 0.3), shape=(31, 31), resolution=0.3)
        np.testing.assert_array_equal(fine.channels[:, ::2, ::2], coarse.channels)

    def test_channel_order_is_category_order(self):
        polys = {
            "a": [rect(0, 0, 1, 1)],
            "b": [rect(2, 2, 3, 3)],
            "c": [rect(0, 2, 1, 3)],
        }
        smap = SemanticMap(("a", "b", "c"), polys)
        r = rasterize(smap, (0, 0, 4, 4), 0.5)
        for ci, cat in enumerate(smap.categories):
            solo = rasterize(one_cat(polys[cat], cat), (0, 0, 4, 4), 0.5)
            np.testing.assert_array_equal(r.channels[ci], solo.channels[0])


class TestCropTile:
    def test_paper_tile_sizes(self):
        smap = one_cat([rect(-10, -10, 10, 10)])
        assert crop_tile(smap, EgoPose(), 300.0, 0.30).side_cells == 1000
        assert crop_tile(smap, EgoPose(), 300.0, 0.75).side_cells == 400

    def test_center_matches_prior_within_half_cell(self):
        smap = one_cat([rect(-10, -10, 10, 10)])
        prior = EgoPose(3.21, -7.65, 0.5)
        tile = crop_tile(smap, prior, 30.0, 0.4)
        n = tile.side_cells
        cx = tile.raster.origin[0] + (n - 1) / 2.0 * 0.4
        cy = tile.raster.origin[1] + (n - 1) / 2.0 * 0.4
        assert abs(cx - prior.x) <= 0.2 and abs(cy - prior.y) <= 0.2

    def test_corner_prior_zero_filled(self):
        smap = one_cat([rect(0, 0, 20, 20)])
        tile = crop_tile(smap, EgoPose(0.0, 0.0, 0.0), 20.0, 0.5)
        full = rasterize_onto(
            smap, tile.raster.origin, tile.raster.shape, tile.raster.resolution
        )
        np.testing.assert_array_equal(tile.raster.channels, full.channels)
        # prior sits on the map corner: the quadrants outside are empty
        n = tile.side_cells
        assert not tile.raster.channels[0, : n // 2, :].any()
        assert not tile.raster.channels[0, :, : n // 2].any()
        assert tile.raster.channels[0, n // 2 :, n // 2 :].all()

    def test_discrete_shift_equivariance(self):
        rng = np.random.default_rng(19)
        smap = one_cat([star_polygon(rng, center=(0, 0), n_vertices=10, rmax=9)])
        res = 0.5
        t0 = crop_tile(smap, EgoPose(0.0, 0.0, 0.0), 30.0, res)
        k = 7
        t1 = crop_tile(smap, EgoPose(k * res, 0.0, 0.0), 30.0, res)
        # shifting the prior +k cells in x moves content -k columns
        np.testing.assert_array_equal(
            t0.channels[:, :, k:] if False else t0.raster.channels[:, :, k:],
            t1.raster.channels[:, :, :-k],
        )


class TestRasterIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        r = MapRaster(rng.uniform(size=(3, 64, 64)) > 0.5, 0.25, (3.0, 4.0))
        save_raster(r, tmp_path / "a.smr")
        back = load_raster(tmp_path / "a.smr")
        np.testing.assert_array_equal(back.channels, r.channels)
        assert back.resolution == r.resolution
        assert back.origin == r.origin


class TestSemanticMapModel:
    def test_needs_three_vertices(self):
        with pytest.raises(ValueError):
            one_cat([np.array([[0.0, 0.0], [1.0, 1.0]])])

    def test_unknown_category_rejected(self):
        with pytest.raises(ValueError):
            SemanticMap(("a",), {"a": [], "zzz": [rect(0, 0, 1, 1)]})

    def test_transform_round_trip(self):
        smap = one_cat([rect(0, 0, 4, 2)])
        pose = EgoPose(3.0, -1.0, 0.8)
        back = smap.transformed(pose).transformed(
            EgoPose(
                -(np.cos(-0.8) * 3.0 - np.sin(-0.8) * -1.0),
                -(np.sin(-0.8) * 3.0 + np.cos(-0.8) * -1.0),
                -0.8,
            )
        )
        np.testing.assert_allclose(
            back.polygons["drivable"][0], smap.polygons["drivable"][0], atol=1e-12
        )

    def test_json_round_trip(self, tmp_path):
        smap = SemanticMap(("a", "b"), {"a": [rect(0, 0, 1, 1)], "b": []})
        import json

        path = tmp_path / "m.json"
        path.write_text(json.dumps(smap.to_dict()))
        back = SemanticMap.from_json(path)
        assert back.categories == ("a", "b")
        np.testing.assert_array_equal(back.polygons["a"][0], smap.polygons["a"][0])


def test_inclusive_pip_matches_oracle():
    rng = np.random.default_rng(23)
    for _ in range(10):
        poly = star_polygon(rng, center=(0, 0), n_vertices=7)
        pts = rng.uniform(-7, 7, size=(300, 2))
        got = points_in_polygon_inclusive(pts, poly)
        expect = np.array([pip_oracle(x, y, poly) for x, y in pts])
        np.testing.assert_array_equal(got, expect)
