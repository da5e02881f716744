import math

import numpy as np
import pytest

from bevloc._kernels import available_backends
from bevloc.bev import BevGrid, BevSpec, oracle_bev
from bevloc.geometry import EgoPose
from bevloc.localizer import (
    LocalizeConfig,
    align_bev_to_map,
    encode,
    localize,
    match_template,
    perturb,
    soft_argmax,
    softmax2d,
)
from bevloc.synthworld import WorldSpec, generate_world, sample_pose

BINS = (-0.5, 0.0, 0.5, 1.0, 2.0, 3.0)


def brute_masked_corr(tile, tmpl, mask):
    """Slow per-offset reference for the matchers."""
    c, l0, l1 = tile.shape
    _, s0, s1 = tmpl.shape
    mt = tmpl * mask
    den_t = math.sqrt(float((mt * mt).sum()))
    out = np.zeros((l0 - s0 + 1, l1 - s1 + 1))
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            win = tile[:, i : i + s0, j : j + s1]
            num = float((mt * win).sum())
            den = den_t * math.sqrt(float((mask * win * win).sum()))
            out[i, j] = num / den if den > 0 else 0.0
    return np.clip(out, -1, 1)


class TestEncoders:
    def test_identity_passthrough(self):
        rng = np.random.default_rng(0)
        ch = rng.uniform(size=(3, 10, 12))
        feat, mask, stride = encode(ch, None, "identity")
        np.testing.assert_array_equal(feat, ch)
        assert stride == 1 and mask is None

    def test_pyramid_constant_stays_constant(self):
        ch = np.full((2, 16, 16), 0.7)
        feat, _, stride = encode(ch, None, "pyramid")
        assert stride == 2
        np.testing.assert_allclose(feat, 0.7, atol=1e-12)

    def test_pyramid_translation_covariance(self):
        rng = np.random.default_rng(1)
        base = rng.uniform(size=(1, 40, 40))
        shifted = np.roll(base, (2, 4), axis=(1, 2))
        fa, _, s = encode(base, None, "pyramid")
        fb, _, _ = encode(shifted, None, "pyramid")
        # interior: stay clear of the rolled-in borders
        np.testing.assert_allclose(
            fa[:, 4:14, 4:14], fb[:, 4 + 2 // s : 14 + 1, 4 + 4 // s : 14 + 2][:, :10, :10],
            atol=1e-9,
        )

    def test_distance_single_cell_matches_brute_force(self):
        ch = np.zeros((1, 9, 11))
        ch[0, 4, 6] = 1.0
        feat, _, _ = encode(ch, None, "distance", cell_size=0.5)
        for r in range(9):
            for c in range(11):
                d = math.hypot(r - 4, c - 6) * 0.5
                if (r, c) == (4, 6):
                    assert feat[0, r, c] == pytest.approx(-0.5)
                else:
                    assert feat[0, r, c] == pytest.approx(min(d, 10.0))

    def test_distance_empty_channel_saturates(self):
        feat, _, _ = encode(np.zeros((1, 5, 5)), None, "distance", cell_size=1.0)
        np.testing.assert_array_equal(feat, np.full((1, 5, 5), 10.0))

    def test_unknown_encoder(self):
        with pytest.raises(KeyError):
            encode(np.zeros((1, 4, 4)), None, "resnet")

    def test_stride_mask_requires_full_block(self):
        mask = np.ones((8, 8), dtype=bool)
        mask[1, 1] = False
        _, m, s = encode(np.zeros((1, 8, 8)), mask, "pyramid")
        assert s == 2
        assert not m[0, 0]
        assert m[1:, 1:].all()


class TestMatch:
    def test_self_similarity_whole_tile(self):
        rng = np.random.default_rng(2)
        tile = rng.uniform(size=(2, 12, 12))
        sim = match_template(tile, None, tile)
        assert sim.scores.shape == (1, 1)
        assert sim.scores[0, 0] == pytest.approx(1.0, abs=1e-9)

    def test_constant_inputs_all_scores_equal(self):
        tile = np.full((1, 20, 20), 0.4)
        tmpl = np.full((1, 6, 6), 0.9)
        sim = match_template(tmpl, None, tile)
        np.testing.assert_allclose(sim.scores, sim.scores[0, 0], atol=1e-9)

    def test_planted_copy_recovered(self):
        rng = np.random.default_rng(3)
        tile = rng.uniform(0.0, 1.0, size=(3, 40, 44))
        a, b = 9, 17
        tmpl = tile[:, a : a + 12, b : b + 12].copy()
        sim = match_template(tmpl, None, tile)
        assert np.unravel_index(np.argmax(sim.scores), sim.scores.shape) == (a, b)
        assert sim.scores[a, b] == pytest.approx(1.0, abs=1e-6)

    def test_fft_equals_brute_force(self):
        rng = np.random.default_rng(4)
        tile = rng.uniform(size=(2, 25, 23))
        tmpl = rng.uniform(size=(2, 7, 9))
        mask = (rng.uniform(size=(7, 9)) > 0.3).astype(float)
        sim = match_template(tmpl, mask.astype(bool), tile)
        ref = brute_masked_corr(tile, tmpl, mask)
        np.testing.assert_allclose(sim.scores, ref, atol=1e-8)

    @pytest.mark.parametrize("backend", sorted(available_backends()))
    def test_kernel_backends_equal_brute_force(self, backend):
        mod = available_backends()[backend]
        rng = np.random.default_rng(5)
        tile = rng.uniform(size=(2, 18, 21))
        tmpl = rng.uniform(size=(2, 6, 5))
        mask = (rng.uniform(size=(6, 5)) > 0.25).astype(float)
        got = mod.masked_corr(tile, tmpl, mask)
        np.testing.assert_allclose(got, brute_masked_corr(tile, tmpl, mask), atol=1e-8)

    def test_shift_equivariance_interior(self):
        rng = np.random.default_rng(6)
        tile = rng.uniform(size=(1, 30, 30))
        tmpl = rng.uniform(size=(1, 8, 8))
        shifted = np.roll(tile, 1, axis=2)
        a = match_template(tmpl, None, tile).scores
        b = match_template(tmpl, None, shifted).scores
        np.testing.assert_allclose(a[:, : a.shape[1] - 1], b[:, 1:], atol=1e-9)

    def test_bev_larger_than_tile_rejected(self):
        with pytest.raises(ValueError):
            match_template(np.zeros((1, 9, 9)), None, np.zeros((1, 4, 4)))

    def test_offset_metadata(self):
        sim = match_template(
            np.ones((1, 3, 3)), None, np.ones((1, 8, 8)),
            raw_resolution=0.5, tile_origin=(10.0, 20.0), template_center=(1.0, 1.0),
        )
        x, y = sim.offset_to_xy(2.0, 3.0)
        assert x == pytest.approx(10.0 + (3.0 + 1.0) * 0.5)
        assert y == pytest.approx(20.0 + (2.0 + 1.0) * 0.5)


class TestSoftmax:
    def test_closed_form_two_entries(self):
        p = softmax2d(np.array([[0.0, math.log(3.0)]]), 1.0)
        np.testing.assert_allclose(p.probs, [[0.25, 0.75]], atol=1e-12)

    def test_constant_uniform(self):
        p = softmax2d(np.full((4, 5), 2.7), 1.0)
        np.testing.assert_allclose(p.probs, 1.0 / 20.0, atol=1e-12)

    def test_single_entry(self):
        assert softmax2d(np.array([[123.0]]), 0.3).probs[0, 0] == 1.0

    def test_normalization_and_stability(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            m = rng.uniform(-1, 1, size=(30, 40)) * rng.uniform(1, 1e3)
            p = softmax2d(m, rng.uniform(0.01, 10))
            assert abs(p.probs.sum() - 1.0) < 1e-9
            assert np.isfinite(p.probs).all()

    def test_shift_invariance(self):
        rng = np.random.default_rng(8)
        m = rng.uniform(size=(9, 9))
        a = softmax2d(m, 0.5).probs
        b = softmax2d(m + 123.4, 0.5).probs
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_temperature_must_be_positive(self):
        with pytest.raises(ValueError):
            softmax2d(np.ones((2, 2)), 0.0)


class TestSoftArgmax:
    def test_delta(self):
        p = np.zeros((7, 9))
        p[3, 5] = 1.0
        assert soft_argmax(p) == (3.0, 5.0)

    def test_two_point_symmetry(self):
        p = np.zeros((1, 11))
        p[0, 0] = p[0, 10] = 0.5
        assert soft_argmax(p) == (0.0, 5.0)

    def test_uniform_centroid(self):
        n = 9
        p = np.full((n, n), 1.0 / n**2)
        i, j = soft_argmax(p)
        assert i == pytest.approx((n - 1) / 2) and j == pytest.approx((n - 1) / 2)

    def test_low_temperature_matches_argmax(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            m = rng.uniform(-1, 1, size=(25, 25))
            i, j = np.unravel_index(np.argmax(m), m.shape)
            # enforce the required margin over the runner-up
            m[i, j] = m[i, j] + 0.02
            sij = soft_argmax(softmax2d(m, 1e-3))
            assert math.hypot(sij[0] - i, sij[1] - j) < 0.01


class TestPerturb:
    def test_zero_radius_identity(self):
        p = EgoPose(3.0, 4.0, 0.5)
        q = perturb(p, np.random.default_rng(0), 0.0)
        assert (q.x, q.y, q.yaw) == (p.x, p.y, p.yaw)

    def test_offsets_bounded_heading_kept(self):
        rng = np.random.default_rng(1)
        p = EgoPose(1.0, -2.0, 1.1)
        for _ in range(500):
            q = perturb(p, rng, 35.0)
            assert math.hypot(q.x - p.x, q.y - p.y) <= 35.0
            assert q.yaw == p.yaw

    def test_mean_radius_half_of_max(self):
        rng = np.random.default_rng(2)
        p = EgoPose()
        radii = [
            math.hypot(q.x, q.y)
            for q in (perturb(p, rng, 100.0) for _ in range(100_000))
        ]
        assert np.mean(radii) == pytest.approx(50.0, rel=0.01)


class TestAlign:
    def test_zero_yaw_same_resolution_is_identity(self):
        rng = np.random.default_rng(10)
        spec = BevSpec(side=10.5, resolution=0.5, bins=BINS)
        s = spec.size
        scores = rng.uniform(size=(s, s, 2))
        mask = np.ones((s, s), dtype=bool)
        bev = BevGrid(scores, mask, spec)
        out, omask, ctr = align_bev_to_map(bev, 0.0, 0.5)
        assert out.shape == (2, s, s)
        assert ctr == (s - 1) / 2
        np.testing.assert_allclose(out, np.moveaxis(scores, 2, 0), atol=1e-12)
        assert omask.all()

    def test_rotated_corners_unobserved(self):
        spec = BevSpec(side=10.0, resolution=0.5, bins=BINS)
        s = spec.size
        bev = BevGrid(np.ones((s, s, 1)), np.ones((s, s), dtype=bool), spec)
        out, omask, _ = align_bev_to_map(bev, math.pi / 4, 0.5)
        assert not omask[0, 0] and not omask[-1, -1]
        assert omask[s // 2, s // 2]


@pytest.fixture(scope="module")
def scene():
    w = generate_world(WorldSpec(seed=12, extent=200.0))
    pose = sample_pose(w, np.random.default_rng(2), margin=70.0)
    return w, pose


class TestLocalize:
    def test_zero_perturbation_recovers_pose(self, scene):
        w, pose = scene
        cfg = LocalizeConfig(temperature=0.01, tile_side=120.0, tile_resolution=0.5)
        bev = oracle_bev(w, pose, cfg.bev)
        res = localize(bev, w.smap, pose, cfg)
        err = math.hypot(res.pose.x - pose.x, res.pose.y - pose.y)
        assert err < 0.5  # one encoded cell

    def test_whole_cell_prior_shift_cancels(self, scene):
        w, pose = scene
        cfg = LocalizeConfig(temperature=0.01, tile_side=120.0, tile_resolution=0.5)
        bev = oracle_bev(w, pose, cfg.bev)
        a = localize(bev, w.smap, pose, cfg)
        shifted = EgoPose(pose.x + 6 * 0.5, pose.y, pose.yaw)
        b = localize(bev, w.smap, shifted, cfg)
        assert a.pose.x == pytest.approx(b.pose.x, abs=1e-6)
        assert a.pose.y == pytest.approx(b.pose.y, abs=1e-6)

    def test_missing_heading_rejected(self, scene):
        w, pose = scene
        bev = oracle_bev(w, pose, BevSpec())
        with pytest.raises(ValueError):
            localize(bev, w.smap, (pose.x, pose.y), LocalizeConfig())

    def test_bev_larger_than_tile_rejected(self, scene):
        w, pose = scene
        cfg = LocalizeConfig(tile_side=60.0, tile_resolution=0.5)  # < bev side
        bev = oracle_bev(w, pose, cfg.bev)
        with pytest.raises(ValueError):
            localize(bev, w.smap, pose, cfg)

    def test_rotation_sweep_smoke(self, scene):
        w, pose = scene
        cfg = LocalizeConfig(
            temperature=0.01, tile_side=120.0, tile_resolution=0.5,
            rotation_sweep=True, sweep_half_range_deg=2.0, sweep_steps=3,
        )
        bev = oracle_bev(w, pose, cfg.bev)
        res = localize(bev, w.smap, pose, cfg)
        err = math.hypot(res.pose.x - pose.x, res.pose.y - pose.y)
        assert err < 1.0

    def test_pyramid_and_distance_encoders_work(self, scene):
        w, pose = scene
        bev = oracle_bev(w, pose, BevSpec())
        for enc in ("pyramid", "distance"):
            cfg = LocalizeConfig(
                encoder=enc, temperature=0.01, tile_side=120.0, tile_resolution=0.5
            )
            res = localize(bev, w.smap, pose, cfg)
            err = math.hypot(res.pose.x - pose.x, res.pose.y - pose.y)
            assert err < 3.0, enc

    def test_config_unknown_keys_rejected(self):
        with pytest.raises(ValueError):
            LocalizeConfig.from_dict({"temperature": 1.0, "banana": 2})
        with pytest.raises(ValueError):
            LocalizeConfig.from_dict({"bev": {"sides": 100}})
