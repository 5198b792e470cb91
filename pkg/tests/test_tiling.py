import numpy as np
import pytest
import torch

from depthbins.data import generate_outdoor
from depthbins.model import ModelConfig, build_model
from depthbins.quantize import make_spec
from depthbins.resample import resize_bilinear
from depthbins.tiling import (
    TilePlan,
    _forward_tile,
    infer_image,
    plan_tiles,
    tiled_inference,
)

SPEC = make_spec()
NET_CFG = ModelConfig(stage_widths=(8, 12, 16, 24), fusion_width=8, num_classes=151,
                      blocks_per_stage=1)


class TestPlanTiles:
    def test_wide_image_two_tiles(self):
        plan = plan_tiles(376, 1242, 320, (256, 320))
        assert (plan.down_height, plan.down_width) == (188, 621)
        assert plan.tiles == ((0, 320), (301, 621))
        assert plan.overlap_columns == (301, 320)
        assert plan.overlap_width == 19

    def test_four_by_three_image_single_tile(self):
        plan = plan_tiles(480, 640, 320, (256, 320))
        assert (plan.down_height, plan.down_width) == (240, 320)
        assert plan.tiles == ((0, 320),)
        assert plan.overlap_width == 0

    def test_exact_tile_width(self):
        plan = plan_tiles(96, 256, 128, (96, 128))
        assert plan.tiles == ((0, 128),)
        assert plan.overlap_width == 0

    def test_two_tiles_no_overlap(self):
        plan = plan_tiles(96, 512, 128, (96, 128))
        assert plan.tiles == ((0, 128), (128, 256))
        assert plan.overlap_width == 0

    def test_errors(self):
        with pytest.raises(ValueError, match="tile width"):
            plan_tiles(96, 256, 400, (96, 128))
        with pytest.raises(ValueError, match="covered"):
            plan_tiles(96, 600, 128, (96, 128))
        with pytest.raises(ValueError, match="height"):
            plan_tiles(400, 200, 128, (96, 128))
        with pytest.raises(ValueError, match="positive"):
            plan_tiles(0, 200, 128, (96, 128))

    def test_coverage_property(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            w = int(rng.integers(10, 256))
            plan = plan_tiles(100, w, 128, (96, 128))
            cover = np.zeros(plan.down_width, dtype=int)
            for lo, hi in plan.tiles:
                cover[lo:hi] += 1
            lo, hi = plan.overlap_columns
            expected = np.ones(plan.down_width, dtype=int)
            expected[lo:hi] += 1
            assert np.array_equal(cover, expected)
            widths = sum(hi - lo for lo, hi in plan.tiles)
            assert plan.overlap_width == widths - plan.down_width


class TestTiledInference:
    def test_single_tile_matches_direct_bit_exact(self):
        net = build_model(NET_CFG, seed=0).eval()
        sample = generate_outdoor(1, 120, 200)
        tiled = tiled_inference(net, sample.rgb, SPEC, 128, (96, 128))
        direct = infer_image(net, sample.rgb, SPEC, (96, 128))
        assert tiled.shape == (120, 200)
        assert np.array_equal(tiled, direct)

    def test_constant_model_constant_output(self):
        net = build_model(NET_CFG, seed=1).eval()
        for p in net.head.conv.parameters():
            torch.nn.init.zeros_(p)  # uniform scores at every pixel
        sample = generate_outdoor(2, 150, 400)  # two tiles after halving
        depth = tiled_inference(net, sample.rgb, SPEC, 128, (96, 128))
        assert depth.shape == (150, 400)
        assert np.allclose(depth, depth[0, 0], atol=1e-9)
        assert depth[0, 0] == pytest.approx(4.47214, abs=1e-4)

    def test_overlap_is_mean_of_tiles(self):
        net = build_model(NET_CFG, seed=2).eval()
        sample = generate_outdoor(3, 150, 400)
        plan = plan_tiles(150, 400, 128, (96, 128))
        assert len(plan.tiles) == 2
        down = resize_bilinear(sample.rgb.astype(np.float64), (plan.down_height, plan.down_width))
        left = _forward_tile(net, down[:, plan.tiles[0][0]:plan.tiles[0][1]], plan, SPEC)
        right = _forward_tile(net, down[:, plan.tiles[1][0]:plan.tiles[1][1]], plan, SPEC)

        # brute-force stitch: average overlapped columns, then upsample
        stitched = np.zeros((plan.down_height, plan.down_width))
        lo, hi = plan.overlap_columns
        stitched[:, :lo] = left[:, :lo]
        stitched[:, hi:] = right[:, hi - plan.tiles[1][0]:]
        stitched[:, lo:hi] = 0.5 * (left[:, lo:hi] + right[:, lo - plan.tiles[1][0]:hi - plan.tiles[1][0]])
        oracle = resize_bilinear(stitched, (150, 400))

        out = tiled_inference(net, sample.rgb, SPEC, 128, (96, 128))
        assert np.allclose(out, oracle, atol=1e-12)

    def test_regression_head_decode(self):
        cfg = ModelConfig(stage_widths=(8, 12, 16, 24), fusion_width=8,
                          head="regression", attention_enabled=False, blocks_per_stage=1)
        net = build_model(cfg, seed=3).eval()
        sample = generate_outdoor(4, 120, 200)
        depth = tiled_inference(net, sample.rgb, SPEC, 128, (96, 128))
        assert depth.shape == (120, 200)
        assert depth.min() >= SPEC.alpha and depth.max() <= SPEC.beta

    def test_bad_image_rejected(self):
        net = build_model(NET_CFG, seed=4).eval()
        with pytest.raises(ValueError, match="RGB"):
            tiled_inference(net, np.zeros((50, 60)), SPEC, 128, (96, 128))
