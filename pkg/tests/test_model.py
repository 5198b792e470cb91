import numpy as np
import pytest
import torch

from depthbins.model import (
    AttentionFusion,
    DepthNet,
    FeatureTransfer,
    GlobalContext,
    ModelConfig,
    build_model,
    count_parameters,
    load_checkpoint,
    model_forward,
    save_checkpoint,
)

TINY = ModelConfig(stage_widths=(8, 12, 16, 24), fusion_width=8, num_classes=21,
                   blocks_per_stage=1)


def zero_(module):
    for p in module.parameters():
        torch.nn.init.zeros_(p)


class TestEncoder:
    def test_stride_and_channel_contract(self):
        net = build_model(TINY, seed=0).eval()
        feats = net.encoder(torch.randn(1, 3, 96, 128))
        shapes = [tuple(f.shape) for f in feats]
        assert shapes == [(1, 8, 24, 32), (1, 12, 12, 16), (1, 16, 6, 8), (1, 24, 3, 4)]

    def test_full_scale_geometry(self):
        cfg = ModelConfig(stage_widths=(8, 8, 8, 8), fusion_width=8, blocks_per_stage=1)
        net = build_model(cfg, seed=0).eval()
        feats = net.encoder(torch.randn(1, 3, 256, 320))
        assert tuple(feats[0].shape) == (1, 8, 64, 80)

    def test_indivisible_size_rejected(self):
        net = build_model(TINY, seed=0)
        with pytest.raises(ValueError, match="divisible by 32"):
            net.encoder(torch.randn(1, 3, 100, 128))


class TestGlobalContext:
    def test_constant_input_passthrough(self):
        torch.manual_seed(1)
        gc = GlobalContext(6, 4)
        const = torch.randn(1, 6, 1, 1).expand(1, 6, 5, 7).contiguous()
        out = gc(const)
        expected = gc.reduce(const)
        assert torch.allclose(out, expected, atol=1e-6)

    def test_output_spatially_constant(self):
        torch.manual_seed(2)
        gc = GlobalContext(6, 4)
        out = gc(torch.randn(2, 6, 5, 7))
        assert out.shape == (2, 4, 5, 7)
        flat = out.reshape(2, 4, -1)
        assert torch.all(flat.max(dim=2).values == flat.min(dim=2).values)

    def test_zero_input_zero_bias(self):
        gc = GlobalContext(6, 4)
        zero_(gc)
        out = gc(torch.zeros(1, 6, 3, 3))
        assert torch.all(out == 0)


class TestFeatureTransfer:
    def test_zero_residual_branch_is_identity(self):
        torch.manual_seed(3)
        ftb = FeatureTransfer(8, 8)
        zero_(ftb.res1)
        zero_(ftb.res2)
        x = torch.randn(1, 8, 6, 6)
        assert torch.equal(ftb(x), ftb.proj(x))

    def test_shape_contract(self):
        torch.manual_seed(4)
        ftb = FeatureTransfer(64, 64)
        out = ftb(torch.randn(1, 64, 12, 16))
        assert out.shape == (1, 64, 12, 16)


class TestAttentionFusion:
    def test_zero_gate_network_gives_half(self):
        afa = AttentionFusion(8)
        zero_(afa)
        high = torch.randn(2, 8, 4, 4)
        low = torch.randn(2, 8, 4, 4)
        fused, gate = afa(high, low)
        assert torch.all(gate == 0.5)
        assert torch.allclose(fused, high + 0.5 * low, atol=1e-7)

    def test_zero_low_passes_high_through(self):
        torch.manual_seed(5)
        afa = AttentionFusion(8)
        high = torch.randn(1, 8, 4, 4)
        fused, gate = afa(high, torch.zeros_like(high))
        assert torch.equal(fused, high)
        assert torch.all((gate > 0) & (gate < 1))

    def test_shape_mismatch_rejected(self):
        afa = AttentionFusion(8)
        with pytest.raises(ValueError, match="AFA"):
            afa(torch.randn(1, 8, 4, 4), torch.randn(1, 8, 4, 5))


class TestFullModel:
    def test_output_geometry_and_gate_count(self):
        net = build_model(TINY, seed=6).eval()
        out, gates = model_forward(net, torch.randn(1, 3, 96, 128))
        assert out.shape == (1, 21, 24, 32)  # stride /4
        assert len(gates) == 4
        for g in gates:
            assert g.shape == (1, 8)
            assert torch.all((g > 0) & (g < 1))

    def test_softmax_normalization_and_uniform(self):
        net = build_model(TINY, seed=7).eval()
        x = torch.randn(2, 3, 64, 64)
        probs, _ = model_forward(net, x)
        sums = probs.sum(dim=1)
        assert torch.all((sums - 1).abs() < 1e-6)
        zero_(net.head.conv)  # all-equal logits
        probs, _ = model_forward(net, x)
        assert torch.allclose(probs, torch.full_like(probs, 1 / 21), atol=1e-9)

    def test_softmax_shift_invariance(self):
        torch.manual_seed(8)
        logits = torch.randn(1, 21, 4, 4, dtype=torch.float64)
        a = torch.softmax(logits, dim=1)
        b = torch.softmax(logits + 3.7, dim=1)
        assert torch.all((a - b).abs() < 1e-9)

    def test_full_scale_score_volume_shape(self):
        cfg = ModelConfig(stage_widths=(8, 8, 8, 8), fusion_width=8, num_classes=151,
                          blocks_per_stage=1)
        net = build_model(cfg, seed=20).eval()
        probs, _ = model_forward(net, torch.randn(1, 3, 256, 320))
        assert probs.shape == (1, 151, 64, 80)

    def test_eval_mode_deterministic(self):
        net = build_model(TINY, seed=9)
        x = torch.randn(1, 3, 64, 96)
        a, _ = model_forward(net, x, mode="eval")
        b, _ = model_forward(net, x, mode="eval")
        assert torch.equal(a, b)

    def test_train_mode_dropout_active(self):
        net = build_model(TINY, seed=10)
        torch.manual_seed(0)
        x = torch.randn(1, 3, 64, 96)
        a, _ = model_forward(net, x, mode="train")
        b, _ = model_forward(net, x, mode="train")
        assert not torch.equal(a, b)

    def test_no_attention_matches_saturated_gates(self):
        cfg_attn = ModelConfig(stage_widths=(8, 12, 16, 24), fusion_width=8,
                               num_classes=21, blocks_per_stage=1, attention_enabled=True)
        cfg_sum = ModelConfig(stage_widths=(8, 12, 16, 24), fusion_width=8,
                              num_classes=21, blocks_per_stage=1, attention_enabled=False)
        net_a = build_model(cfg_attn, seed=11).eval()
        for fuse in net_a.decoder.fuse:
            zero_(fuse)
            torch.nn.init.constant_(fuse.excite.bias, 50.0)  # sigmoid(50) == 1.0 exactly
        net_s = DepthNet(cfg_sum).eval()
        net_s.load_state_dict(net_a.state_dict())
        x = torch.randn(1, 3, 64, 96)
        out_a, gates = model_forward(net_a, x)
        out_s, no_gates = model_forward(net_s, x)
        assert torch.all(gates[0] == 1.0)
        assert no_gates == []
        assert torch.equal(out_a, out_s)

    def test_regression_head_single_channel(self):
        cfg = ModelConfig(stage_widths=(8, 12, 16, 24), fusion_width=8,
                          head="regression", attention_enabled=False, blocks_per_stage=1)
        net = build_model(cfg, seed=12).eval()
        out, _ = model_forward(net, torch.randn(1, 3, 64, 96))
        assert out.shape == (1, 1, 16, 24)

    def test_param_count_pure_function_of_config(self):
        assert count_parameters(TINY) == count_parameters(TINY)
        cls = ModelConfig(stage_widths=(8, 12, 16, 24), fusion_width=8, num_classes=151,
                          blocks_per_stage=1)
        reg = ModelConfig(stage_widths=(8, 12, 16, 24), fusion_width=8, num_classes=151,
                          head="regression", blocks_per_stage=1)
        # regression head width does not depend on num_classes
        reg2 = ModelConfig(stage_widths=(8, 12, 16, 24), fusion_width=8, num_classes=11,
                           head="regression", blocks_per_stage=1)
        assert count_parameters(reg) == count_parameters(reg2)
        assert count_parameters(cls) > count_parameters(reg)

    def test_config_json_round_trip(self):
        for cfg in (TINY, ModelConfig(fusion_width=(64, 64, 64, 128))):
            assert ModelConfig.from_json(cfg.to_json()) == cfg

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            ModelConfig(stage_widths=(8, 8, 8))
        with pytest.raises(ValueError):
            ModelConfig(head="ordinal")
        with pytest.raises(ValueError):
            ModelConfig(dropout_rate=1.0)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        net = build_model(TINY, seed=13)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, net, extra={"epoch": 3, "lr": 0.001, "seed": 13})
        again, extra = load_checkpoint(path)
        assert extra == {"epoch": 3, "lr": 0.001, "seed": 13}
        assert again.cfg == TINY
        for k, v in net.state_dict().items():
            assert torch.equal(again.state_dict()[k].float(), v.float()), k
        x = torch.randn(1, 3, 64, 64)
        assert torch.equal(model_forward(net.eval(), x)[0], model_forward(again, x)[0])

    def test_shape_validation_on_load(self, tmp_path):
        net = build_model(TINY, seed=14)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, net, extra={})
        with np.load(path) as z:
            arrays = {k: z[k] for k in z.files}
        name = "param/head.conv.weight"
        arrays[name] = arrays[name][:, :4]
        with open(tmp_path / "bad.npz", "wb") as f:
            np.savez(f, **arrays)
        with pytest.raises(ValueError, match="head.conv.weight"):
            load_checkpoint(tmp_path / "bad.npz")

    def test_missing_parameter_rejected(self, tmp_path):
        net = build_model(TINY, seed=15)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, net, extra={})
        with np.load(path) as z:
            arrays = {k: z[k] for k in z.files if "head.conv.bias" not in k}
        with open(tmp_path / "bad.npz", "wb") as f:
            np.savez(f, **arrays)
        with pytest.raises(ValueError, match="mismatch"):
            load_checkpoint(tmp_path / "bad.npz")
