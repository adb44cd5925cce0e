"""Generator stage oracles, shape laws, gradients and complexity accounting."""

import numpy as np
import pytest
import torch

from platesr.model import (
    REFERENCE_CONFIG,
    ChannelAttention,
    LayerCost,
    ResidualDenseBlock,
    SRModel,
    SRModelConfig,
    conv_cost,
    count_macs,
    count_params_flops,
    model_layer_costs,
    total_cost,
)

# ---------------------------------------------------------------------------
# Independent numpy oracles (scalar loops, no torch)
# ---------------------------------------------------------------------------


def oracle_conv2d(x, weight, bias, pad=1):
    cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    xp = np.zeros((cin, h + 2 * pad, w + 2 * pad))
    xp[:, pad : pad + h, pad : pad + w] = x
    out = np.zeros((cout, h + 2 * pad - kh + 1, w + 2 * pad - kw + 1))
    for oc in range(cout):
        for oy in range(out.shape[1]):
            for ox in range(out.shape[2]):
                acc = bias[oc]
                for ic in range(cin):
                    for dy in range(kh):
                        for dx in range(kw):
                            acc += weight[oc, ic, dy, dx] * xp[ic, oy + dy, ox + dx]
                out[oc, oy, ox] = acc
    return out


def oracle_conv_transpose2d(x, weight, bias, stride=2, pad=1):
    cin, h, w = x.shape
    _, cout, kh, kw = weight.shape
    oh, ow = (h - 1) * stride - 2 * pad + kh, (w - 1) * stride - 2 * pad + kw
    out = np.zeros((cout, oh, ow))
    out += bias[:, None, None]
    for ic in range(cin):
        for iy in range(h):
            for ix in range(w):
                for oc in range(cout):
                    for dy in range(kh):
                        for dx in range(kw):
                            oy, ox = iy * stride - pad + dy, ix * stride - pad + dx
                            if 0 <= oy < oh and 0 <= ox < ow:
                                out[oc, oy, ox] += weight[ic, oc, dy, dx] * x[ic, iy, ix]
    return out


def oracle_rdb(x, convs, fuse_w, fuse_b, alpha):
    feats = x
    for w, b in convs:
        y = np.maximum(oracle_conv2d(feats, w, b, pad=1), 0.0)
        feats = np.concatenate([feats, y], axis=0)
    fused = oracle_conv2d(feats, fuse_w, fuse_b, pad=0)
    return alpha * fused + x


def oracle_channel_attention(x, w1, b1, w2, b2):
    z = x.mean(axis=(1, 2))
    z1 = np.maximum(w1 @ z + b1, 0.0)
    z2 = 1.0 / (1.0 + np.exp(-(w2 @ z1 + b2)))
    return x * z2[:, None, None], z2


def torch_params(mod):
    return {k: v.detach().double().numpy() for k, v in mod.state_dict().items()}


# ---------------------------------------------------------------------------
# Stage tests
# ---------------------------------------------------------------------------


class TestShallow:
    def test_zero_weights_give_zero_output(self):
        conv = torch.nn.Conv2d(3, 8, 3, padding=1)
        torch.nn.init.zeros_(conv.weight)
        torch.nn.init.zeros_(conv.bias)
        out = conv(torch.zeros(1, 3, 8, 8))
        assert torch.all(out == 0)

    def test_shape_contract(self):
        model = SRModel(SRModelConfig(base_channels=64, num_rdb=1, rdb_convs=1,
                                      growth=8, ca_reduction=16, scale=8))
        out = model.shallow(torch.rand(1, 3, 8, 8))
        assert tuple(out.shape) == (1, 64, 8, 8)

    def test_ones_kernel_hand_summed(self):
        conv = torch.nn.Conv2d(3, 1, 3, padding=1).double()
        with torch.no_grad():
            conv.weight.fill_(1.0)
            conv.bias.zero_()
        x = torch.arange(27, dtype=torch.float64).reshape(1, 3, 3, 3)
        out = conv(x)
        # centre output taps every element of the 3x3x3 input: sum 0..26
        assert out[0, 0, 1, 1].item() == pytest.approx(sum(range(27)))
        want = oracle_conv2d(x[0].numpy(), conv.weight.detach().numpy(),
                             conv.bias.detach().numpy())
        assert np.max(np.abs(out[0].detach().numpy() - want)) < 1e-12


class TestResidualDenseBlock:
    def _block(self, channels=4, convs=2, growth=3, alpha=0.7, seed=0):
        torch.manual_seed(seed)
        return ResidualDenseBlock(channels, convs, growth, alpha).double()

    def test_alpha_zero_is_identity(self):
        block = self._block(alpha=0.0)
        x = torch.rand(1, 4, 6, 6, dtype=torch.float64)
        assert torch.equal(block(x), x + 0 * x) or torch.max(torch.abs(block(x) - x)) == 0

    def test_alpha_one_with_zeroed_convs_is_identity(self):
        block = self._block(alpha=1.0)
        with torch.no_grad():
            for m in block.modules():
                if isinstance(m, torch.nn.Conv2d):
                    m.weight.zero_()
                    m.bias.zero_()
        x = torch.rand(1, 4, 6, 6, dtype=torch.float64)
        assert torch.max(torch.abs(block(x) - x)) == 0

    def test_matches_dense_block_oracle(self):
        block = self._block(channels=1, convs=2, growth=2, alpha=0.37, seed=3)
        x = torch.rand(1, 1, 2, 2, dtype=torch.float64)
        got = block(x)[0].detach().numpy()
        p = torch_params(block)
        convs = [(p[f"convs.{i}.weight"], p[f"convs.{i}.bias"]) for i in range(2)]
        want = oracle_rdb(x[0].numpy(), convs, p["fuse.weight"], p["fuse.bias"],
                          float(p["alpha"]))
        assert np.max(np.abs(got - want)) < 1e-6

    def test_shape_preserved(self):
        block = self._block(channels=8, convs=3, growth=4)
        x = torch.rand(2, 8, 5, 7, dtype=torch.float64)
        assert block(x).shape == x.shape


class TestChannelAttention:
    def test_zero_weights_halve_features(self):
        ca = ChannelAttention(8, 4).double()
        with torch.no_grad():
            for p in ca.parameters():
                p.zero_()
        x = torch.rand(1, 8, 4, 4, dtype=torch.float64)
        assert torch.max(torch.abs(ca(x) - x / 2)) < 1e-12

    def test_gap_of_constant_channels_is_exact(self):
        consts = torch.tensor([0.1, 0.4, 0.9, 0.3], dtype=torch.float64)
        x = consts[None, :, None, None].expand(1, 4, 6, 6)
        assert torch.allclose(x.mean(dim=(2, 3))[0], consts, atol=1e-15)

    def test_matches_dense_algebra_oracle(self):
        torch.manual_seed(5)
        ca = ChannelAttention(4, 2).double()
        x = torch.rand(1, 4, 2, 2, dtype=torch.float64)
        got = ca(x)[0].detach().numpy()
        p = torch_params(ca)
        want, gate = oracle_channel_attention(
            x[0].numpy(), p["fc1.weight"], p["fc1.bias"], p["fc2.weight"], p["fc2.bias"]
        )
        assert np.max(np.abs(got - want)) < 1e-6
        assert np.all((gate > 0) & (gate < 1))

    def test_reduction_must_divide(self):
        with pytest.raises(ValueError):
            ChannelAttention(6, 4)
        with pytest.raises(ValueError):
            SRModelConfig(base_channels=6, ca_reduction=4)


class TestUpsampler:
    def test_x8_gives_three_stages_8_to_64(self):
        model = SRModel(SRModelConfig(base_channels=64, num_rdb=1, rdb_convs=1,
                                      growth=8, ca_reduction=16, scale=8))
        assert len(model.up) == 3
        feat = torch.rand(1, 64, 8, 8)
        for stage in model.up:
            feat = torch.relu(stage(feat))
        assert tuple(feat.shape) == (1, 64, 64, 64)
        assert torch.all(feat >= 0)

    def test_x4_gives_two_stages(self):
        cfg = SRModelConfig(base_channels=16, num_rdb=1, rdb_convs=1, growth=4,
                            ca_reduction=4, scale=4)
        assert SRModel(cfg).up.__len__() == 2

    def test_single_stage_matches_transposed_conv_oracle(self):
        torch.manual_seed(2)
        stage = torch.nn.ConvTranspose2d(1, 1, 4, stride=2, padding=1).double()
        x = torch.rand(1, 1, 1, 1, dtype=torch.float64)
        got = stage(x)[0].detach().numpy()
        want = oracle_conv_transpose2d(
            x[0].numpy(),
            stage.weight.detach().numpy(),
            stage.bias.detach().numpy(),
        )
        assert got.shape == (1, 2, 2)
        assert np.max(np.abs(got - want)) < 1e-12

    def test_invalid_scale_rejected(self):
        with pytest.raises(ValueError):
            SRModelConfig(scale=6)
        with pytest.raises(ValueError):
            SRModelConfig(scale=3)


class TestForward:
    @pytest.mark.parametrize("scale", [4, 8])
    @pytest.mark.parametrize("size", [4, 8, 16])
    def test_shape_law(self, scale, size):
        torch.manual_seed(0)
        model = SRModel(SRModelConfig(base_channels=8, num_rdb=1, rdb_convs=1,
                                      growth=4, ca_reduction=4, scale=scale))
        out = model(torch.rand(2, 3, size, size))
        assert tuple(out.shape) == (2, 3, scale * size, scale * size)

    def test_all_alpha_zero_then_zero_final_gives_bias_map(self):
        torch.manual_seed(1)
        cfg = SRModelConfig(base_channels=8, num_rdb=2, rdb_convs=2, growth=4,
                            ca_reduction=4, scale=4, alpha_init=0.0)
        model = SRModel(cfg).double()
        with torch.no_grad():
            model.final.weight.zero_()
            model.final.bias.copy_(torch.tensor([0.1, -0.2, 0.3]))
        out = model(torch.rand(1, 3, 4, 4, dtype=torch.float64))
        want = torch.tensor([0.1, -0.2, 0.3])[None, :, None, None].expand_as(out)
        assert torch.max(torch.abs(out - want)) < 1e-12

    def test_alpha_gating_makes_rdb_chain_identity(self):
        torch.manual_seed(3)
        cfg = SRModelConfig(base_channels=8, num_rdb=3, rdb_convs=2, growth=4,
                            ca_reduction=4, scale=4, alpha_init=0.0)
        model = SRModel(cfg).double()
        x = torch.rand(1, 8, 6, 6, dtype=torch.float64)
        feat = x
        for rdb in model.rdbs:
            feat = rdb(feat)
        assert torch.max(torch.abs(feat - x)) == 0

    def test_composed_forward_matches_stage_oracles(self):
        torch.manual_seed(4)
        cfg = SRModelConfig(base_channels=2, num_rdb=1, rdb_convs=1, growth=2,
                            ca_reduction=2, scale=4)
        model = SRModel(cfg).double()
        x = torch.rand(1, 3, 2, 2, dtype=torch.float64)
        got = model(x)[0].detach().numpy()

        p = torch_params(model)
        feat = oracle_conv2d(x[0].numpy(), p["shallow.weight"], p["shallow.bias"])
        feat = oracle_rdb(
            feat,
            [(p["rdbs.0.convs.0.weight"], p["rdbs.0.convs.0.bias"])],
            p["rdbs.0.fuse.weight"], p["rdbs.0.fuse.bias"], float(p["rdbs.0.alpha"]),
        )
        feat, _ = oracle_channel_attention(
            feat, p["ca.fc1.weight"], p["ca.fc1.bias"], p["ca.fc2.weight"], p["ca.fc2.bias"]
        )
        for j in range(2):
            feat = np.maximum(
                oracle_conv_transpose2d(feat, p[f"up.{j}.weight"], p[f"up.{j}.bias"]), 0.0
            )
        want = oracle_conv2d(feat, p["final.weight"], p["final.bias"])
        assert np.max(np.abs(got - want)) < 1e-5

    def test_super_resolve_clamps_forward_does_not(self):
        torch.manual_seed(0)
        model = SRModel(SRModelConfig(base_channels=8, num_rdb=1, rdb_convs=1,
                                      growth=4, ca_reduction=4, scale=4))
        with torch.no_grad():
            model.final.bias.fill_(5.0)
        x = torch.rand(1, 3, 4, 4)
        assert model(x).max() > 1.0
        out = model.super_resolve(x)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_forward_is_deterministic(self):
        torch.manual_seed(6)
        model = SRModel(SRModelConfig(base_channels=8, num_rdb=2, rdb_convs=2,
                                      growth=4, ca_reduction=4, scale=4))
        x = torch.rand(1, 3, 8, 8)
        with torch.no_grad():
            a, b = model(x), model(x)
        assert torch.equal(a, b)

    def test_gate_strictly_inside_unit_interval(self):
        torch.manual_seed(7)
        model = SRModel(SRModelConfig(base_channels=8, num_rdb=1, rdb_convs=1,
                                      growth=4, ca_reduction=4, scale=4))
        x = torch.rand(4, 8, 5, 5)
        pooled = x.mean(dim=(2, 3))
        gate = torch.sigmoid(model.ca.fc2(torch.relu(model.ca.fc1(pooled))))
        assert torch.all(gate > 0) and torch.all(gate < 1)


class TestGradients:
    def test_analytic_matches_central_differences(self):
        torch.manual_seed(11)
        cfg = SRModelConfig(base_channels=4, num_rdb=1, rdb_convs=2, growth=2,
                            ca_reduction=2, scale=4)
        model = SRModel(cfg).double()
        x = torch.rand(1, 3, 3, 3, dtype=torch.float64)

        model.zero_grad()
        model(x).sum().backward()
        params = [p for p in model.parameters() if p.requires_grad]
        rng = np.random.default_rng(0)
        flat = [(pi, tuple(idx)) for pi, p in enumerate(params)
                for idx in np.ndindex(*p.shape)]
        sampled = [flat[i] for i in rng.choice(len(flat), size=100, replace=False)]

        h = 1e-5
        worst = 0.0
        for pi, idx in sampled:
            p = params[pi]
            with torch.no_grad():
                orig = p[idx].item()
                p[idx] = orig + h
                up = model(x).sum().item()
                p[idx] = orig - h
                down = model(x).sum().item()
                p[idx] = orig
            fd = (up - down) / (2 * h)
            analytic = p.grad[idx].item()
            rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-6)
            worst = max(worst, rel)
        assert worst < 1e-4


class TestComplexityAccounting:
    def test_single_conv_closed_form(self):
        cost = conv_cost("c", 3, 64, 3, 64, 64)
        assert cost.params == 64 * (3 * 3 * 3 + 1) == 1792
        assert cost.macs == 64 * 64 * 64 * 3 * 9
        assert cost.flops == 2 * 64 * 64 * 64 * 27 + 64 * 64 * 64

    def test_zero_layers_cost_nothing(self):
        assert total_cost([]) == (0, 0)

    def test_reference_config_within_10pct_of_published_params(self):
        params, _ = count_params_flops(REFERENCE_CONFIG, (64, 64))
        assert abs(params - 1_900_000) / 1_900_000 < 0.10
        # the published complexity figure matches the MAC count at 64x64
        assert count_macs(REFERENCE_CONFIG, (64, 64)) / 1e9 == pytest.approx(13.35, abs=0.01)

    @pytest.mark.parametrize(
        "cfg",
        [
            REFERENCE_CONFIG,
            SRModelConfig(base_channels=16, num_rdb=2, rdb_convs=3, growth=16,
                          ca_reduction=4, scale=8),
            SRModelConfig(base_channels=8, num_rdb=1, rdb_convs=1, growth=4,
                          ca_reduction=4, scale=4),
        ],
    )
    def test_accounting_matches_instantiated_model(self, cfg):
        params, _ = count_params_flops(cfg, (8, 8))
        model = SRModel(cfg)
        assert params == sum(p.numel() for p in model.parameters())

    def test_layer_names_mirror_state_dict_stages(self):
        names = {c.name.split(".")[0] for c in model_layer_costs(REFERENCE_CONFIG, (8, 8))}
        assert names == {"shallow", "rdbs", "ca", "up", "final"}
