"""Flow building blocks vs. elementwise / interpolation / shift oracles."""

import numpy as np
import pytest
import torch

from densevo.checks import randomize_parameters, relative_gradient_error
from densevo.flow import (
    ContextNet,
    DepthMap,
    DepthModulation,
    FlowHead,
    downsample_depth,
    estimate_flow,
    inverse_depth,
    refine_flow,
    upsample_flow,
    warp,
)


def rand(rng, *shape):
    return torch.from_numpy(rng.normal(size=shape))


class TestDepthMap:
    def test_invalid_pixels_zeroed(self):
        depth = np.array([[1.0, 5.0], [3.0, 9.0]])
        valid = np.array([[True, False], [True, False]])
        dm = DepthMap(depth, valid)
        assert dm.depth[0, 1] == 0.0 and dm.depth[1, 1] == 0.0

    def test_nonpositive_valid_depth_rejected(self):
        with pytest.raises(ValueError):
            DepthMap(np.array([[0.0]]), np.array([[True]]))

    def test_tensor_round_trip(self):
        dm = DepthMap.dense(np.full((4, 6), 2.5))
        depth, valid = dm.tensors(torch.float64)
        assert depth.shape == (1, 1, 4, 6)
        assert (valid == 1.0).all()


class TestDownsampleDepth:
    def test_averages_only_valid_pixels(self):
        depth = torch.tensor([[[[2.0, 0.0], [4.0, 0.0]]]], dtype=torch.float64)
        valid = torch.tensor([[[[1.0, 0.0], [1.0, 0.0]]]], dtype=torch.float64)
        d, v = downsample_depth(depth, valid, 2)
        assert d.item() == pytest.approx(3.0)
        assert v.item() == 1.0

    def test_empty_cells_become_invalid(self):
        depth = torch.zeros(1, 1, 4, 4, dtype=torch.float64)
        valid = torch.zeros(1, 1, 4, 4, dtype=torch.float64)
        valid[0, 0, 0, 0] = 1.0
        depth[0, 0, 0, 0] = 7.0
        d, v = downsample_depth(depth, valid, 2)
        assert v[0, 0, 0, 0] == 1.0 and d[0, 0, 0, 0] == pytest.approx(7.0)
        assert v[0, 0, 1, 1] == 0.0 and d[0, 0, 1, 1] == 0.0

    def test_matches_block_oracle(self):
        rng = np.random.default_rng(0)
        depth_np = rng.uniform(1.0, 9.0, size=(8, 8))
        valid_np = rng.random((8, 8)) > 0.3
        dm = DepthMap(np.where(valid_np, depth_np, 0.0), valid_np)
        depth, valid = dm.tensors(torch.float64)
        d, v = downsample_depth(depth, valid, 4)
        for i in range(2):
            for j in range(2):
                block_d = depth_np[4 * i : 4 * i + 4, 4 * j : 4 * j + 4]
                block_v = valid_np[4 * i : 4 * i + 4, 4 * j : 4 * j + 4]
                if block_v.any():
                    assert d[0, 0, i, j].item() == pytest.approx(block_d[block_v].mean())
                    assert v[0, 0, i, j] == 1.0
                else:
                    assert v[0, 0, i, j] == 0.0


class TestDepthModulation:
    def test_constant_depth_gives_constant_interior_gate(self):
        mod = DepthModulation().double()
        inv = torch.full((1, 1, 10, 12), 0.25, dtype=torch.float64)
        _, gate = mod(inv)
        interior = gate[0, 0, 2:-2, 2:-2]
        assert torch.allclose(interior, interior[:1, :1].expand_as(interior), atol=1e-12)

    def test_gate_shape_and_range(self):
        rng = np.random.default_rng(1)
        mod = DepthModulation().double()
        randomize_parameters(mod, rng)
        feats, gate = mod(rand(rng, 1, 1, 6, 9).abs())
        assert gate.shape == (1, 1, 6, 9)
        assert feats.shape == (1, DepthModulation.feature_channels, 6, 9)
        assert (gate > 0).all() and (gate <= 1).all()

    def test_inverse_depth_handles_invalid(self):
        depth = torch.tensor([[[[4.0, 0.0]]]], dtype=torch.float64)
        valid = torch.tensor([[[[1.0, 0.0]]]], dtype=torch.float64)
        inv = inverse_depth(depth, valid)
        assert inv[0, 0, 0, 0].item() == pytest.approx(0.25)
        assert inv[0, 0, 0, 1].item() == 0.0

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(40 + seed)
        mod = DepthModulation().double()
        randomize_parameters(mod, rng)
        inv = rand(rng, 1, 1, 6, 6).abs()
        weights = rand(rng, 1, 1, 6, 6)
        err = relative_gradient_error(
            lambda: (mod(inv)[1] * weights).sum(), list(mod.parameters()), rng=rng
        )
        assert err < 1e-4


class TestEstimateFlow:
    def _inputs(self, rng, with_prev):
        head = FlowHead(8, 6, 4, with_prev_flow=with_prev).double()
        randomize_parameters(head, np.random.default_rng(rng.integers(1 << 30)))
        feats, cost, depth = rand(rng, 1, 8, 5, 6), rand(rng, 1, 6, 5, 6), rand(rng, 1, 4, 5, 6)
        prev = rand(rng, 1, 2, 5, 6) if with_prev else None
        return head, feats, cost, depth, prev

    def test_zero_gate_forces_zero_flow(self):
        rng = np.random.default_rng(2)
        head, feats, cost, depth, prev = self._inputs(rng, with_prev=True)
        flow, _ = estimate_flow(head, feats, cost, depth, torch.zeros(1, 1, 5, 6, dtype=torch.float64), prev)
        assert torch.equal(flow, torch.zeros_like(flow))

    def test_output_shape(self):
        rng = np.random.default_rng(3)
        head, feats, cost, depth, _ = self._inputs(rng, with_prev=False)
        flow, hidden = estimate_flow(head, feats, cost, depth, torch.ones(1, 1, 5, 6, dtype=torch.float64))
        assert flow.shape == (1, 2, 5, 6)
        assert hidden.shape == (1, FlowHead.hidden_channels, 5, 6)

    def test_gate_scaling_is_exactly_linear(self):
        rng = np.random.default_rng(4)
        head, feats, cost, depth, prev = self._inputs(rng, with_prev=True)
        gate = rand(rng, 1, 1, 5, 6).abs().clamp(0.01, 1.0)
        full, _ = estimate_flow(head, feats, cost, depth, gate, prev)
        lam = 0.375  # exactly representable
        scaled, _ = estimate_flow(head, feats, cost, depth, lam * gate, prev)
        assert torch.allclose(scaled, lam * full, atol=0.0, rtol=1e-15)

    def test_resolution_mismatch_rejected(self):
        rng = np.random.default_rng(5)
        head, feats, cost, depth, _ = self._inputs(rng, with_prev=False)
        with pytest.raises(ValueError):
            head(feats, cost[:, :, :4], depth)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(50 + seed)
        head, feats, cost, depth, prev = self._inputs(rng, with_prev=True)
        gate = rand(rng, 1, 1, 5, 6).abs().clamp(0.05, 1.0)
        weights = rand(rng, 1, 2, 5, 6)
        err = relative_gradient_error(
            lambda: (estimate_flow(head, feats, cost, depth, gate, prev)[0] * weights).sum(),
            list(head.parameters()),
            rng=rng,
        )
        assert err < 1e-4


class TestRefineFlow:
    def test_zero_residual_returns_coarse(self):
        rng = np.random.default_rng(6)
        coarse = rand(rng, 1, 2, 4, 4)
        out = refine_flow(coarse, torch.zeros_like(coarse), torch.ones(1, 1, 4, 4, dtype=torch.float64))
        assert torch.equal(out, coarse)

    def test_unit_gate_is_plain_sum(self):
        rng = np.random.default_rng(7)
        coarse, residual = rand(rng, 1, 2, 4, 4), rand(rng, 1, 2, 4, 4)
        out = refine_flow(coarse, residual, torch.ones(1, 1, 4, 4, dtype=torch.float64))
        assert torch.equal(out, coarse + residual)

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(8)
        coarse, residual = rand(rng, 1, 2, 5, 7), rand(rng, 1, 2, 5, 7)
        gate = rand(rng, 1, 1, 5, 7).abs()
        got = refine_flow(coarse, residual, gate).numpy()
        want = np.empty_like(got)
        for ch in range(2):
            for y in range(5):
                for x in range(7):
                    want[0, ch, y, x] = coarse[0, ch, y, x] + gate[0, 0, y, x] * residual[0, ch, y, x]
        assert np.abs(got - want).max() < 1e-7

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            refine_flow(torch.zeros(1, 2, 4, 4), torch.zeros(1, 2, 4, 5), torch.ones(1, 1, 4, 4))


def bilinear_upsample_oracle(flow):
    """Independent align-corners bilinear interpolation, doubled."""
    _, _, h, w = flow.shape
    oh, ow = 2 * h, 2 * w
    out = np.zeros((1, 2, oh, ow))
    for ch in range(2):
        for oy in range(oh):
            for ox in range(ow):
                sy = oy * (h - 1) / (oh - 1) if oh > 1 else 0.0
                sx = ox * (w - 1) / (ow - 1) if ow > 1 else 0.0
                y0, x0 = int(np.floor(sy)), int(np.floor(sx))
                y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
                fy, fx = sy - y0, sx - x0
                val = (
                    flow[0, ch, y0, x0] * (1 - fy) * (1 - fx)
                    + flow[0, ch, y0, x1] * (1 - fy) * fx
                    + flow[0, ch, y1, x0] * fy * (1 - fx)
                    + flow[0, ch, y1, x1] * fy * fx
                )
                out[0, ch, oy, ox] = 2.0 * val
    return out


class TestUpsampleFlow:
    def test_zero_flow_stays_zero(self):
        out = upsample_flow(torch.zeros(1, 2, 3, 5, dtype=torch.float64))
        assert out.shape == (1, 2, 6, 10)
        assert torch.equal(out, torch.zeros_like(out))

    def test_constant_flow_doubles(self):
        flow = torch.zeros(1, 2, 4, 4, dtype=torch.float64)
        flow[0, 0] = 1.5
        flow[0, 1] = -0.25
        out = upsample_flow(flow)
        assert torch.allclose(out[0, 0], torch.full((8, 8), 3.0, dtype=torch.float64), atol=1e-12)
        assert torch.allclose(out[0, 1], torch.full((8, 8), -0.5, dtype=torch.float64), atol=1e-12)

    def test_matches_interpolation_oracle(self):
        rng = np.random.default_rng(9)
        flow = rand(rng, 1, 2, 4, 6)
        got = upsample_flow(flow).numpy()
        assert np.abs(got - bilinear_upsample_oracle(flow.numpy())).max() < 1e-6


class TestWarp:
    def test_zero_flow_is_identity(self):
        rng = np.random.default_rng(10)
        feats = rand(rng, 1, 3, 5, 6)
        out = warp(feats, torch.zeros(1, 2, 5, 6, dtype=torch.float64))
        assert torch.allclose(out, feats, atol=1e-7)

    def test_integer_shift_is_exact(self):
        rng = np.random.default_rng(11)
        feats = rand(rng, 1, 3, 5, 6)
        flow = torch.zeros(1, 2, 5, 6, dtype=torch.float64)
        flow[0, 0] = 1.0  # sample from x + 1
        out = warp(feats, flow)
        expected = torch.zeros_like(feats)
        expected[:, :, :, :-1] = feats[:, :, :, 1:]
        assert torch.equal(out, expected)

    def test_gradients_wrt_flow_match_finite_differences(self):
        rng = np.random.default_rng(12)
        feats = rand(rng, 1, 3, 6, 6)
        # keep fractional parts well away from the pixel-grid discontinuities
        base = rng.integers(-1, 2, size=(1, 2, 6, 6)).astype(np.float64)
        frac = rng.uniform(0.2, 0.8, size=(1, 2, 6, 6))
        flow = torch.from_numpy(base + frac).requires_grad_(True)
        weights = rand(rng, 1, 3, 6, 6)
        err = relative_gradient_error(lambda: (warp(feats, flow) * weights).sum(), [flow], rng=rng)
        assert err < 1e-3


class TestContextNet:
    def test_identity_at_initialization(self):
        rng = np.random.default_rng(13)
        net = ContextNet().double()
        initial, refined = rand(rng, 1, 2, 6, 6), rand(rng, 1, 2, 6, 6)
        assert torch.equal(net(initial, refined), refined)

    def test_output_shape(self):
        rng = np.random.default_rng(14)
        net = ContextNet().double()
        randomize_parameters(net, rng)
        out = net(rand(rng, 1, 2, 4, 8), rand(rng, 1, 2, 4, 8))
        assert out.shape == (1, 2, 4, 8)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(60 + seed)
        net = ContextNet(hidden_channels=8).double()
        randomize_parameters(net, rng)
        initial, refined = rand(rng, 1, 2, 5, 5), rand(rng, 1, 2, 5, 5)
        weights = rand(rng, 1, 2, 5, 5)
        err = relative_gradient_error(
            lambda: (net(initial, refined) * weights).sum(), list(net.parameters()), rng=rng
        )
        assert err < 1e-4
