"""Architecture arithmetic and assembled-network behavior."""

import numpy as np
import pytest

from lfdnet.layers import softmax
from lfdnet.model import (
    ArchSpec,
    ResidualBlock,
    block_conv_filter_total,
    build,
    flatten_width,
    hidden_layer_count,
    spatial_trace,
)

from _gradcheck import rel_error

SMALL = ArchSpec(
    input_size=32,
    stem_filters=8,
    stem_kernel=7,
    group_filters=(8, 16),
    blocks_per_group=2,
    downsample_groups=(1,),
    block_kernel=3,
    avg_pool=4,
    fc=(24,),
    dropout=0.25,
    classes=5,
)


class TestArchSpec:
    def test_default_counts(self):
        spec = ArchSpec()
        # 5 groups x 3 blocks x 2 convs, channel widths 32..512
        assert block_conv_filter_total(spec) == 5952
        # 30 block convs + average pool + 2 fully connected hidden layers
        assert hidden_layer_count(spec) == 33
        assert spec.classes == 43

    def test_default_spatial_trace(self):
        # 256 -> stem pool 128 -> four halvings -> 8 -> 4x4 average pool -> 2
        assert spatial_trace(ArchSpec()) == [256, 128, 128, 64, 32, 16, 8, 2]
        assert flatten_width(ArchSpec()) == 512 * 2 * 2

    def test_small_spec_trace(self):
        assert spatial_trace(SMALL) == [32, 16, 16, 8, 2]
        assert flatten_width(SMALL) == 16 * 2 * 2

    def test_json_round_trip(self):
        spec = SMALL
        again = ArchSpec.from_json(spec.to_json())
        assert again == spec
        assert isinstance(again.group_filters, tuple)

    def test_json_rejects_other_versions(self):
        import json

        d = json.loads(SMALL.to_json())
        d["format"] = 99
        with pytest.raises(ValueError, match="format version"):
            ArchSpec.from_json(json.dumps(d))

    @pytest.mark.parametrize(
        "kwargs,message",
        [
            (dict(classes=1), "at least 2 classes"),
            (dict(group_filters=()), "at least one block group"),
            (dict(blocks_per_group=0), "at least one block per group"),
            (dict(dropout=1.0), "dropout"),
            (dict(downsample_groups=(9,)), "out of range"),
            (dict(input_size=255), "must be even"),
            (dict(input_size=160), "average pool"),  # reaches 5, not divisible by 4
        ],
    )
    def test_validation(self, kwargs, message):
        with pytest.raises(ValueError, match=message):
            ArchSpec(**kwargs)

    def test_odd_halving_rejected(self):
        with pytest.raises(ValueError, match="cannot halve odd size"):
            ArchSpec(input_size=36, group_filters=(8, 8), downsample_groups=(0, 1),
                     avg_pool=1, fc=())


class TestResidualBlock:
    def test_zero_main_path_identity_shortcut(self, rng):
        blk = ResidualBlock(4, 4, 3, False, rng=np.random.default_rng(0), dtype=np.float64)
        blk.conv_b.w[:] = 0.0
        blk.conv_b.b[:] = 0.0
        x = rng.standard_normal((2, 4, 8, 8))
        out = blk.forward(x, train=False)
        # main path contributes nothing; identity shortcut passes x through
        np.testing.assert_allclose(out, x, rtol=0, atol=0)

    def test_zero_main_path_projection(self, rng):
        blk = ResidualBlock(4, 6, 3, False, rng=np.random.default_rng(0), dtype=np.float64)
        blk.conv_b.w[:] = 0.0
        blk.conv_b.b[:] = 0.0
        x = rng.standard_normal((2, 4, 8, 8))
        out = blk.forward(x, train=False)
        want = blk.proj.forward(blk.bn.forward(x, train=False), train=False)
        np.testing.assert_allclose(out, want, rtol=0, atol=0)

    def test_downsample_halves_and_projects(self, rng):
        blk = ResidualBlock(4, 8, 3, True, rng=np.random.default_rng(0), dtype=np.float64)
        x = rng.standard_normal((2, 4, 8, 8))
        out = blk.forward(x, train=False)
        assert out.shape == (2, 8, 4, 4)
        assert blk.proj.stride == 2

    def test_no_relu_after_sum(self, rng):
        # the block output keeps negative values from the shortcut
        blk = ResidualBlock(2, 2, 3, False, rng=np.random.default_rng(0), dtype=np.float64)
        blk.conv_b.w[:] = 0.0
        blk.conv_b.b[:] = 0.0
        x = -np.abs(rng.standard_normal((2, 2, 4, 4)))
        out = blk.forward(x, train=False)
        assert (out < 0).all()

    def test_gradient_through_block(self, rng):
        from _gradcheck import central_diff

        blk = ResidualBlock(2, 3, 3, True, rng=np.random.default_rng(0), dtype=np.float64)
        x = rng.standard_normal((3, 2, 4, 4))
        probe = rng.standard_normal((3, 3, 2, 2))

        def loss():
            return float((blk.forward(x, train=True) * probe).sum())

        blk.forward(x, train=True)
        analytic = blk.backward(probe.copy())
        assert rel_error(analytic, central_diff(loss, x)) < 1e-5


class TestNetwork:
    def test_forward_shape_and_probs(self, rng):
        net = build(SMALL, seed=1)
        x = rng.random((3, 1, 32, 32)).astype(np.float32)
        logits = net.forward(x)
        assert logits.shape == (3, 5)
        probs = net.forward_probs(x)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, rtol=1e-5)

    def test_input_validation(self):
        net = build(SMALL, seed=1)
        with pytest.raises(ValueError, match="expected input"):
            net.forward(np.zeros((1, 1, 16, 16), dtype=np.float32))
        with pytest.raises(ValueError, match="expected input"):
            net.forward(np.zeros((1, 3, 32, 32), dtype=np.float32))

    def test_zero_output_layer_gives_uniform_probs(self, rng):
        net = build(SMALL, seed=1)
        params = net.named_params()
        params["head.out.w"][:] = 0.0
        params["head.out.b"][:] = 0.0
        x = rng.random((2, 1, 32, 32)).astype(np.float32)
        np.testing.assert_allclose(net.forward_probs(x), 0.2, rtol=0, atol=1e-7)

    def test_build_is_deterministic(self, rng):
        a = build(SMALL, seed=7)
        b = build(SMALL, seed=7)
        c = build(SMALL, seed=8)
        pa, pb, pc = a.named_params(), b.named_params(), c.named_params()
        assert set(pa) == set(pb) == set(pc)
        for k in pa:
            assert np.array_equal(pa[k], pb[k])
        assert any(not np.array_equal(pa[k], pc[k]) for k in pa)

    def test_param_naming_scheme(self):
        net = build(SMALL, seed=0)
        names = set(net.named_params())
        assert "stem.conv.w" in names
        assert "g0.b0.conv_a.w" in names
        assert "g1.b0.proj.w" in names  # downsample group gets a projection
        assert "g0.b0.proj.w" not in names  # same-width block does not
        assert "head.out.b" in names
        state = set(net.named_state())
        assert "g0.b0.bn.running_mean" in state
        assert "head.bn.running_var" in state

    def test_default_network_matches_counted_structure(self):
        net = build(ArchSpec(), seed=0)
        blocks = [l for _, l in net._chain if isinstance(l, ResidualBlock)]
        assert len(blocks) == 15
        conv_filters = sum(b.conv_a.out_channels + b.conv_b.out_channels for b in blocks)
        assert conv_filters == 5952

    def test_training_step_changes_params_and_reduces_loss(self, rng):
        from lfdnet.layers import weighted_softmax_xent
        from lfdnet.optim import Adam

        net = build(SMALL, seed=3)
        x = rng.random((4, 1, 32, 32)).astype(np.float32)
        y = np.array([0, 1, 2, 3])
        w = np.ones(5)
        opt = Adam(net.named_params(), lr=0.01)
        drop = np.random.default_rng(9)
        first = None
        for step in range(8):
            logits = net.forward(x, train=True, rng=drop)
            loss, grad = weighted_softmax_xent(logits, y, w)
            if first is None:
                first = loss
            net.backward(grad)
            opt.step(net.named_grads())
        assert loss < first

    def test_backward_matches_finite_difference_spot_check(self, rng):
        # double-precision end-to-end probe on a random input coordinate
        spec = ArchSpec(
            input_size=16, stem_filters=4, group_filters=(4, 8), blocks_per_group=1,
            downsample_groups=(1,), avg_pool=2, fc=(), dropout=0.0, classes=3,
        )
        net = build(spec, seed=2, dtype=np.float64)
        x = rng.standard_normal((2, 1, 16, 16))
        probe = rng.standard_normal((2, 3))

        def loss():
            return float((net.forward(x, train=True) * probe).sum())

        net.forward(x, train=True)
        analytic = net.backward(probe.copy())
        eps = 1e-5
        for idx in [(0, 0, 3, 4), (1, 0, 10, 2), (0, 0, 15, 15)]:
            old = x[idx]
            x[idx] = old + eps
            fp = loss()
            x[idx] = old - eps
            fm = loss()
            x[idx] = old
            numeric = (fp - fm) / (2 * eps)
            assert abs(analytic[idx] - numeric) < 1e-5 * max(1.0, abs(numeric))
