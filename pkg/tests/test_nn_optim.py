import numpy as np
import pytest
from helpers import assert_grads_match, rand

from gridifier import autodiff as ad
from gridifier.autodiff import Tensor
from gridifier.checkpoint import load_checkpoint, restore_params, save_checkpoint
from gridifier.errors import ConfigError, ParseError, ShapeError, TrainingError
from gridifier.nn import (
    decays_weight,
    identity_mlp,
    init_mlp,
    init_positional_net,
    init_rff,
    mlp_forward,
    positional_forward,
    rff_embed,
)
from gridifier.optim import AdamWState, adamw_init, adamw_step, lr_at, zero_grads


def adamw_reference(p0, grads, lr, wd=0.0, b1=0.9, b2=0.999, eps=1e-8, decayed=True):
    """Scalar-loop transcription of the published decoupled-decay recurrence."""
    m = v = 0.0
    p = p0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        if decayed:
            p = p * (1 - lr * wd)
        p = p - lr * mhat / (np.sqrt(vhat) + eps)
    return p


class TestMlp:
    def test_identity_layer_passes_through(self):
        params = identity_mlp(4)
        x = np.random.default_rng(0).normal(size=(6, 4))
        out = mlp_forward(params, Tensor(x))
        np.testing.assert_array_equal(out.data, x)

    def test_output_shape(self):
        params = init_mlp([2, 8, 3], np.random.default_rng(1))
        assert mlp_forward(params, Tensor(np.zeros((5, 2)))).shape == (5, 3)
        assert params.widths == [2, 8, 3]

    def test_width_mismatch(self):
        params = init_mlp([2, 8, 3], np.random.default_rng(1))
        with pytest.raises(ShapeError):
            mlp_forward(params, Tensor(np.zeros((5, 3))))

    def test_bad_layer_chain(self):
        with pytest.raises(ConfigError):
            init_mlp([2], np.random.default_rng(0))

    def test_gradient_of_all_weights(self):
        rng = np.random.default_rng(2)
        arrays = [rand(rng, 4, 2), rand(rng, 2, 6), rand(rng, 6), rand(rng, 6, 3), rand(rng, 3)]

        def build(ts):
            from gridifier.nn import MlpParams

            params = MlpParams([ts[1], ts[3]], [ts[2], ts[4]], "gelu")
            return ad.reduce_mean(mlp_forward(params, ts[0]))

        assert_grads_match(build, arrays)

    def test_seeded_init_is_reproducible(self):
        a = init_mlp([3, 5, 2], np.random.default_rng(42))
        b = init_mlp([3, 5, 2], np.random.default_rng(42))
        for pa, pb in zip(a.named_parameters().values(), b.named_parameters().values()):
            np.testing.assert_array_equal(pa.data, pb.data)


class TestRff:
    def test_zero_offset(self):
        cfg = init_rff(0.5, 6, 3, np.random.default_rng(0))
        out = rff_embed(cfg, Tensor(np.zeros((4, 3))))
        np.testing.assert_array_equal(out.data[:, :6], 1.0)
        np.testing.assert_array_equal(out.data[:, 6:], 0.0)

    def test_deterministic_per_seed(self):
        x = np.random.default_rng(3).normal(size=(5, 2))
        a = rff_embed(init_rff(1.0, 8, 2, np.random.default_rng(7)), Tensor(x))
        b = rff_embed(init_rff(1.0, 8, 2, np.random.default_rng(7)), Tensor(x))
        np.testing.assert_array_equal(a.data, b.data)

    def test_bounded(self):
        cfg = init_rff(2.0, 16, 3, np.random.default_rng(1))
        out = rff_embed(cfg, Tensor(np.random.default_rng(2).normal(size=(50, 3))))
        assert out.data.min() >= -1.0 and out.data.max() <= 1.0

    def test_frequency_scale(self):
        # the sampler's standard deviation should track omega
        cfg = init_rff(0.7, 5000, 2, np.random.default_rng(11))
        std = cfg.freq.data.std()
        assert abs(std - 0.7) / 0.7 < 0.05

    def test_frozen_frequencies_get_no_gradient(self):
        cfg = init_rff(1.0, 4, 2, np.random.default_rng(5), trainable=False)
        assert cfg.named_parameters() == {}
        x = Tensor(np.random.default_rng(6).normal(size=(3, 2)))
        ad.reduce_mean(rff_embed(cfg, x)).backward()
        assert cfg.freq.grad is None
        assert x.grad is not None

    def test_gradient_through_embedding_and_frequencies(self):
        rng = np.random.default_rng(8)
        arrays = [rand(rng, 5, 3), rand(rng, 4, 3)]

        def build(ts):
            from gridifier.nn import RffConfig

            cfg = RffConfig(1.0, ts[1], trainable=True)
            return ad.reduce_mean(ad.mul(rff_embed(cfg, ts[0]), 2.0))

        assert_grads_match(build, arrays)


class TestPositionalNet:
    def test_shapes_and_gradient(self):
        rng = np.random.default_rng(9)
        net = init_positional_net(
            omega=1.0, n_frequencies=4, dim=3, hidden=[8], out_width=5, rng=rng
        )
        x = np.random.default_rng(10).normal(size=(7, 3))
        out = positional_forward(net, Tensor(x))
        assert out.shape == (7, 5)

        params = list(net.named_parameters().values())
        loss = ad.reduce_mean(positional_forward(net, Tensor(x)))
        loss.backward()
        assert all(p.grad is not None for p in params)

    def test_head_width_must_match(self):
        from gridifier.nn import PositionalNet

        rng = np.random.default_rng(0)
        with pytest.raises(ConfigError):
            PositionalNet(init_rff(1.0, 4, 3, rng), init_mlp([5, 2], rng))


class TestDecayRule:
    @pytest.mark.parametrize(
        "name,expected",
        [
            ("phi_node.w0", True),
            ("phi_node.b0", False),
            ("pos.rff.freq", False),
            ("blocks.0.kernel", True),
            ("blocks.0.gamma", False),
            ("blocks.0.beta", False),
        ],
    )
    def test_names(self, name, expected):
        assert decays_weight(name) is expected


class TestAdamW:
    def test_single_step_matches_reference(self):
        p = {"w0": Tensor(np.array([0.0]))}
        p["w0"].grad = np.array([1.0])
        state = adamw_init(p, lr=0.1)
        adamw_step(state, p)
        expected = adamw_reference(0.0, [1.0], lr=0.1)
        assert abs(p["w0"].data[0] - expected) < 1e-12
        # frozen from the reference recurrence
        assert abs(p["w0"].data[0] - (-0.09999999900000002)) < 1e-15

    def test_decay_only_step(self):
        p = {"w0": Tensor(np.array([1.0]))}
        p["w0"].grad = np.array([0.0])
        state = adamw_init(p, lr=0.1, weight_decay=0.1)
        adamw_step(state, p)
        assert abs(p["w0"].data[0] - 0.99) < 1e-15

    def test_zero_grad_zero_decay_is_identity(self):
        p = {"w0": Tensor(np.array([0.7, -0.3]))}
        p["w0"].grad = np.zeros(2)
        state = adamw_init(p, lr=0.05)
        adamw_step(state, p)
        np.testing.assert_array_equal(p["w0"].data, [0.7, -0.3])

    def test_multi_step_trajectory_matches_reference(self):
        rng = np.random.default_rng(13)
        grads = rng.normal(size=(10, 3, 2))
        p0 = rng.normal(size=(3, 2))
        p = {"layer.w0": Tensor(p0.copy())}
        state = adamw_init(p, lr=0.01, weight_decay=0.05)
        for g in grads:
            p["layer.w0"].grad = g.copy()
            adamw_step(state, p)
        for i in range(3):
            for j in range(2):
                want = adamw_reference(p0[i, j], grads[:, i, j], lr=0.01, wd=0.05)
                assert abs(p["layer.w0"].data[i, j] - want) < 1e-12

    def test_biases_not_decayed(self):
        p = {"layer.b0": Tensor(np.array([1.0]))}
        p["layer.b0"].grad = np.array([0.0])
        state = adamw_init(p, lr=0.1, weight_decay=0.5)
        adamw_step(state, p)
        assert p["layer.b0"].data[0] == 1.0

    def test_nonfinite_gradient_names_parameter(self):
        p = {"phi_msg.w1": Tensor(np.array([0.0]))}
        p["phi_msg.w1"].grad = np.array([np.nan])
        state = adamw_init(p, lr=0.1)
        with pytest.raises(TrainingError, match="phi_msg.w1"):
            adamw_step(state, p)

    def test_zero_grads(self):
        p = {"w0": Tensor(np.zeros(2))}
        p["w0"].grad = np.ones(2)
        zero_grads(p)
        assert p["w0"].grad is None


class TestSchedule:
    def test_peak_at_end_of_warmup(self):
        assert lr_at(10, 60, 10, 0.005) == 0.005

    def test_warmup_midpoint(self):
        assert lr_at(5, 60, 10, 0.005) == 0.005 / 2

    def test_epoch_zero_is_zero(self):
        assert lr_at(0, 60, 10, 0.005) == 0.0

    def test_cosine_tail_closed_form(self):
        t, w, base = 60, 10, 0.005
        want = base * 0.5 * (1 + np.cos(np.pi * (t - 1 - w) / (t - w)))
        assert abs(lr_at(t - 1, t, w, base) - want) < 1e-18

    def test_monotone_decay_after_warmup(self):
        vals = [lr_at(e, 50, 10, 1.0) for e in range(10, 50)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_warmup_must_be_shorter_than_total(self):
        with pytest.raises(ConfigError):
            lr_at(0, 10, 10, 0.1)

    def test_epoch_out_of_range(self):
        with pytest.raises(ConfigError):
            lr_at(60, 60, 10, 0.1)


class TestCheckpoint:
    def _tree(self, seed=0):
        rng = np.random.default_rng(seed)
        return {
            "phi_node.w0": Tensor(rng.normal(size=(3, 8))),
            "phi_node.b0": Tensor(rng.normal(size=8)),
            "pos.rff.freq": Tensor(rng.normal(size=(4, 3))),
        }

    def test_round_trip_exact(self, tmp_path):
        params = self._tree()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params)
        loaded, opt = load_checkpoint(path)
        assert opt is None
        assert set(loaded) == set(params)
        for name, p in params.items():
            np.testing.assert_array_equal(loaded[name], p.data)

    def test_round_trip_with_optimizer(self, tmp_path):
        params = self._tree(1)
        state = adamw_init(params, lr=0.005, weight_decay=0.01)
        for p in params.values():
            p.grad = np.random.default_rng(2).normal(size=p.data.shape)
        adamw_step(state, params)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, state)
        loaded, opt = load_checkpoint(path)
        assert opt.step == 1
        assert (opt.lr, opt.weight_decay) == (0.005, 0.01)
        for name in params:
            np.testing.assert_array_equal(opt.m[name], state.m[name])
            np.testing.assert_array_equal(opt.v[name], state.v[name])

    def test_identical_saves_are_bit_identical(self, tmp_path):
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(a, self._tree(3))
        save_checkpoint(b, self._tree(3))
        assert a.read_bytes() == b.read_bytes()

    def test_restore_into_model(self, tmp_path):
        params = self._tree(4)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params)
        fresh = self._tree(5)
        restore_params(fresh, load_checkpoint(path)[0])
        for name in params:
            np.testing.assert_array_equal(fresh[name].data, params[name].data)

    def test_restore_name_mismatch(self, tmp_path):
        params = self._tree(6)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params)
        loaded, _ = load_checkpoint(path)
        del loaded["phi_node.b0"]
        with pytest.raises(ParseError, match="phi_node.b0"):
            restore_params(params, loaded)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTAFILE")
        with pytest.raises(ParseError, match="magic"):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, self._tree(7))
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(ParseError):
            load_checkpoint(path)

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, self._tree(8))
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(ParseError, match="trailing"):
            load_checkpoint(path)
