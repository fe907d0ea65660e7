from dataclasses import replace

import numpy as np
import pytest

from conftest import tiny_config
from fmla.complexity import params_table
from fmla.errors import ConfigError, DataError
from fmla.losses import cross_entropy_loss
from fmla.model import FMLAModel, ModelConfig, count_params, params_by_module, positional_encoding
from fmla.verify import run_gradcheck


class TestConfig:
    def test_defaults(self):
        cfg = ModelConfig()
        assert (cfg.num_blocks, cfg.d, cfg.num_heads, cfg.C) == (4, 64, 4, 16)
        assert cfg.dcn_channels == (128, 128, 64, 64)
        assert (cfg.kernel_size, cfg.mask_ratio, cfg.self_distill_n, cfg.alpha, cfg.beta) == (3, 0.5, 3, 1.0, 1.0)

    @pytest.mark.parametrize("kw", [
        dict(d=10, num_heads=4),
        dict(dcn_channels=(128, 128, 64, 62)),
        dict(dcn_channels=(8, 8)),
        dict(mask_ratio=1.0),
        dict(mask_placement="tail"),
        dict(kernel_size=4),
        dict(seed=2**24),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            ModelConfig(**kw)


class TestStem:
    def test_zero_series_gives_positional_encoding(self):
        model = FMLAModel(tiny_config())
        out = model.embed(np.zeros((1, 32))).data[0]
        np.testing.assert_array_equal(out, positional_encoding(32, 16))

    def test_shape(self):
        model = FMLAModel(ModelConfig(seq_len=20))
        assert model.embed(np.zeros((2, 20))).shape == (2, 20, 64)

    def test_positions_distinguished(self):
        pe = positional_encoding(16, 8)
        assert len({tuple(np.round(r, 12)) for r in pe}) == 16


class TestEval:
    def setup_method(self):
        self.model = FMLAModel(tiny_config(seq_len=96, num_classes=3))
        self.x = np.random.default_rng(0).normal(size=(2, 96))

    def test_deterministic(self):
        a = self.model.forward_eval(self.x).u_sum.data
        b = self.model.forward_eval(self.x).u_sum.data
        assert np.array_equal(a, b)

    def test_branch_sum_and_softmax(self):
        out = self.model.forward_eval(self.x)
        assert out.u_sum.shape == (2, 3)
        np.testing.assert_array_equal(out.u_sum.data, out.u_dcn.data + out.u_cla.data)
        np.testing.assert_allclose(out.y_hat.data.sum(-1), 1.0, atol=1e-9)

    def test_seq_len_mismatch(self):
        with pytest.raises(DataError, match="95"):
            self.model.forward_eval(self.x[:, :95])

    def test_non_finite_input(self):
        x = self.x.copy()
        x[0, 3] = np.nan
        with pytest.raises(DataError):
            self.model.forward_eval(x)


class TestTrainForward:
    def test_degenerate_is_plain_ce(self, rng):
        model = FMLAModel(tiny_config(mask_ratio=0.0, alpha=0.0, beta=0.0))
        x, y = rng.normal(size=(4, 32)), np.array([0, 1, 1, 0])
        total, parts, passes = model.forward_train(x, y, rng)
        assert parts.loss1 == 0.0 and parts.loss2 == 0.0
        assert float(total) == pytest.approx(float(cross_entropy_loss(passes[0].u_sum, y)), abs=1e-15)
        assert all(p is passes[0] for p in passes)

    def test_loss1_zero_without_masks(self, rng):
        model = FMLAModel(tiny_config(mask_ratio=0.0))
        _, parts, _ = model.forward_train(rng.normal(size=(3, 32)), [0, 1, 0], rng)
        assert parts.loss1 == 0.0 and parts.loss2 >= 0.0

    def test_breakdown_additive(self, rng):
        model = FMLAModel(tiny_config())
        total, parts, passes = model.forward_train(rng.normal(size=(3, 32)), [0, 1, 0], rng)
        assert len(passes) == 3
        assert float(total) == pytest.approx(parts.loss1 + parts.loss2 + parts.loss3, abs=1e-12)
        assert parts.loss1 > 0 and parts.loss2 > 0

    def test_seeded_stochasticity(self):
        x = np.random.default_rng(0).normal(size=(3, 32))
        runs = [float(FMLAModel(tiny_config()).forward_train(x, [0, 1, 0], np.random.default_rng(s))[0]) for s in (1, 1, 2)]
        assert runs[0] == runs[1] != runs[2]

    @pytest.mark.parametrize("placement", ["heads", "block"])
    def test_full_gradient_check(self, toy_config, placement):
        report = run_gradcheck(replace(toy_config, mask_placement=placement, num_blocks=1, dcn_channels=(4,)))
        assert report.max_error < 1e-4, report.worst


class TestPredict:
    def test_argmax_and_ties(self, monkeypatch):
        model = FMLAModel(tiny_config(num_classes=2))
        logits = np.array([[2.0, 1.0], [0.5, 0.5], [-1.0, 3.0]])

        class Fake:
            def __init__(self, u):
                self.u_sum = type("T", (), {"data": u})()

        monkeypatch.setattr(model, "forward_eval", lambda x: Fake(logits[: len(x)]))
        assert model.predict_labels(np.zeros((3, 32))).tolist() == [0, 0, 1]
        monkeypatch.setattr(model, "forward_eval", lambda x: Fake(logits[: len(x)] + 7.5))
        assert model.predict_labels(np.zeros((3, 32))).tolist() == [0, 0, 1]


class TestParams:
    def test_classes_touch_heads_only(self):
        a = params_by_module(ModelConfig(num_classes=2))
        b = params_by_module(ModelConfig(num_classes=4))
        changed = {k for k in a if a[k] != b[k]}
        assert changed == {"head_dcn", "head_cla"}

    def test_independent_of_length(self):
        assert count_params(ModelConfig(seq_len=128)) == count_params(ModelConfig(seq_len=512))

    def test_hand_sum_toy(self):
        cfg = ModelConfig(num_blocks=1, d=8, num_heads=2, C=4, dcn_channels=(4,), num_classes=2, seq_len=16)
        dh, hidden = 4, 32
        stem = 8 + 8
        dcn = 4 * 1 * 3 + 3 * 1 * 3 + 3 + 4 + 4
        cla = (8 * dh + 2 * dh + 2 * 8 * dh + dh * 2 * dh + 2 * 4 * 2 + 8 * 8
               + 8 * hidden + hidden + hidden * 8 + 8 + 4 * 8)
        heads = (4 * 2 + 2) + (8 * 2 + 2) + 2 * 8
        assert count_params(cfg) == stem + dcn + cla + heads

    def test_analytic_table_matches_model(self):
        for cfg in (ModelConfig(), tiny_config(), ModelConfig(num_classes=7, C=8)):
            assert params_table(cfg)["total"] == count_params(cfg)
