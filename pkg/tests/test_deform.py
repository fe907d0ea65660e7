import numpy as np
import pytest

from fmla.deform import dcn_block_forward, deform_conv1d, init_dcn_block, predict_offsets
from fmla.errors import DimensionError
from fmla.model import FMLAModel, ModelConfig
from fmla.tensor import Tensor, batch_norm, conv1d_same, gradient_check, parameter, relu, sum_


def center_tap_kernel():
    k = np.zeros((1, 1, 3))
    k[0, 0, 1] = 1.0
    return Tensor(k)


class TestOffsets:
    def test_zero_init(self, rng):
        p = init_dcn_block(2, 4, rng)
        assert np.all(predict_offsets(Tensor(rng.normal(size=(2, 10))), p).data == 0.0)

    def test_constant_input_constant_interior_offsets(self, rng):
        p = init_dcn_block(2, 4, rng)
        p.offset_kernel.data[...] = rng.normal(size=p.offset_kernel.shape)
        off = predict_offsets(Tensor(np.full((2, 12), 0.7)), p).data
        assert off.shape == (3, 12)
        np.testing.assert_allclose(off[:, 1:-1], off[:, 1:2].repeat(10, axis=1), atol=1e-14)

    def test_offset_net_gradient(self, rng):
        p = init_dcn_block(2, 4, rng)
        p.offset_kernel.data[...] = rng.normal(size=p.offset_kernel.shape)
        x = Tensor(rng.normal(size=(2, 9)))
        w = rng.normal(size=(3, 9))
        assert gradient_check(lambda: sum_(predict_offsets(x, p) * w), [p.offset_kernel, p.offset_bias]) < 1e-4


class TestDeformConv:
    @pytest.mark.parametrize("shape", [(3, 16), (2, 3, 7), (1, 5)])
    def test_zero_offsets_equal_conv(self, rng, shape):
        x = Tensor(rng.normal(size=shape))
        w = Tensor(rng.normal(size=(4, shape[-2], 3)))
        off = Tensor(np.zeros(shape[:-2] + (3, shape[-1])))
        np.testing.assert_allclose(deform_conv1d(x, off, w).data, conv1d_same(x, w).data, atol=1e-12)

    def test_unit_shift_on_ramp(self, rng):
        n = 12
        x = Tensor(np.arange(float(n))[None])
        w = Tensor(rng.normal(size=(2, 1, 3)))
        base = deform_conv1d(x, Tensor(np.zeros((3, n))), w).data
        shifted = deform_conv1d(x, Tensor(np.ones((3, n))), w).data
        np.testing.assert_allclose(shifted[:, 1:-2], base[:, 2:-1], atol=1e-12)

    def test_half_sample_midpoints(self):
        out = deform_conv1d(Tensor([[0.0, 1.0, 2.0, 3.0]]), Tensor(np.full((3, 4), 0.5)), center_tap_kernel()).data
        np.testing.assert_allclose(out[0, :3], [0.5, 1.5, 2.5])

    def test_far_offsets_read_the_border(self):
        # samples far past either edge land on the zero padding
        x = Tensor([[4.0, 1.0, 2.0, 3.0]])
        for shift in (10.0, -10.0):
            out = deform_conv1d(x, Tensor(np.full((3, 4), shift)), center_tap_kernel()).data
            np.testing.assert_array_equal(out, np.zeros((1, 4)))

    def test_one_past_the_edge_hits_border_value(self):
        x = Tensor([[4.0, 1.0, 2.0, 3.0]])
        out = deform_conv1d(x, Tensor(np.full((3, 4), 0.0)), center_tap_kernel()).data
        np.testing.assert_array_equal(out, x.data)

    def test_offset_shape_checked(self, rng):
        with pytest.raises(DimensionError):
            deform_conv1d(Tensor(rng.normal(size=(2, 8))), Tensor(np.zeros((3, 7))), Tensor(np.zeros((1, 2, 3))))

    def test_gradients_off_lattice(self, rng):
        x = parameter(rng.uniform(-1, 1, (2, 2, 9)))
        off = parameter(rng.uniform(-1.4, 1.4, (2, 3, 9)) + 0.137)
        w = parameter(rng.uniform(-1, 1, (3, 2, 3)))
        probe = rng.normal(size=(2, 3, 9))
        assert gradient_check(lambda: sum_(deform_conv1d(x, off, w) * probe), [x, off, w]) < 1e-4

    @pytest.mark.parametrize("n", [1, 2, 5, 33])
    def test_length_preserved(self, rng, n):
        out = deform_conv1d(Tensor(rng.normal(size=(2, n))), Tensor(rng.normal(size=(3, n))),
                            Tensor(rng.normal(size=(4, 2, 3))))
        assert out.shape == (4, n)


class TestBlock:
    def test_relu_range_and_bn_mean(self, rng):
        p = init_dcn_block(1, 6, rng)
        x = Tensor(rng.normal(size=(8, 1, 20)))
        out = dcn_block_forward(x, p, training=True).data
        assert np.all(out >= 0)
        pre = batch_norm(conv1d_same(x, p.kernel), p.bn_gain, p.bn_bias, np.zeros(6), np.ones(6), True).data
        np.testing.assert_allclose(pre.mean(axis=(0, 2)), 0.0, atol=1e-6)

    def test_running_stats_only_in_training(self, rng):
        p = init_dcn_block(1, 4, rng)
        x = Tensor(rng.normal(size=(4, 1, 10)))
        dcn_block_forward(x, p, training=False)
        assert np.all(p.running_mean == 0) and np.all(p.running_var == 1)
        dcn_block_forward(x, p, training=True)
        assert np.any(p.running_mean != 0)

    def test_eval_before_training_uses_init_stats(self, rng):
        p = init_dcn_block(1, 4, rng)
        x = Tensor(rng.normal(size=(3, 1, 10)))
        ref = relu(conv1d_same(x, p.kernel) * (1 / np.sqrt(1 + 1e-5)))
        np.testing.assert_allclose(dcn_block_forward(x, p, training=False).data, ref.data, atol=1e-12)

    def test_default_channel_ladder(self):
        model = FMLAModel(ModelConfig(seq_len=16))
        assert [dp.kernel.shape[0] for dp in model.dcn] == [128, 128, 64, 64]
        assert all(dp.taps == 3 and dp.offset_kernel.shape[-1] == 3 for dp in model.dcn)
