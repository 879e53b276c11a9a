"""Attribution method tests: analytic identities on linear models,
hand-computed guided backprop, enumeration oracles for occlusion and RISE,
and the integrated-gradients completeness axiom."""
import numpy as np
import pytest

from forgrad import attribution as attr
from forgrad.attribution import (ALL_METHODS, AttributionMap, GradientProvider,
                                 MethodConfig, bilinear_resize, channel_reduce)
from forgrad.errors import NotAConvLayer
from forgrad.nn import (LayerSpec, TrainConfig, forward, make_network, train)
from forgrad.nn.network import Network, bias_name, weight_name


def linear_net(w, b=None, input_shape=(1, 2, 2)):
    """Single dense layer with the given (n_in, n_out) weights."""
    w = np.asarray(w, dtype=np.float64)
    layers = (LayerSpec("Dense", channels_out=w.shape[1]), LayerSpec("Softmax"))
    params = {weight_name(0): w,
              bias_name(0): np.zeros(w.shape[1]) if b is None else np.asarray(b)}
    return Network(layers, params, input_shape, w.shape[1])


def small_cnn(seed=0):
    layers = (
        LayerSpec("Conv2D", kernel_size=3, stride=1, channels_out=3, padding="same"),
        LayerSpec("ReLU"),
        LayerSpec("MaxPool2D", kernel_size=2, stride=2),
        LayerSpec("Flatten"),
        LayerSpec("Dense", channels_out=2),
        LayerSpec("Softmax"),
    )
    return make_network(layers, (1, 8, 8), 2, seed=seed)


RNG = np.random.default_rng(123)
LIN_W = RNG.normal(size=(4, 2))
LIN_NET = linear_net(LIN_W)
LIN_X = RNG.random((1, 2, 2))


class TestLinearIdentities:
    def test_saliency_is_abs_weight(self):
        amap = attr.compute("saliency", LIN_NET, LIN_X, 0)
        expected = np.abs(LIN_W[:, 0]).reshape(2, 2)
        assert np.allclose(amap.values, expected, atol=1e-12)

    def test_ig_equals_gradient_times_input(self):
        ig = attr.compute("integrated_gradients", LIN_NET, LIN_X, 1)
        gi = attr.compute("gradient_input", LIN_NET, LIN_X, 1)
        assert np.max(np.abs(ig.values - gi.values)) < 1e-9

    def test_ig_equals_unit_occlusion(self):
        cfg = MethodConfig(occlusion_patch=1, occlusion_stride=1,
                           occlusion_baseline=0.0)
        occ = attr.compute("occlusion", LIN_NET, LIN_X, 1, cfg=cfg)
        ig_signed = attr.integrated_gradients_signed(
            GradientProvider(LIN_NET), LIN_X, 1, MethodConfig())
        # occlusion drops are signed; compare against the signed IG values
        assert np.max(np.abs(occ.values - ig_signed[0])) < 1e-9

    def test_smoothgrad_zero_noise_is_saliency_bitwise(self):
        cfg = MethodConfig(noise_std=0.0)
        sg = attr.compute("smoothgrad", LIN_NET, LIN_X, 0, cfg=cfg)
        sal = attr.compute("saliency", LIN_NET, LIN_X, 0)
        assert np.array_equal(sg.values, sal.values)

    def test_vargrad_zero_noise_is_zero(self):
        cfg = MethodConfig(noise_std=0.0)
        vg = attr.compute("vargrad", LIN_NET, LIN_X, 0, cfg=cfg)
        assert np.all(vg.values == 0.0)

    def test_squaregrad_zero_noise_is_squared_saliency(self):
        cfg = MethodConfig(noise_std=0.0)
        sq = attr.compute("squaregrad", LIN_NET, LIN_X, 0, cfg=cfg)
        expected = (LIN_W[:, 0] ** 2).reshape(2, 2)
        assert np.allclose(sq.values, expected, atol=1e-12)


class TestChannelReduce:
    def test_mean_abs_over_channels(self):
        g = np.array([[[1.0, -2.0]], [[-3.0, 4.0]]])  # (2, 1, 2)
        assert np.array_equal(channel_reduce(g), np.array([[2.0, 3.0]]))

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError):
            channel_reduce(np.zeros((2, 2)))


class TestGuidedBackprop:
    def test_hand_computed_chain(self):
        # x --dense(w1)--> h --relu--> --dense(w2)--> logits, num_classes=2
        w1 = np.array([[1.0, -1.0, 2.0],
                       [1.0, 1.0, -1.0]])  # (n_in=2, hidden=3)
        w2 = np.array([[1.0, 0.0],
                       [1.0, 0.0],
                       [-2.0, 1.0]])  # (hidden=3, out=2)
        layers = (LayerSpec("Dense", channels_out=3), LayerSpec("ReLU"),
                  LayerSpec("Dense", channels_out=2), LayerSpec("Softmax"))
        params = {weight_name(0): w1, bias_name(0): np.zeros(3),
                  weight_name(2): w2, bias_name(2): np.zeros(2)}
        net = Network(layers, params, (1, 1, 2), 2)
        x = np.array([[[2.0, 1.0]]])  # h = [3, -1, 3] -> relu [3, 0, 3]
        # backward from logit 0: dh = w2[:,0] = [1, 1, -2]
        # guided relu: keep where forward input > 0 AND cotangent > 0
        # h_pre = [3, -1, 3]: unit 0 passes (3>0, 1>0); unit 1 blocked (pre<0);
        # unit 2 blocked (cotangent -2 < 0)  => dh_guided = [1, 0, 0]
        # dx = w1 @ dh_guided = [1, 1]
        amap = attr.compute("guided_backprop", net, x, 0)
        assert np.allclose(amap.values, np.array([[1.0, 1.0]]), atol=1e-12)

    def test_provider_relu_mode_untouched(self):
        provider = GradientProvider(small_cnn())
        attr.guided_backprop(provider, RNG.random((1, 8, 8)), 0)
        assert provider.relu_mode == "standard"


class TestIntegratedGradients:
    def test_completeness_on_small_cnn(self):
        net = small_cnn()
        rng = np.random.default_rng(5)
        provider = GradientProvider(net)
        cfg = MethodConfig(ig_steps=512)
        for _ in range(3):
            x = rng.random((1, 8, 8))
            signed = attr.integrated_gradients_signed(provider, x, 0, cfg)
            fx = float(forward(net, x).logits[0])
            fb = float(forward(net, np.zeros_like(x)).logits[0])
            assert abs(signed.sum() - (fx - fb)) / max(abs(fx - fb), 1e-12) < 1e-2

    def test_exact_on_linear_model_any_steps(self):
        signed = attr.integrated_gradients_signed(
            GradientProvider(LIN_NET), LIN_X, 0, MethodConfig(ig_steps=1))
        fx = float(forward(LIN_NET, LIN_X).logits[0])
        assert abs(signed.sum() - fx) < 1e-12


class TestOcclusion:
    def test_enumeration_oracle(self):
        net = small_cnn(seed=2)
        x = RNG.random((1, 8, 8))
        cfg = MethodConfig(occlusion_patch=4, occlusion_stride=4,
                           occlusion_baseline=0.0)
        amap = attr.compute("occlusion", net, x, 1, cfg=cfg)
        base = float(forward(net, x).logits[1])
        # non-overlapping 4x4 patches: each pixel carries its patch's drop
        for t in (0, 4):
            for l in (0, 4):
                xo = x.copy()
                xo[:, t : t + 4, l : l + 4] = 0.0
                drop = base - float(forward(net, xo).logits[1])
                assert np.allclose(amap.values[t : t + 4, l : l + 4], drop,
                                   atol=1e-12)

    def test_overlapping_patches_average(self):
        net = linear_net(np.eye(4))
        x = np.ones((1, 2, 2))
        cfg = MethodConfig(occlusion_patch=1, occlusion_stride=1)
        amap = attr.compute("occlusion", net, x, 0, cfg=cfg)
        assert amap.values.shape == (2, 2)

    def test_patch_too_large(self):
        with pytest.raises(ValueError):
            attr.compute("occlusion", LIN_NET, LIN_X, 0,
                         cfg=MethodConfig(occlusion_patch=3))


class TestRise:
    def test_linear_model_recovers_weight_ordering(self):
        w = np.array([[4.0], [3.0], [2.0], [1.0]])
        net = linear_net(w, input_shape=(1, 2, 2))
        x = np.ones((1, 2, 2))
        cfg = MethodConfig(rise_grid=2, rise_n_samples=3000, rise_keep_prob=0.5,
                           seed=0)
        amap = attr.compute("rise", net, x, 0, cfg=cfg)
        order = np.argsort(-amap.values.ravel())
        assert list(order) == [0, 1, 2, 3]

    def test_deterministic_given_seed(self):
        net = small_cnn()
        x = RNG.random((1, 8, 8))
        cfg = MethodConfig(rise_n_samples=50, seed=4)
        a = attr.compute("rise", net, x, 0, cfg=cfg)
        b = attr.compute("rise", net, x, 0, cfg=cfg)
        assert np.array_equal(a.values, b.values)


class TestGradCam:
    def test_shape_and_nonnegativity(self):
        net = small_cnn()
        amap = attr.compute("gradcam", net, RNG.random((1, 8, 8)), 0)
        assert amap.values.shape == (8, 8)
        assert np.all(amap.values >= 0.0)

    def test_rejects_non_conv_layer(self):
        net = small_cnn()
        with pytest.raises(NotAConvLayer):
            attr.compute("gradcam", net, RNG.random((1, 8, 8)), 0, conv_layer=1)

    def test_rejects_conv_free_network(self):
        with pytest.raises(NotAConvLayer):
            attr.compute("gradcam", LIN_NET, LIN_X, 0)


class TestBilinearResize:
    def test_identity_at_same_size(self):
        m = RNG.random((5, 7))
        assert np.allclose(bilinear_resize(m, 5, 7), m, atol=1e-12)

    def test_constant_preserved(self):
        out = bilinear_resize(np.full((3, 3), 2.5), 9, 9)
        assert np.allclose(out, 2.5)

    def test_mean_preserved_on_integer_upscale(self):
        m = RNG.random((4, 4))
        out = bilinear_resize(m, 8, 8)
        assert abs(out.mean() - m.mean()) < 0.05


class TestDispatcherAndFiltering:
    def test_all_methods_dispatch(self):
        net = small_cnn()
        x = RNG.random((1, 8, 8))
        cfg = MethodConfig(n_samples=4, ig_steps=4, rise_n_samples=40)
        for method in ALL_METHODS:
            amap = attr.compute(method, net, x, 1, cfg=cfg)
            assert isinstance(amap, AttributionMap)
            assert amap.values.shape == (8, 8)
            assert amap.method == method
            assert amap.target_class == 1

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError):
            attr.compute("banana", small_cnn(), RNG.random((1, 8, 8)), 0)

    def test_provider_filtering_changes_gradient(self):
        net = small_cnn()
        x = RNG.random((1, 8, 8))
        raw = GradientProvider(net)(x, 0)
        filt = GradientProvider(net, sigma=4.0)(x, 0)
        assert not np.allclose(raw, filt)
        # bypass sigma reproduces the raw gradient exactly
        bypass = GradientProvider(net, sigma=8.0)(x, 0)
        assert np.allclose(raw, bypass, atol=1e-9)

    def test_filtered_map_provenance(self):
        amap = attr.compute("saliency", small_cnn(), RNG.random((1, 8, 8)), 0)
        filtered = attr.filtered_map(amap, 4.0)
        assert filtered.provenance == "map-filtered"
        assert filtered.sigma == 4.0
        assert amap.provenance == "unfiltered"
