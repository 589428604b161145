import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attnocr import autodiff as ad
from attnocr import cnn
from attnocr.cnn import Conv, ExtractorConfig, FeatureMap, Pool
from attnocr.model import ModelConfig


def test_preset_shapes_on_default_views():
    expect = {"tiny-2": (16, 16, 64), "small-4": (16, 16, 128), "mid-6": (16, 16, 128), "deep-8": (8, 8, 128)}
    for name, shape in expect.items():
        ex = cnn.preset(name)
        assert ex.output_shape() == shape
    assert [cnn.preset(n).depth for n in cnn.PRESETS] == [2, 4, 6, 8]


def test_receptive_field_known_values():
    two = ExtractorConfig((Conv(3, 3, 1), Pool(), Conv(3, 3, 1)), (16, 16), 1)
    assert cnn.receptive_field(two) == 8
    assert [cnn.receptive_field(cnn.preset(n)) for n in cnn.PRESETS] == [10, 26, 42, 94]


@pytest.mark.parametrize("name", ["tiny-2", "small-4", "mid-6", "deep-8"])
def test_receptive_field_matches_gradient_footprint(name):
    rf = cnn.receptive_field(cnn.preset(name))
    assert cnn.footprint_extent(cnn.preset(name), draws=64) == (rf, rf)


def test_receptive_field_footprint_small_stack():
    two = ExtractorConfig((Conv(3, 3, 1), Pool(), Conv(3, 3, 1)), (16, 16), 1)
    assert cnn.footprint_extent(two) == (8, 8)


def test_zero_input_gives_zero_features():
    ex = cnn.preset("tiny-2", (16, 16))
    params = cnn.init_params(ex, np.random.default_rng(0))
    f = cnn.extract_features(np.zeros((16, 16, 3), dtype=np.float32), ex, params)
    assert f.data.shape == (4, 4, 64)
    assert np.all(f.data.data == 0)


def test_extract_rejects_wrong_input():
    ex = cnn.preset("tiny-2", (16, 16))
    params = cnn.init_params(ex, np.random.default_rng(0))
    with pytest.raises(ValueError):
        cnn.extract_features(np.zeros((16, 15, 3)), ex, params)


def test_validate_rejects_tiny_grids():
    with pytest.raises(ValueError, match="2x2"):
        cnn.preset("deep-8", (8, 8)).validate()
    with pytest.raises(ValueError):
        cnn.preset("nope")


def _map(rng, h, w, c=3):
    return FeatureMap(ad.constant(rng.normal(size=(h, w, c))))


def test_concat_views_widths_add_up():
    rng = np.random.default_rng(1)
    maps = [_map(rng, 4, 3) for _ in range(4)]
    out = cnn.concat_views(maps)
    assert (out.height, out.width, out.channels) == (4, 12, 3)


def test_concat_single_view_is_identity():
    m = _map(np.random.default_rng(2), 2, 5)
    assert cnn.concat_views([m]) is m


def test_concat_mismatch_errors():
    rng = np.random.default_rng(3)
    with pytest.raises(ValueError):
        cnn.concat_views([_map(rng, 4, 3), _map(rng, 5, 3)])
    with pytest.raises(ValueError):
        cnn.concat_views([_map(rng, 4, 3, 2), _map(rng, 4, 3, 3)])
    with pytest.raises(ValueError):
        cnn.concat_views([])


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(1, 4), st.integers(0, 10**6))
def test_concat_cell_lookup(views, h, w, seed):
    rng = np.random.default_rng(seed)
    maps = [_map(rng, h, w, 2) for _ in range(views)]
    out = cnn.concat_views(maps).data.data
    for v in range(views):
        for i in range(h):
            for j in range(w):
                np.testing.assert_array_equal(out[i, v * w + j], maps[v].data.data[i, j])


def test_four_view_concat_matches_reference_dims():
    # four 16x16x320 per-view maps side by side; stored H x W x C, so width grows to 64
    rng = np.random.default_rng(4)
    out = cnn.concat_views([_map(rng, 16, 16, 320) for _ in range(4)])
    assert out.data.shape == (16, 64, 320)


def test_two_view_concat_left_block():
    rng = np.random.default_rng(5)
    a, b = _map(rng, 5, 3, 8), _map(rng, 5, 3, 8)
    out = cnn.concat_views([a, b]).data.data
    assert out.shape == (5, 6, 8)
    np.testing.assert_array_equal(out[:, :3], a.data.data)
    np.testing.assert_array_equal(out[:, 3:], b.data.data)


def test_features_deterministic():
    ex = cnn.preset("small-4", (16, 16))
    x = np.random.default_rng(6).uniform(size=(16, 16, 3)).astype(np.float32)
    f1 = cnn.extract_features(x, ex, cnn.init_params(ex, np.random.default_rng(7))).data.data
    f2 = cnn.extract_features(x, ex, cnn.init_params(ex, np.random.default_rng(7))).data.data
    assert np.array_equal(f1, f2)


def test_views_share_parameters():
    from attnocr.model import AttentionOCR, ModelConfig

    cfg = ModelConfig(views=4, view_size=(16, 16), lstm_width=8, attn_width=4)
    m = AttentionOCR.create(cfg, 0)
    x = np.random.default_rng(8).uniform(size=(1, 4, 16, 16, 3)).astype(np.float32)
    with ad.no_grad():
        before = m.features(x).data.data.copy()
        m.params["cnn/conv1/w"].data[0, 0, 0, 0] += 0.5
        after = m.features(x).data.data
    j = before.shape[2] // 4
    for v in range(4):
        assert not np.array_equal(before[..., v * j:(v + 1) * j, :], after[..., v * j:(v + 1) * j, :])


def test_model_features_equal_per_view_concat():
    from attnocr.model import AttentionOCR, ModelConfig

    cfg = ModelConfig(views=3, view_size=(16, 24), lstm_width=8, attn_width=4)
    m = AttentionOCR.create(cfg, 1)
    x = np.random.default_rng(9).uniform(size=(2, 3, 16, 24, 3)).astype(np.float32)
    with ad.no_grad():
        batched = m.features(x).data.data
        for b in range(2):
            maps = [cnn.extract_features(2 * x[b, v] - 1, m.extractor, m.params) for v in range(3)]
            np.testing.assert_allclose(batched[b], cnn.concat_views(maps).data.data, rtol=1e-6, atol=1e-6)


def test_fan_in_capped_init():
    ex = cnn.preset("deep-8", (32, 32))
    fixed = cnn.init_params(ex, np.random.default_rng(0), std=0.1)
    capped = cnn.init_params(ex, np.random.default_rng(0), std=0.1, cap_fan_in=True)
    # first layer fan-in 27 keeps 0.1; later 128-channel layers drop to sqrt(2/1152)
    np.testing.assert_array_equal(fixed["cnn/conv0/w"].data, capped["cnn/conv0/w"].data)
    # the rejection sampler is scale-equivariant, so capped kernels are rescaled copies
    ratio = np.sqrt(2 / (3 * 3 * 128)) / 0.1
    np.testing.assert_allclose(capped["cnn/conv7/w"].data, fixed["cnn/conv7/w"].data * ratio, rtol=1e-6, atol=1e-9)
    with pytest.raises(ValueError):
        ModelConfig(conv_init="xavier")
