import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from scsd.tdst import (
    StyleAdapter,
    StyleControl,
    TDSTConfig,
    TextDrivenStyleTransform,
    apply_tdst,
    fft_decompose,
    ifft_compose,
    low_freq_mask,
    modulate_amplitude,
    style_adapter,
    style_layer,
)


def naive_centred_dft(x: np.ndarray) -> np.ndarray:
    """O(n^4) DFT with the zero frequency moved to (h // 2, w // 2)."""
    h, w = x.shape
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            ku, kv = u - h // 2, v - w // 2
            for i in range(h):
                for j in range(w):
                    out[u, v] += x[i, j] * np.exp(-2j * np.pi * (ku * i / h + kv * j / w))
    return out


@pytest.mark.parametrize("shape", [(4, 4), (5, 3), (6, 7)])
def test_decompose_matches_hand_dft(shape):
    x = np.random.default_rng(0).standard_normal(shape)
    spec = fft_decompose(torch.from_numpy(x))
    ref = naive_centred_dft(x)
    np.testing.assert_allclose(spec.amplitude.numpy(), np.abs(ref), atol=1e-9)
    big = np.abs(ref) > 1e-9
    np.testing.assert_allclose(
        np.exp(1j * spec.phase.numpy()[big]), np.exp(1j * np.angle(ref[big])), atol=1e-9
    )


def test_constant_map_dc_only():
    spec = fft_decompose(torch.full((1, 4, 4), 2.5))
    amp = spec.amplitude[0]
    assert amp[2, 2].item() == pytest.approx(16 * 2.5)
    amp[2, 2] = 0
    assert amp.abs().max() < 1e-5
    assert spec.phase[0, 2, 2].item() == 0


def test_impulse_flat_amplitude():
    x = torch.zeros(5, 6, dtype=torch.float64)
    x[0, 0] = 1
    torch.testing.assert_close(fft_decompose(x).amplitude, torch.ones(5, 6, dtype=torch.float64))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(2, 20), st.integers(2, 20), st.integers(0, 2**31 - 1))
def test_round_trip(c, h, w, seed):
    f = torch.randn(c, h, w, generator=torch.Generator().manual_seed(seed))
    spec = fft_decompose(f)
    assert (ifft_compose(spec.amplitude, spec.phase) - f).abs().max() < 1e-5


def test_compose_scaling_and_zero():
    f = torch.randn(3, 8, 6)
    spec = fft_decompose(f)
    assert (ifft_compose(2 * spec.amplitude, spec.phase) - 2 * f).abs().max() < 1e-5
    assert not ifft_compose(torch.zeros_like(spec.amplitude), spec.phase).any()


def test_compose_shape_mismatch():
    with pytest.raises(ValueError):
        ifft_compose(torch.ones(2, 2), torch.ones(2, 3))


@pytest.mark.parametrize(
    "h,w,alpha,rows,cols",
    [
        (8, 8, 1.0, (0, 7), (0, 7)),
        (8, 8, 0.15, (4, 4), (4, 4)),
        (8, 8, 0.5, (2, 6), (2, 6)),
        (9, 7, 0.15, (4, 4), (3, 3)),
        (16, 16, 0.15, (7, 9), (7, 9)),
    ],
)
def test_mask_bounds(h, w, alpha, rows, cols):
    m = low_freq_mask(h, w, alpha)
    assert (m.rows, m.cols) == (rows, cols)
    expected = torch.zeros(h, w)
    expected[rows[0] : rows[1] + 1, cols[0] : cols[1] + 1] = 1
    assert torch.equal(m.mask, expected)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.floats(0.01, 1.0))
def test_mask_contains_dc_and_is_symmetric(h, w, alpha):
    m = low_freq_mask(h, w, alpha).mask
    assert m[h // 2, w // 2] == 1
    # closed under frequency negation: shifted index j <-> (2 * (n // 2) - j) mod n
    ri = [(2 * (h // 2) - i) % h for i in range(h)]
    ci = [(2 * (w // 2) - j) % w for j in range(w)]
    assert torch.equal(m, m[ri][:, ci])


def test_mask_rejects_bad_alpha():
    for a in (0, -0.1, 1.5):
        with pytest.raises(ValueError):
            low_freq_mask(8, 8, a)


def test_modulate_zero_difference_exact():
    a = torch.rand(3, 8, 8)
    m = low_freq_mask(8, 8, 0.5).mask
    assert torch.equal(modulate_amplitude(a, m, torch.zeros(3, 8, 8), 2.0), a)


def test_modulate_saturation_doubles():
    a = torch.rand(3, 5, 5)
    out = modulate_amplitude(a, torch.ones(5, 5), torch.full((3, 5, 5), 1e4), 1.0)
    torch.testing.assert_close(out, 2 * a, atol=1e-4, rtol=0)


def test_modulate_clamps_negative_factor():
    a = torch.ones(1, 1, 1)
    f_d = torch.full((1, 1, 1), math.atanh(-0.5))
    assert modulate_amplitude(a, torch.ones(1, 1), f_d, 4.0).item() == 0


def test_modulate_rejects_nonpositive_beta():
    with pytest.raises(ValueError):
        modulate_amplitude(torch.ones(1, 2, 2), torch.ones(2, 2), torch.zeros(1, 2, 2), 0.0)


def test_modulate_resamples_difference():
    out = modulate_amplitude(torch.ones(2, 8, 8), torch.ones(8, 8), torch.zeros(2, 4, 4), 1.0)
    assert out.shape == (2, 8, 8)


def test_adapter_zero_input_zero_output():
    ad = StyleAdapter(16, {3: 8})
    assert not style_adapter(torch.zeros(12, 12, 16), 3, (4, 4), ad).any()


def test_adapter_resizes():
    ad = StyleAdapter(16, {4: 8})
    assert style_adapter(torch.randn(2, 64, 64, 16), 4, (8, 8), ad).shape == (2, 8, 8, 8)


def test_adapter_identity_weight_constant_vector():
    ad = StyleAdapter(6, {3: 6})
    with torch.no_grad():
        ad.convs["3"].weight.copy_(torch.eye(6)[:, :, None, None])
    v = torch.randn(6)
    out = style_adapter(v.expand(16, 16, 6), 3, (4, 4), ad)
    torch.testing.assert_close(out, v[:, None, None].expand(6, 4, 4))


def test_adapter_unknown_layer():
    with pytest.raises(ValueError):
        style_adapter(torch.zeros(4, 4, 2), 5, (2, 2), StyleAdapter(2, {3: 2}))


def _setup(seed=0):
    g = torch.Generator().manual_seed(seed)
    feats = {
        2: torch.randn(2, 4, 16, 16, generator=g),
        3: torch.randn(2, 8, 8, 8, generator=g),
        4: torch.randn(2, 12, 4, 4, generator=g),
        5: torch.randn(2, 16, 2, 2, generator=g),
    }
    module = TextDrivenStyleTransform(10, {3: 8, 4: 12, 5: 16})
    diff = torch.randn(2, 32, 32, 10, generator=g)
    return feats, module, diff


def test_eval_mode_is_bitwise_identity():
    feats, module, diff = _setup()
    module.eval()
    out = module(feats, diff)
    assert all(out[k] is feats[k] for k in feats)


def test_training_null_difference_round_trips():
    feats, module, diff = _setup()
    module.train()
    out = module(feats, torch.zeros_like(diff))
    for k in feats:
        assert (out[k] - feats[k]).abs().max() < 1e-5
    assert out[2] is feats[2]


def test_training_preserves_phase():
    feats, module, diff = _setup(3)
    module.train()
    out = module(feats, diff)
    for layer in (3, 4, 5):
        a, b = fft_decompose(feats[layer]), fft_decompose(out[layer])
        keep = (a.amplitude > 1e-6) & (b.amplitude > 1e-6)
        dphi = torch.remainder(a.phase - b.phase + math.pi, 2 * math.pi) - math.pi
        assert dphi[keep].abs().max() < 1e-4
        assert not torch.allclose(out[layer], feats[layer])


def test_original_strategy_adds_features():
    f, f_d = torch.randn(2, 3, 4, 4), torch.randn(2, 3, 4, 4)
    torch.testing.assert_close(style_layer(f, f_d, 2.0, 0.15, "original", use_tanh=False), f + 2 * f_d)
    with pytest.raises(ValueError):
        style_layer(f, f_d, 1.0, 0.15, "bogus")


def test_apply_tdst_functional_matches_module():
    feats, module, diff = _setup(4)
    module.train()
    ref = module(feats, diff)
    out = apply_tdst(feats, diff, module.adapter, module.config.control, training=True)
    for k in feats:
        assert torch.equal(ref[k], out[k])


def test_style_control_validation():
    with pytest.raises(ValueError):
        StyleControl(betas=(1.0, 2.0), styled_layers=(3, 4, 5))
    with pytest.raises(ValueError):
        StyleControl(betas=(1.0, -2.0, 4.0))
    with pytest.raises(ValueError):
        StyleControl(alpha=0.0)
    assert StyleControl().beta(5) == 4.0
    with pytest.raises(ValueError):
        TextDrivenStyleTransform(4, {3: 2}, TDSTConfig())
