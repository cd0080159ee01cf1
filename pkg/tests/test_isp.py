import pytest
import torch

from rawprotect.imaging import IspParams, RawImage, RgbImage, demosaic_bilinear, synthetic_raw_corpus
from rawprotect.isp import LearnableIsp, conventional_isp, mix_render, pretrain_learnable_isp
from rawprotect.metrics import psnr


def test_identity_params_reduce_to_demosaic():
    raw = torch.rand(1, 1, 16, 16)
    out = conventional_isp(raw, IspParams.identity())
    torch.testing.assert_close(out, demosaic_bilinear(raw).clamp(0, 1))


def test_white_balance_scales_sites():
    # flat grey raw: after WB each channel equals its gain (before CCM and gamma)
    params = IspParams((2.0, 1.0, 0.5), ((1, 0, 0), (0, 1, 0), (0, 0, 1)), "power", 1.0)
    out = conventional_isp(torch.full((1, 8, 8), 0.4), params)
    torch.testing.assert_close(out[:, 4, 4], torch.tensor([0.8, 0.4, 0.2]))


def test_typed_input_gives_typed_output():
    out = conventional_isp(RawImage(torch.rand(1, 8, 8)))
    assert isinstance(out, RgbImage)
    assert 0 <= float(out.data.min()) and float(out.data.max()) <= 1


def test_untrained_surrogate_is_bilinear_demosaic():
    raw = torch.rand(2, 1, 16, 16)
    torch.testing.assert_close(LearnableIsp()(raw), demosaic_bilinear(raw).clamp(0, 1))


def test_pretraining_approaches_the_conventional_render():
    raws = synthetic_raw_corpus(10, 64, seed=3)
    model, hist = pretrain_learnable_isp(raws[:8], steps=300, seed=0)
    assert hist[-1] < hist[0] / 2
    with torch.no_grad():
        held = torch.stack([r.data for r in raws[8:]])
        assert psnr(model(held), conventional_isp(held)) > 28


def test_mix_render_blend_and_gradients():
    raw = torch.rand(2, 1, 16, 16, requires_grad=True)
    sur = LearnableIsp()
    params = IspParams()
    conv = conventional_isp(raw.detach(), params)
    torch.testing.assert_close(mix_render(raw, params, sur, 1.0), conv)
    out = mix_render(raw, params, sur, torch.tensor([0.0, 0.5]))
    torch.testing.assert_close(out[0], sur(raw)[0])
    torch.testing.assert_close(out[1], 0.5 * conv[1] + 0.5 * sur(raw)[1])
    mix_render(raw, params, sur, 1.0).sum().backward()
    assert raw.grad is None or float(raw.grad.abs().sum()) == 0  # conventional branch carries no gradient


def test_mix_render_rejects_bad_omega():
    with pytest.raises(ValueError):
        mix_render(torch.rand(1, 1, 8, 8), IspParams(), LearnableIsp(), 1.5)


def test_pretraining_needs_data():
    with pytest.raises(ValueError):
        pretrain_learnable_isp([], steps=1)
