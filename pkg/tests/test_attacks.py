import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from rawprotect.attacks import (AttackConfig, HybridAttack, MODULES, apply_crop, apply_tamper,
                                attack_pipeline, color_adjust, copy_move_source, crop_window,
                                diff_jpeg, distort, draw_schedule, from_uint8, gaussian_blur,
                                generate_freeform_mask, jpeg_codec, make_source, median_blur,
                                naive_inpaint, quantize, random_crop, real_attack, real_bridge,
                                rescale, to_uint8)
from rawprotect.attacks.distortions import gaussian_kernel1d
from rawprotect.imaging import synthetic_rgb
from rawprotect.metrics import psnr


def natural(seed, size=64):
    return quantize(synthetic_rgb(size, np.random.default_rng(seed)).float())


# ---------------------------------------------------------------- masks

def test_zero_area_range_gives_empty_mask():
    m = generate_freeform_mask(64, 64, (0, 0), np.random.default_rng(0))
    assert m.shape == (1, 64, 64) and not m.any()


def test_mask_areas_over_1000_draws():
    rng = np.random.default_rng(0)
    areas = np.array([float(generate_freeform_mask(64, 64, (0, 0.3), rng).mean()) for _ in range(1000)])
    assert areas.max() <= 0.3
    assert 0.05 <= areas.mean() <= 0.30


def test_mask_is_binary_and_deterministic():
    a = generate_freeform_mask(96, 64, (0.1, 0.3), np.random.default_rng(7))
    b = generate_freeform_mask(96, 64, (0.1, 0.3), np.random.default_rng(7))
    assert torch.equal(a, b)
    assert set(torch.unique(a).tolist()) <= {0.0, 1.0}


def test_mask_rejects_bad_range():
    with pytest.raises(ValueError):
        generate_freeform_mask(64, 64, (0.4, 0.2))
    with pytest.raises(ValueError):
        generate_freeform_mask(64, 64, (0, 1.5))


# ---------------------------------------------------------------- tampering

def test_compositing_identities_bit_exact():
    g = torch.Generator().manual_seed(0)
    img, src = torch.rand(3, 32, 32, generator=g), torch.rand(3, 32, 32, generator=g)
    assert torch.equal(apply_tamper(img, torch.zeros(1, 32, 32), src), img)
    assert torch.equal(apply_tamper(img, torch.ones(1, 32, 32), src), src)
    m = (torch.rand(1, 32, 32, generator=g) > 0.5).float()
    out = apply_tamper(img, m, src)
    assert torch.equal(out * m, src * m)
    assert torch.equal(out * (1 - m), img * (1 - m))


def test_tamper_shape_mismatch():
    with pytest.raises(ValueError):
        apply_tamper(torch.rand(3, 8, 8), torch.zeros(1, 8, 8), torch.rand(3, 8, 16))


def test_inpaint_constant_and_unmasked_pixels():
    img = torch.full((3, 16, 16), 0.37)
    m = torch.zeros(1, 16, 16)
    m[:, 4:12, 3:9] = 1
    out = naive_inpaint(img, m)
    torch.testing.assert_close(out, img)
    noisy = torch.rand(3, 16, 16)
    out = naive_inpaint(noisy, m)
    assert torch.equal(out * (1 - m), noisy * (1 - m))


def test_inpaint_strip_matches_linear_interpolation():
    # harmonic fill of a full-height strip on a horizontal ramp is the ramp itself
    x = torch.linspace(0, 1, 16)
    img = x.expand(3, 16, 16).clone()
    m = torch.zeros(1, 16, 16)
    m[:, :, 5:11] = 1
    hole = img.clone()
    hole[:, :, 5:11] = 0.0
    out = naive_inpaint(hole, m)
    assert float((out - img).abs().max()) < 0.02


def test_inpaint_rejects_full_mask():
    with pytest.raises(ValueError):
        naive_inpaint(torch.rand(3, 8, 8), torch.ones(1, 8, 8))


def test_copy_move_is_circular_shift_of_at_least_16():
    img = torch.rand(3, 64, 64)
    src, params = copy_move_source(img, np.random.default_rng(3))
    dy, dx = params["shift"]
    assert dy >= 16 and dx >= 16
    assert torch.equal(src, torch.roll(img, (dy, dx), (-2, -1)))


def test_make_source_kinds():
    rng = np.random.default_rng(0)
    img, other, prot = torch.rand(3, 32, 32), torch.rand(3, 32, 32), torch.rand(3, 32, 32)
    m = generate_freeform_mask(32, 32, (0.1, 0.2), rng)
    assert make_source(img, m, "splice", rng, [other])[0] is other
    assert make_source(img, m, "coincident_splice", rng, [other], [prot])[0] is prot
    inp, _ = make_source(img, m, "inpaint", rng)
    torch.testing.assert_close(inp, naive_inpaint(img, m))
    with pytest.raises(ValueError):
        make_source(img, m, "splice", rng)
    with pytest.raises(ValueError):
        make_source(img, m, "blur", rng, [other])


# ---------------------------------------------------------------- JPEG

def test_jpeg_quality_100_is_close():
    # 128x128 is the training crop size; the loss at q=100 is 4:2:0 plus rounding
    for seed in range(8):
        x = natural(seed, 128)
        assert psnr(x, diff_jpeg(x, 100)) > 38


def test_jpeg_quality_100_tracks_codec_psnr():
    for seed in range(6):
        x = natural(seed)
        codec = from_uint8(jpeg_codec(to_uint8(x), 100), like=x)
        assert abs(psnr(x, diff_jpeg(x, 100)) - psnr(x, codec)) < 1.5


def test_jpeg_psnr_monotone_in_quality():
    x = natural(1)
    scores = [psnr(x, diff_jpeg(x, q)) for q in (30, 50, 70, 90)]
    assert scores == sorted(scores)


@pytest.mark.parametrize("q", [50, 90])
def test_jpeg_agrees_with_real_codec(q):
    diffs = []
    for seed in range(8):
        x = natural(100 + seed)
        ref = from_uint8(jpeg_codec(to_uint8(x), q))
        diffs.append(float((diff_jpeg(x, q) - ref).abs().mean()))
    assert np.mean(diffs) < 0.02


def test_jpeg_rejects_bad_input():
    with pytest.raises(ValueError):
        diff_jpeg(torch.rand(3, 24, 32), 80)
    with pytest.raises(ValueError):
        diff_jpeg(torch.rand(3, 32, 32), 0)


def test_jpeg_gradient_is_finite_difference_exact_with_smooth_rounding():
    # with the identity in place of rounding the pipeline is smooth away from clamp edges
    x = (0.25 + 0.5 * torch.rand(1, 3, 16, 16, dtype=torch.float64)).requires_grad_()
    assert torch.autograd.gradcheck(lambda t: diff_jpeg(t, 75, round_fn=lambda v: v), (x,))


# ---------------------------------------------------------------- distortions

def test_identity_parameters():
    x = torch.rand(3, 32, 32)
    assert torch.equal(rescale(x, 1.0), x)
    assert torch.equal(distort(x, "awgn", {"sigma": 0.0, "seed": 0}), x)


def test_median_removes_salt_pixel():
    x = torch.full((3, 9, 9), 0.2)
    x[:, 4, 4] = 1.0
    out = median_blur(x, 3)
    torch.testing.assert_close(out, torch.full_like(x, 0.2))


def test_median_matches_hand_computation():
    x = torch.arange(25, dtype=torch.float32).view(1, 5, 5).expand(3, 5, 5) / 25
    out = median_blur(x, 3)
    # interior 3x3 window centred at (2, 2) holds 6,7,8,11,12,13,16,17,18
    assert float(out[0, 2, 2]) == pytest.approx(12 / 25)


def test_gaussian_kernel_and_blur_of_constant():
    k = gaussian_kernel1d(5, 1.0)
    ref = np.exp(-np.arange(-2, 3) ** 2 / 2.0)
    np.testing.assert_allclose(k, ref / ref.sum())
    x = torch.full((3, 16, 16), 0.6)
    torch.testing.assert_close(gaussian_blur(x, 5, 1.3), x)


@settings(max_examples=20, deadline=None)
@given(kind=st.sampled_from(["rescale", "median_blur", "gaussian_blur", "awgn", "jpeg"]),
       seed=st.integers(0, 1000))
def test_distortions_preserve_shape_and_range(kind, seed):
    from rawprotect.attacks import draw_distortion
    rng = np.random.default_rng(seed)
    x = torch.rand(3, 32, 48, generator=torch.Generator().manual_seed(seed))
    _, params = draw_distortion(AttackConfig(), rng, kind)
    out = distort(x, kind, params)
    assert out.shape == x.shape
    assert float(out.min()) >= 0 and float(out.max()) <= 1


def test_unknown_distortion():
    with pytest.raises(ValueError):
        distort(torch.rand(3, 16, 16), "sharpen", {})


# ---------------------------------------------------------------- colour

def test_colour_identities():
    x = torch.rand(3, 16, 16)
    assert torch.equal(color_adjust(x, "brightness", 1.0), x)
    assert torch.equal(color_adjust(x, "contrast", 1.0), x)
    assert torch.equal(color_adjust(x, "hue", 0.0), x)


def test_contrast_and_saturation_blends():
    x = torch.rand(3, 16, 16)
    luma = 0.299 * x[0] + 0.587 * x[1] + 0.114 * x[2]
    mean = luma.mean()
    torch.testing.assert_close(color_adjust(x, "contrast", 0.8), (mean + 0.8 * (x - mean)).clamp(0, 1))
    torch.testing.assert_close(color_adjust(x, "saturation", 0.8), (luma + 0.8 * (x - luma)).clamp(0, 1))


def test_brightness_scales():
    x = torch.rand(3, 16, 16) * 0.5
    torch.testing.assert_close(color_adjust(x, "brightness", 1.4), x * 1.4)


@pytest.mark.parametrize("factor", [0.7, 1.0, 1.3, 1.5])
def test_gray_image_is_saturation_fixed_point(factor):
    x = torch.rand(1, 16, 16).expand(3, 16, 16).contiguous()
    torch.testing.assert_close(color_adjust(x, "saturation", factor), x, atol=1e-6, rtol=0)


def test_colour_factor_range():
    with pytest.raises(ValueError):
        color_adjust(torch.rand(3, 8, 8), "contrast", 2.0)
    with pytest.raises(ValueError):
        color_adjust(torch.rand(3, 8, 8), "gamma", 1.0)


# ---------------------------------------------------------------- crop

def test_crop_survival_one_is_identity():
    x, m = torch.rand(3, 32, 32), (torch.rand(1, 32, 32) > 0.5).float()
    out, mo = random_crop(x, m, 1.0, np.random.default_rng(0))
    assert torch.equal(out, x) and torch.equal(mo, m)


def test_crop_area_ratio_for_mask_inside_window():
    h = w = 128
    survival = 0.64
    window = crop_window(h, w, survival, np.random.default_rng(0))
    y0, x0, ch, cw = window
    assert ch * cw / (h * w) == pytest.approx(survival, abs=0.02)
    m = torch.zeros(1, h, w)
    m[:, y0 + 10:y0 + 30, x0 + 12:x0 + 40] = 1
    _, mo = apply_crop(torch.rand(3, h, w), m, window)
    expected = float(m.mean()) / survival
    assert abs(float(mo.mean()) - expected) <= 0.02 * expected


def test_crop_commutes_with_compositing():
    rng = np.random.default_rng(1)
    img, src = torch.rand(3, 64, 64), torch.rand(3, 64, 64)
    m = generate_freeform_mask(64, 64, (0.1, 0.3), rng)
    window = crop_window(64, 64, 0.5, rng)
    before, m_after = apply_crop(apply_tamper(img, m, src), m, window)
    img_c, _ = apply_crop(img, None, window)
    src_c, _ = apply_crop(src, None, window)
    after = apply_tamper(img_c, m_after, src_c)
    # where the source-grid 3x3 neighbourhood of the mask is pure, the orders agree
    dil = torch.nn.functional.max_pool2d(m[None], 3, 1, 1)[0]
    ero = -torch.nn.functional.max_pool2d(-m[None], 3, 1, 1)[0]
    _, pure = apply_crop(img, (dil == ero).float(), window)
    assert float(pure.mean()) > 0.5
    assert float(((before - after).abs() * pure).max()) < 1e-6


def test_crop_survival_range():
    with pytest.raises(ValueError):
        crop_window(64, 64, 0.3, np.random.default_rng(0))


# ---------------------------------------------------------------- bridge

def test_quantize_bridge_value():
    x = torch.rand(3, 16, 16, dtype=torch.float64)
    assert torch.equal(real_bridge(x, "quantize"), torch.round(x * 255) / 255)


@pytest.mark.parametrize("kind,params", [("quantize", None), ("jpeg", {"quality": 60}),
                                         ("median_blur", {"k": 3})])
def test_bridge_has_identity_jacobian(kind, params):
    x = torch.rand(3, 16, 16, requires_grad=True)
    real_bridge(x, kind, params).sum().backward()
    assert torch.equal(x.grad, torch.ones_like(x))


def test_bridge_jpeg_equals_codec_round_trip():
    x = torch.rand(3, 32, 32)
    ref = from_uint8(jpeg_codec(to_uint8(quantize(x)), 80), like=x)
    assert torch.equal(real_bridge(x, "jpeg", {"quality": 80}), ref)
    assert torch.equal(real_attack(x, "jpeg", {"quality": 80}), ref)


def test_bridge_rejects_unknown_kind():
    with pytest.raises(ValueError):
        real_bridge(torch.rand(3, 8, 8), "sharpen")


@pytest.mark.parametrize("kind,params,tol", [
    ("rescale", {"rate": 0.7}, 0.01), ("median_blur", {"k": 3}, 0.005),
    ("gaussian_blur", {"k": 5, "sigma": 1.2}, 0.005), ("awgn", {"sigma": 2 / 255, "seed": 3}, 0.005),
    ("jpeg", {"quality": 70}, 0.01)])
def test_simulated_distortions_track_real_ones(kind, params, tol):
    x = natural(5)
    assert float((distort(x, kind, params) - real_attack(x, kind, params)).abs().mean()) < tol


# ---------------------------------------------------------------- scheduling

def test_forced_off_is_identity():
    x = natural(0, 32)
    s = attack_pipeline(x, [x], AttackConfig(), np.random.default_rng(0),
                        force={m: False for m in MODULES})
    assert torch.equal(s.image, x)
    assert not s.gt_mask.any() and not s.tampered


def test_tamper_only_satisfies_compositing_identity():
    rng = np.random.default_rng(4)
    x, other = natural(1, 32), natural(2, 32)
    force = {"tamper": True, "color": False, "distortion": False, "crop": False}
    for kind in ("splice", "coincident_splice", "copy_move", "inpaint"):
        s = attack_pipeline(x, [other], AttackConfig(), rng, tamper_kind=kind, force=force)
        expected = quantize(apply_tamper(x, s.tamper_mask, s.source))
        assert torch.equal(s.image, expected)
        assert torch.equal(s.gt_mask, s.tamper_mask)
        assert float(s.gt_mask.mean()) <= 0.3


def test_activation_rates_over_1000_draws():
    rng = np.random.default_rng(0)
    counts = dict.fromkeys(MODULES, 0)
    for _ in range(1000):
        for m in draw_schedule(AttackConfig(), rng):
            counts[m] += 1
    for m, c in counts.items():
        assert 0.82 <= c / 1000 <= 0.88, (m, c)


def test_schedule_orders_vary_and_crop_follows_tamper():
    rng = np.random.default_rng(0)
    orders = set()
    for _ in range(300):
        order = draw_schedule(AttackConfig(), rng)
        orders.add(tuple(order))
        if "tamper" in order and "crop" in order:
            assert order[-1] == "crop"
    assert len(orders) > 10


def test_deterministic_replay_is_byte_identical():
    x, other = natural(3, 32), natural(4, 32)

    def run():
        attack = HybridAttack()
        rng = np.random.default_rng(11)
        return b"".join(attack(x, [other], rng).to_bytes() for _ in range(8))

    assert run() == run()


def test_round_robin_tamper_kinds():
    attack = HybridAttack()
    assert [attack.next_kind() for _ in range(8)] == \
        ["splice", "coincident_splice", "copy_move", "inpaint"] * 2


def test_attacked_images_stay_in_range_and_gradients_flow():
    rng = np.random.default_rng(2)
    x = natural(6, 32).requires_grad_()
    other = natural(7, 32)
    for _ in range(10):
        s = attack_pipeline(x, [other], AttackConfig(), rng)
        assert float(s.image.detach().min()) >= 0 and float(s.image.detach().max()) <= 1
        if s.image.requires_grad:
            g, = torch.autograd.grad(s.image.sum(), x)
            assert torch.isfinite(g).all()


def test_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(p_activate=1.5)
    with pytest.raises(ValueError):
        AttackConfig(median_kernels=(4,))
    with pytest.raises(ValueError):
        AttackConfig(crop_survival_range=(0.2, 1.0))
