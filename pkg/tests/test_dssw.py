import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from genvc.dssw import (
    KERNEL_BICUBIC,
    KERNEL_BILINEAR,
    ScaleSpaceParams,
    adaptive_blur,
    build_volume,
    dssw,
    scale_coefficients,
    spectral_retention,
    ssw_reference,
    warp,
)

PARAMS = ScaleSpaceParams()


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------

def direct_gaussian_kernel2d(std: float) -> np.ndarray:
    """Truncated normalized 2-D Gaussian evaluated directly (float64)."""
    radius = math.ceil(3.0 * std)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k1 = np.exp(-0.5 * (xs / std) ** 2)
    k1 /= k1.sum()
    return np.outer(k1, k1)


def scalar_ssw_oracle(frame: np.ndarray, flow: np.ndarray, sigma: np.ndarray,
                      scales: tuple[float, ...]) -> np.ndarray:
    """Non-vectorized triple-loop trilinear lookup into the blurred volume."""
    levels = [frame]
    for s in scales[1:]:
        k = direct_gaussian_kernel2d(s)
        r = (k.shape[0] - 1) // 2
        c, h, w = frame.shape
        blurred = np.zeros_like(frame)
        padded = np.pad(frame, ((0, 0), (r, r), (r, r)), mode="edge")
        for ch in range(c):
            for y in range(h):
                for x in range(w):
                    blurred[ch, y, x] = (padded[ch, y : y + k.shape[0], x : x + k.shape[1]] * k).sum()
        levels.append(blurred)

    c, h, w = frame.shape
    out = np.zeros_like(frame)
    smax = scales[-1]
    for y in range(h):
        for x in range(w):
            xs = x + flow[0, y, x]
            ys = y + flow[1, y, x]
            sg = min(max(sigma[y, x], 0.0), smax)
            li = 0
            while li < len(scales) - 2 and sg >= scales[li + 1]:
                li += 1
            alpha = (sg - scales[li]) / (scales[li + 1] - scales[li])
            x0, y0 = math.floor(xs), math.floor(ys)
            fx, fy = xs - x0, ys - y0

            def bil(level: int, ch: int) -> float:
                def px(yy: int, xx: int) -> float:
                    return levels[level][ch, min(max(yy, 0), h - 1), min(max(xx, 0), w - 1)]

                top = (1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)
                bot = (1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1)
                return (1 - fy) * top + fy * bot

            for ch in range(c):
                out[ch, y, x] = (1 - alpha) * bil(li, ch) + alpha * bil(li + 1, ch)
    return out


def shift_kernel_taps(kernel: str, shift: float) -> np.ndarray:
    """1-D resampling taps for a sub-pixel shift (analytic, for the FFT oracle)."""
    frac = shift - math.floor(shift)
    if kernel == KERNEL_BILINEAR:
        return np.array([1.0 - frac, frac])
    a = -0.5
    taps = []
    for offset in (-1, 0, 1, 2):
        t = abs(offset - frac)
        if t < 1:
            taps.append((a + 2) * t**3 - (a + 3) * t**2 + 1)
        elif t < 2:
            taps.append(a * (t**3 - 5 * t**2 + 8 * t - 4))
        else:
            taps.append(0.0)
    return np.array(taps)


def oracle_retention(kernel: str, shift: float, repeats: int, width: int) -> float:
    """Expected top-quartile energy ratio from the kernel frequency response."""
    taps = shift_kernel_taps(kernel, shift)
    n_bins = width // 2 + 1
    lo = math.ceil(0.75 * (n_bins - 1))
    omegas = 2 * math.pi * np.arange(lo, n_bins) / width
    mags = np.abs([np.sum(taps * np.exp(-1j * om * np.arange(len(taps)))) for om in omegas])
    return float(np.mean(mags ** (2 * repeats)))


# ---------------------------------------------------------------------------
# build_volume
# ---------------------------------------------------------------------------

def test_volume_constant_frame_preserved():
    frame = torch.full((3, 32, 32), 0.5)
    vol = build_volume(frame, PARAMS)
    assert torch.allclose(vol, torch.full_like(vol, 0.5), atol=1e-6)


def test_volume_level0_bitwise_identity():
    frame = torch.rand(3, 20, 24)
    vol = build_volume(frame, PARAMS)
    assert torch.equal(vol[0], frame)


def test_volume_impulse_matches_direct_kernel():
    frame = torch.zeros(1, 65, 65, dtype=torch.float64)
    frame[0, 32, 32] = 1.0
    vol = build_volume(frame, PARAMS)
    for lev, s in enumerate(PARAMS.scales):
        if s == 0.0:
            continue
        k = direct_gaussian_kernel2d(s)
        r = (k.shape[0] - 1) // 2
        expected = np.zeros((65, 65))
        ys, xs = np.mgrid[-r : r + 1, -r : r + 1]
        yy, xx = 32 + ys, 32 + xs
        inside = (yy >= 0) & (yy < 65) & (xx >= 0) & (xx < 65)
        # edge replication never re-collects the centered impulse for these radii
        expected[yy[inside], xx[inside]] = k[inside]
        assert np.abs(vol[lev, 0].numpy() - expected).max() <= 1e-6


def test_volume_rejects_bad_inputs():
    with pytest.raises(ValueError):
        build_volume(torch.tensor([[[float("nan")]]]))
    with pytest.raises(ValueError):
        ScaleSpaceParams((0.0, 2.0, 1.0))
    with pytest.raises(ValueError):
        ScaleSpaceParams((1.0, 2.0))


def test_params_from_sigma0_default_schedule():
    p = ScaleSpaceParams.from_sigma0(1.5, 6)
    assert p.scales == (0.0, 1.5, 3.0, 6.0, 12.0, 24.0)
    assert p.sigma_max == 24.0


# ---------------------------------------------------------------------------
# warp
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("kernel", [KERNEL_BILINEAR, KERNEL_BICUBIC])
def test_warp_zero_flow_identity(kernel):
    frame = torch.rand(3, 24, 24)
    out = warp(frame, torch.zeros(2, 24, 24), kernel)
    assert torch.allclose(out, frame, atol=1e-6)


@pytest.mark.parametrize("kernel", [KERNEL_BILINEAR, KERNEL_BICUBIC])
def test_warp_integer_flow_shifts_columns(kernel):
    frame = torch.rand(1, 8, 8)
    flow = torch.zeros(2, 8, 8)
    flow[0] = 1.0
    out = warp(frame, flow, kernel)
    assert torch.allclose(out[:, :, :-1], frame[:, :, 1:], atol=1e-6)


def test_warp_constant_fixed_point():
    frame = torch.full((1, 16, 16), 0.3)
    flow = torch.randn(2, 16, 16) * 3
    for kernel in (KERNEL_BILINEAR, KERNEL_BICUBIC):
        out = warp(frame, flow, kernel)
        assert torch.allclose(out, frame, atol=1e-6)


def test_warp_bilinear_bounded_by_neighborhood():
    torch.manual_seed(0)
    frame = torch.rand(1, 16, 16)
    flow = torch.randn(2, 16, 16) * 2
    out = warp(frame, flow, KERNEL_BILINEAR)
    assert out.max() <= frame.max() + 1e-6
    assert out.min() >= frame.min() - 1e-6


def test_warp_dim_mismatch_raises():
    with pytest.raises(ValueError):
        warp(torch.rand(3, 8, 8), torch.zeros(2, 9, 8))
    with pytest.raises(ValueError):
        warp(torch.rand(3, 8, 8), torch.zeros(3, 8, 8))
    with pytest.raises(ValueError):
        warp(torch.rand(3, 8, 8), torch.zeros(2, 8, 8), kernel="lanczos")


def test_repeated_halfpixel_shift_spectral_retention():
    # 20 half-pixel shifts on white noise: the bicubic kernel must keep
    # strictly more top-quartile energy, and both measured retentions must
    # match the analytic frequency-response oracle.
    torch.manual_seed(7)
    size, repeats = 512, 20
    frame = torch.rand(1, size, size, dtype=torch.float64)
    measured = {
        kernel: spectral_retention(frame, kernel, repeats=repeats, shift=0.5)[-1]
        for kernel in (KERNEL_BILINEAR, KERNEL_BICUBIC)
    }
    assert measured[KERNEL_BICUBIC] > measured[KERNEL_BILINEAR]
    for kernel in (KERNEL_BILINEAR, KERNEL_BICUBIC):
        expected = oracle_retention(kernel, 0.5, repeats, size)
        assert measured[kernel] == pytest.approx(expected, rel=0.05)


# ---------------------------------------------------------------------------
# scale_coefficients
# ---------------------------------------------------------------------------

def test_coeffs_zero_sigma_selects_level0():
    c = scale_coefficients(torch.zeros(4, 4), PARAMS)
    assert torch.allclose(c[0], torch.ones(4, 4))
    assert torch.allclose(c[1:], torch.zeros_like(c[1:]))


def test_coeffs_midpoint_splits_half_half():
    c = scale_coefficients(torch.full((2, 2), 2.25), PARAMS)
    assert torch.allclose(c[1], torch.full((2, 2), 0.5))
    assert torch.allclose(c[2], torch.full((2, 2), 0.5))


def test_coeffs_above_max_clamps_to_last_level():
    c = scale_coefficients(torch.full((2, 2), 100.0), PARAMS)
    assert torch.allclose(c[-1], torch.ones(2, 2))
    assert torch.allclose(c[:-1], torch.zeros_like(c[:-1]))


def test_coeffs_exact_scale_selects_single_level():
    c = scale_coefficients(torch.full((2, 2), 6.0), PARAMS)
    assert torch.allclose(c[3], torch.ones(2, 2))


def test_coeffs_negative_sigma_raises():
    with pytest.raises(ValueError):
        scale_coefficients(torch.full((2, 2), -0.1), PARAMS)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=0.0, max_value=40.0), min_size=4, max_size=4))
def test_coeffs_partition_of_unity(vals):
    sigma = torch.tensor(vals, dtype=torch.float64).reshape(2, 2)
    c = scale_coefficients(sigma, PARAMS)
    assert (c >= 0).all()
    assert torch.allclose(c.sum(dim=0), torch.ones(2, 2, dtype=torch.float64), atol=1e-12)
    # at most two adjacent levels active per pixel
    active = (c > 0).to(torch.int64)
    assert (active.sum(dim=0) <= 2).all()
    idx = torch.arange(PARAMS.levels).view(-1, 1, 1)
    span = (active * idx).max(dim=0).values - (
        (active * idx + (1 - active) * PARAMS.levels).min(dim=0).values
    )
    assert (span <= 1).all()


# ---------------------------------------------------------------------------
# adaptive_blur / dssw / ssw_reference
# ---------------------------------------------------------------------------

def test_adaptive_blur_zero_sigma_identity():
    frame = torch.rand(3, 16, 16)
    out = adaptive_blur(frame, torch.zeros(16, 16), PARAMS)
    assert torch.allclose(out, frame, atol=1e-7)


def test_adaptive_blur_exact_level():
    frame = torch.rand(1, 32, 32)
    vol = build_volume(frame, PARAMS)
    out = adaptive_blur(frame, torch.full((32, 32), PARAMS.scales[2]), PARAMS)
    assert torch.allclose(out, vol[2], atol=1e-7)


def test_adaptive_blur_matches_joint_oracle_at_zero_flow():
    torch.manual_seed(3)
    for _ in range(5):
        frame = torch.rand(3, 64, 64)
        sigma = torch.rand(64, 64) * PARAMS.sigma_max
        ab = adaptive_blur(frame, sigma, PARAMS)
        joint = ssw_reference(frame, torch.zeros(2, 64, 64), sigma, PARAMS)
        assert (ab - joint).abs().max() <= 1e-5


def test_adaptive_blur_within_volume_envelope():
    torch.manual_seed(4)
    frame = torch.rand(1, 24, 24)
    sigma = torch.rand(24, 24) * 30
    vol = build_volume(frame, PARAMS)
    out = adaptive_blur(frame, sigma, PARAMS)
    assert (out <= vol.max(dim=0).values + 1e-6).all()
    assert (out >= vol.min(dim=0).values - 1e-6).all()


def test_dssw_zero_flow_zero_sigma_identity():
    frame = torch.rand(3, 16, 16)
    out = dssw(frame, torch.zeros(2, 16, 16), torch.zeros(16, 16), KERNEL_BICUBIC, PARAMS)
    assert torch.allclose(out, frame, atol=1e-6)


def test_dssw_zero_sigma_equals_warp():
    torch.manual_seed(5)
    frame = torch.rand(3, 16, 16)
    flow = torch.randn(2, 16, 16)
    out = dssw(frame, flow, torch.zeros(16, 16), KERNEL_BILINEAR, PARAMS)
    assert torch.equal(out, warp(frame, flow, KERNEL_BILINEAR))


def test_dssw_constant_flow_matches_joint_oracle_interior():
    # warping and blurring commute for constant flow; compare away from the
    # borders where edge replication differs between the two orders
    torch.manual_seed(6)
    sigma_cap = 6.0
    for case in range(5):
        frame = torch.rand(1, 64, 64)
        shift = (case % 3) - 1, (case % 2) * 2 - 1
        flow = torch.zeros(2, 64, 64)
        flow[0], flow[1] = float(shift[0]), float(shift[1])
        sigma = torch.rand(64, 64) * sigma_cap
        ours = dssw(frame, flow, sigma, KERNEL_BILINEAR, PARAMS)
        joint = ssw_reference(frame, flow, sigma, PARAMS)
        m = math.ceil(3 * sigma_cap) + 2 + 2
        diff = (ours - joint)[:, m:-m, m:-m].abs().max()
        assert diff <= 1e-5


def test_ssw_reference_zero_flow_zero_sigma_identity():
    frame = torch.rand(3, 12, 12)
    out = ssw_reference(frame, torch.zeros(2, 12, 12), torch.zeros(12, 12), PARAMS)
    assert torch.allclose(out, frame, atol=1e-7)


def test_ssw_reference_matches_scalar_triple_loop():
    rng = np.random.default_rng(11)
    frame = rng.random((1, 16, 16))
    flow = rng.normal(0, 1.5, (2, 16, 16))
    sigma = rng.random((16, 16)) * PARAMS.sigma_max
    ours = ssw_reference(
        torch.from_numpy(frame), torch.from_numpy(flow), torch.from_numpy(sigma), PARAMS
    ).numpy()
    expected = scalar_ssw_oracle(frame, flow, sigma, PARAMS.scales)
    assert np.abs(ours - expected).max() <= 1e-12


def test_batched_and_unbatched_agree():
    torch.manual_seed(8)
    frame = torch.rand(2, 3, 16, 16)
    flow = torch.randn(2, 2, 16, 16)
    sigma = torch.rand(2, 16, 16) * 4
    out = dssw(frame, flow, sigma, KERNEL_BICUBIC, PARAMS)
    for i in range(2):
        single = dssw(frame[i], flow[i], sigma[i], KERNEL_BICUBIC, PARAMS)
        assert torch.allclose(out[i], single, atol=1e-6)
