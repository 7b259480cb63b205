import math

import pytest
import torch

from genvc.losses import (
    LossWeights,
    PFrameTerms,
    dp_loss,
    frame_weight_norm,
    gan_losses,
    iframe_loss,
    mse_255,
    pframe_loss,
    reg_loss,
    total_variation,
)


# ---------------------------------------------------------------------------
# gan_losses
# ---------------------------------------------------------------------------

def test_generator_term_at_half():
    g, _ = gan_losses(torch.tensor(0.5), torch.tensor(0.5))
    assert g.item() == pytest.approx(math.log(2), abs=1e-6)


def test_discriminator_term_at_half():
    _, d = gan_losses(torch.tensor(0.5), torch.tensor(0.5))
    assert d.item() == pytest.approx(2 * math.log(2), abs=1e-6)


def test_perfect_discriminator_term_vanishes():
    _, d = gan_losses(torch.tensor(0.0), torch.tensor(1.0))
    assert d.item() == pytest.approx(0.0, abs=1e-5)


def test_saturated_probabilities_stay_finite():
    g, d = gan_losses(torch.tensor(0.0), torch.tensor(0.0))
    assert torch.isfinite(g) and torch.isfinite(d)


def test_patch_maps_are_mean_reduced():
    fake = torch.full((2, 1, 4, 4), 0.5)
    g, _ = gan_losses(fake, torch.ones_like(fake))
    assert g.item() == pytest.approx(math.log(2), abs=1e-6)


# ---------------------------------------------------------------------------
# iframe_loss
# ---------------------------------------------------------------------------

def test_iframe_hand_value():
    # lambda=2, rate=3, MSE=1, beta=128, D_fake=0.5 -> 6 + 1 + 128*ln2
    x = torch.zeros(1, 3, 4, 4)
    x_hat = torch.full_like(x, 1.0 / 255.0)  # MSE on 255 scale = 1
    loss = iframe_loss(x, x_hat, rate=3.0, d_fake=torch.tensor(0.5),
                       lambda_rate=2.0, weights=LossWeights(beta=128.0))
    assert loss.item() == pytest.approx(2 * 3 + 1 + 128 * math.log(2), rel=1e-5)


def test_iframe_beta_zero_is_rate_distortion_only():
    x = torch.rand(1, 3, 4, 4)
    x_hat = torch.rand(1, 3, 4, 4)
    loss = iframe_loss(x, x_hat, rate=0.7, d_fake=torch.tensor(0.01),
                       lambda_rate=2.0, weights=LossWeights(beta=0.0))
    expected = 2.0 * 0.7 + mse_255(x, x_hat).item()
    assert loss.item() == pytest.approx(expected, rel=1e-6)


def test_iframe_perfect_reconstruction_zero_loss():
    x = torch.rand(1, 3, 4, 4)
    loss = iframe_loss(x, x, rate=0.0, d_fake=None, lambda_rate=5.0,
                       weights=LossWeights(beta=0.0))
    assert loss.item() == 0.0


def test_beta_zero_blocks_gan_gradient():
    d_fake = torch.tensor(0.3, requires_grad=True)
    x = torch.rand(1, 3, 4, 4)
    x_hat = (x * 0.9).detach().requires_grad_(True)
    loss = iframe_loss(x, x_hat, rate=0.1, d_fake=d_fake, lambda_rate=1.0,
                       weights=LossWeights(beta=0.0))
    grads = torch.autograd.grad(loss, [x_hat, d_fake], allow_unused=True)
    assert grads[0] is not None  # distortion path still live
    assert grads[1] is None      # GAN path fully disconnected


# ---------------------------------------------------------------------------
# pframe_loss
# ---------------------------------------------------------------------------

def test_frame_weight_norm_values():
    assert frame_weight_norm(2) == pytest.approx(1.0)
    assert frame_weight_norm(3) == pytest.approx(5.0 / 3.0)
    assert frame_weight_norm(6) == pytest.approx(20.0 / 6.0)
    with pytest.raises(ValueError):
        frame_weight_norm(1)


def test_uniform_mse_t3_collapses_to_3m():
    m = 0.37
    terms = [PFrameTerms(rate=0.0, mse=torch.tensor(m)) for _ in range(2)]
    loss = pframe_loss(terms, lambda_rate=0.0, weights=LossWeights(beta=0.0))
    assert loss.item() == pytest.approx(3 * m, rel=1e-6)


def test_single_pframe_weight_two():
    terms = [PFrameTerms(rate=0.5, mse=torch.tensor(1.0))]
    loss = pframe_loss(terms, lambda_rate=2.0, weights=LossWeights(beta=0.0))
    # C_2 = 1: lambda*rate + 2*mse
    assert loss.item() == pytest.approx(2.0 * 0.5 + 2.0 * 1.0, rel=1e-6)


def test_t6_weight_profile():
    # doubling only frame t's MSE moves the loss by exactly t * delta / C_T
    base = [PFrameTerms(rate=0.0, mse=torch.tensor(1.0)) for _ in range(5)]
    loss0 = pframe_loss(base, 0.0, LossWeights(beta=0.0)).item()
    for idx, t in enumerate(range(2, 7)):
        bumped = [PFrameTerms(rate=0.0, mse=torch.tensor(2.0 if i == idx else 1.0))
                  for i in range(5)]
        delta = pframe_loss(bumped, 0.0, LossWeights(beta=0.0)).item() - loss0
        assert delta == pytest.approx(t * 1.0 / frame_weight_norm(6), rel=1e-6)


def test_rate_term_not_t_scaled():
    terms = [PFrameTerms(rate=torch.tensor(1.0), mse=0.0) for _ in range(2)]
    loss = pframe_loss(terms, lambda_rate=3.0, weights=LossWeights(beta=0.0))
    assert loss.item() == pytest.approx(2 * 3.0 / frame_weight_norm(3), rel=1e-6)


def test_empty_unroll_rejected():
    with pytest.raises(ValueError):
        pframe_loss([], 1.0)


# ---------------------------------------------------------------------------
# dp_loss
# ---------------------------------------------------------------------------

def test_dp_loss_hand_value_t2():
    loss = dp_loss([torch.tensor(0.5)], [torch.tensor(0.5)])
    assert loss.item() == pytest.approx(4 * math.log(2), rel=1e-6)


def test_dp_loss_perfect_discriminator_zero():
    loss = dp_loss([torch.tensor(0.0)] * 3, [torch.tensor(1.0)] * 3)
    assert loss.item() == pytest.approx(0.0, abs=1e-4)


def test_dp_loss_shares_t_weight_profile():
    # same per-frame probabilities at T=3: weights (2, 3) / C_3
    p = torch.tensor(0.5)
    loss = dp_loss([p, p], [p, p])
    per_frame = 2 * math.log(2)
    assert loss.item() == pytest.approx((2 + 3) * per_frame / frame_weight_norm(3), rel=1e-6)


# ---------------------------------------------------------------------------
# reg_loss
# ---------------------------------------------------------------------------

def test_zero_sigma_zero_loss():
    flow = torch.randn(2, 8, 8)
    loss = reg_loss(flow, torch.randn(2, 8, 8), torch.zeros(8, 8))
    assert loss.item() == 0.0


def test_constant_sigma_perfect_flow_zero_loss():
    flow = torch.randn(2, 8, 8)
    loss = reg_loss(flow, flow.clone(), torch.full((8, 8), 0.7))
    assert loss.item() == pytest.approx(0.0, abs=1e-7)


def test_total_variation_of_constant_is_zero():
    assert total_variation(torch.full((5, 5), 3.0)).item() == 0.0


def test_sigma_gradient_is_tv_gradient_alone():
    # stop gradient on the mask: d(reg)/d(sigma) must equal k_tv * d(TV)/d(sigma)
    torch.manual_seed(0)
    weights = LossWeights(k_flow=1.0, k_tv=10.0)
    flow = torch.randn(2, 8, 8, dtype=torch.float64)
    flow_hat = torch.randn(2, 8, 8, dtype=torch.float64)
    sigma = (torch.rand(8, 8, dtype=torch.float64) + 0.5).requires_grad_(True)

    loss = reg_loss(flow, flow_hat, sigma, weights)
    (analytic,) = torch.autograd.grad(loss, sigma)

    h = 1e-6
    fd = torch.zeros_like(sigma)
    with torch.no_grad():
        for i in range(8):
            for j in range(8):
                for sign in (1.0, -1.0):
                    bumped = sigma.detach().clone()
                    bumped[i, j] += sign * h
                    fd[i, j] += sign * (weights.k_tv * total_variation(bumped)).item()
    fd /= 2 * h
    rel = (analytic - fd).abs().max() / fd.abs().max()
    assert rel <= 1e-4


def test_flow_value_still_sees_sigma_mask():
    # the mask shapes the value (not the gradient): bigger sigma, bigger loss
    flow = torch.ones(2, 4, 4)
    flow_hat = torch.zeros(2, 4, 4)
    lo = reg_loss(flow, flow_hat, torch.full((4, 4), 0.1), LossWeights(k_tv=0.0))
    hi = reg_loss(flow, flow_hat, torch.full((4, 4), 2.0), LossWeights(k_tv=0.0))
    assert hi.item() > lo.item()


def test_missing_reference_flow_leaves_tv_only():
    sigma = torch.rand(6, 6)
    assert reg_loss(None, None, sigma).item() == pytest.approx(
        (10.0 * total_variation(sigma)).item(), rel=1e-6)


def test_mismatched_flow_shapes_rejected():
    with pytest.raises(ValueError):
        reg_loss(torch.zeros(2, 4, 4), torch.zeros(2, 5, 4), torch.rand(4, 4))
