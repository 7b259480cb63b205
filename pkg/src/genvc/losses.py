"""Training objectives: non-saturating conditional GAN terms, the I-frame
rate-distortion(-realism) loss, the t-scaled P-frame loss with its
normalization constant, the P discriminator loss, and the flow/TV
regularizer with a stop gradient on the sigma mask.

Distortion is MSE measured on the 0-255 intensity scale so the default
weights (beta=128, bpp-scale rate terms) keep their intended magnitudes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    beta: float = 128.0
    k_flow: float = 1.0
    k_tv: float = 10.0


def frame_weight_norm(t_max: int) -> float:
    """C_T = (1/T) * sum_{t=2..T} t, the P-frame loss normalizer."""
    if t_max < 2:
        raise ValueError("need at least one P-frame (T >= 2)")
    return sum(range(2, t_max + 1)) / t_max


def _clamped_log(p: torch.Tensor) -> torch.Tensor:
    return torch.log(p.clamp(PROB_EPS, 1.0 - PROB_EPS))


def mse_255(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    return ((255.0 * (x - x_hat)) ** 2).mean()


def gan_losses(d_fake: torch.Tensor, d_real: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Non-saturating generator term and the matching discriminator term.

    Inputs are probabilities (scalars or patch maps); maps are mean-reduced.
    """
    g_term = (-_clamped_log(d_fake)).mean()
    d_term = (-torch.log((1.0 - d_fake).clamp(PROB_EPS, 1.0))).mean() + (-_clamped_log(d_real)).mean()
    return g_term, d_term


def iframe_loss(
    x: torch.Tensor,
    x_hat: torch.Tensor,
    rate: torch.Tensor | float,
    d_fake: torch.Tensor | None,
    lambda_rate: float,
    weights: LossWeights = LossWeights(),
) -> torch.Tensor:
    """lambda_R * rate + MSE - beta * log D(fake).  beta=0 disables the GAN term."""
    loss = lambda_rate * _as_tensor(rate, x) + mse_255(x, x_hat)
    if weights.beta != 0.0 and d_fake is not None:
        loss = loss - weights.beta * _clamped_log(d_fake).mean()
    return loss


@dataclass
class PFrameTerms:
    """Per-frame ingredients of the unrolled P loss (frame index t >= 2)."""

    rate: torch.Tensor | float
    mse: torch.Tensor | float
    d_fake: torch.Tensor | None = None
    reg: torch.Tensor | float = 0.0


def pframe_loss(
    terms: Sequence[PFrameTerms],
    lambda_rate: float,
    weights: LossWeights = LossWeights(),
) -> torch.Tensor:
    """(1/C_T) * sum_t [lambda_R * rate_t + t*mse_t - t*beta*log D_t + reg_t].

    `terms[0]` is frame t=2; distortion and GAN terms are scaled by t so the
    tail of the unroll carries as much weight as the head.
    """
    t_max = len(terms) + 1
    norm = frame_weight_norm(t_max)
    total: torch.Tensor | float = 0.0
    for t, term in enumerate(terms, start=2):
        frame_loss = lambda_rate * term.rate + t * term.mse
        if weights.beta != 0.0 and term.d_fake is not None:
            frame_loss = frame_loss - t * weights.beta * _clamped_log(term.d_fake).mean()
        total = total + frame_loss + term.reg
    return total / norm


def dp_loss(
    d_fakes: Sequence[torch.Tensor],
    d_reals: Sequence[torch.Tensor],
    weights: LossWeights = LossWeights(),
) -> torch.Tensor:
    """t-weighted discriminator loss over the unroll, normalized by C_T."""
    if len(d_fakes) != len(d_reals):
        raise ValueError("need one real probability per fake probability")
    t_max = len(d_fakes) + 1
    norm = frame_weight_norm(t_max)
    total: torch.Tensor | float = 0.0
    for t, (fake, real) in enumerate(zip(d_fakes, d_reals), start=2):
        total = total + t * (
            (-torch.log((1.0 - fake).clamp(PROB_EPS, 1.0))).mean()
            + (-_clamped_log(real)).mean()
        )
    return total / norm


def total_variation(field: torch.Tensor) -> torch.Tensor:
    """Anisotropic L1 of forward differences, mean-reduced per direction."""
    dx = (field[..., :, 1:] - field[..., :, :-1]).abs().mean()
    dy = (field[..., 1:, :] - field[..., :-1, :]).abs().mean()
    return dx + dy


def reg_loss(
    flow: torch.Tensor | None,
    flow_hat: torch.Tensor | None,
    sigma: torch.Tensor,
    weights: LossWeights = LossWeights(),
) -> torch.Tensor:
    """Sigma-masked flow consistency plus TV smoothness of the sigma field.

    The mask carries a stop gradient: the flow term cannot be minimized by
    driving sigma to zero.  With no reference flow (unsupervised-flow
    ablation) only the TV term remains.
    """
    tv = weights.k_tv * total_variation(sigma)
    if flow is None or flow_hat is None or weights.k_flow == 0.0:
        return tv
    if flow.shape != flow_hat.shape:
        raise ValueError("flow and reconstruction dims must match")
    mask = sigma.detach()
    if mask.dim() == flow.dim() - 1:
        mask = mask.unsqueeze(-3)
    return weights.k_flow * (mask * (flow - flow_hat) ** 2).mean() + tv



def _as_tensor(v: torch.Tensor | float, like: torch.Tensor) -> torch.Tensor:
    if isinstance(v, torch.Tensor):
        return v
    return torch.as_tensor(v, dtype=like.dtype, device=like.device)
