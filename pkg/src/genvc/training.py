"""Two-stage training.

Stage 1 trains the I-frame branch (encoder, generator, hyperprior, and its
discriminator) on randomly drawn frames.  Stage 2 freezes the I-branch,
seeds the residual autoencoder from it, and trains the P-branch on unrolled
clips whose length grows over training.  The frame buffer feeding each next
prediction is quantized to 8 bits and optionally shifted by a small random
offset each step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from . import losses
from .coding import quantize
from .data import Clip, sample_clip_batch, sample_frame_batch
from .dssw import dssw
from .flow import SYNTHETIC_TRUTH, predict_flow
from .losses import LossWeights, PFrameTerms
from .networks import VideoCodec
from .rate_control import ControllerState, update as controller_update

FULL_SCALE_STAGES = ((80_000, 1), (300_000, 2), (350_000, 3), (400_000, 5))
LR_BASE = 1e-4
LR_FINAL = 1e-5
LR_WARMUP_STEPS = 20_000
LR_DROP_STEP = 320_000

I_BRANCH = ("e_i", "g_i", "coder_i")
P_BRANCH = ("e_flow", "g_flow", "coder_flow", "e_res", "g_res", "coder_res")


class DivergenceError(RuntimeError):
    """A loss went non-finite; carries the step and the offending value."""


@dataclass(frozen=True)
class UnrollSchedule:
    """(step threshold, P-frame count) stages with increasing thresholds."""

    stages: tuple[tuple[int, int], ...] = FULL_SCALE_STAGES

    def __post_init__(self) -> None:
        thresholds = [t for t, _ in self.stages]
        counts = [c for _, c in self.stages]
        if thresholds != sorted(thresholds) or len(set(thresholds)) != len(thresholds):
            raise ValueError("stage thresholds must be strictly increasing")
        if counts != sorted(counts):
            raise ValueError("P-frame counts must be non-decreasing")

    @classmethod
    def scaled(cls, scale: float, max_p_frames: int | None = None) -> "UnrollSchedule":
        stages = []
        for threshold, count in FULL_SCALE_STAGES:
            if max_p_frames is not None:
                count = min(count, max_p_frames)
            stages.append((max(1, round(threshold * scale)), count))
        merged = []
        for threshold, count in stages:  # dedupe thresholds collapsed by rounding
            if merged and merged[-1][0] == threshold:
                merged[-1] = (threshold, count)
            else:
                merged.append((threshold, count))
        return cls(tuple(merged))

    def p_frames_at(self, step: int) -> int:
        for threshold, count in self.stages:
            if step < threshold:
                return count
        return self.stages[-1][1]

    @property
    def total_steps(self) -> int:
        return self.stages[-1][0]


def learning_rate_at(step: int, scale: float = 1.0) -> float:
    """Linear warmup from 0, constant plateau, late drop; thresholds scale."""
    warmup = max(1, round(LR_WARMUP_STEPS * scale))
    drop = round(LR_DROP_STEP * scale)
    if step < warmup:
        return LR_BASE * step / warmup
    return LR_FINAL if step >= drop else LR_BASE


@dataclass
class TrainOptions:
    batch_size: int = 4
    scale: float = 0.01
    target_bpp: float = 0.05
    iframe_target_bpp: float = 0.4
    controller_gain: float = 1e-3   # raise for short desk runs: the loop's
    quantize_buffer: bool = True    # settling time is ~1/gain updates
    random_shift: bool = True
    shift_max: int = 2
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    log_every: int = 100


def quantize_8bit(x: torch.Tensor) -> torch.Tensor:
    """Snap to the 8-bit intensity grid with a straight-through gradient."""
    return quantize(x * 255.0, "round") / 255.0


def shift_with_replication(x: torch.Tensor, dx: int, dy: int) -> torch.Tensor:
    """Translate spatially by integer offsets, replicating the vacated edge."""
    h, w = x.shape[-2:]
    idx_y = torch.arange(h, device=x.device).sub(dy).clamp(0, h - 1)
    idx_x = torch.arange(w, device=x.device).sub(dx).clamp(0, w - 1)
    return x.index_select(-2, idx_y).index_select(-1, idx_x)


def _check_finite(value: torch.Tensor, step: int, what: str) -> None:
    if not torch.isfinite(value).all():
        raise DivergenceError(f"{what} became non-finite at step {step}: {value}")


def _set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


# ---------------------------------------------------------------------------
# stage 1: I-frame branch
# ---------------------------------------------------------------------------

def stage1_train(
    model: VideoCodec,
    clips: list[Clip],
    steps: int,
    opts: TrainOptions,
) -> dict:
    """Train E_I/G_I (and D_I) on random frames with adaptive rate control."""
    torch.manual_seed(opts.seed)
    rng = np.random.default_rng(opts.seed)
    controller = ControllerState(target_bpp=opts.iframe_target_bpp,
                                 gain=opts.controller_gain, total_steps=steps)

    opt_g = torch.optim.Adam(model.trainable_parameters(*I_BRANCH), lr=LR_BASE)
    opt_d = torch.optim.Adam(model.trainable_parameters("d_i"), lr=LR_BASE)
    history = {"bpp": [], "mse": [], "loss": []}

    for step in range(steps):
        lr = learning_rate_at(step, opts.scale)
        _set_lr(opt_g, lr)
        _set_lr(opt_d, lr)
        x = sample_frame_batch(clips, opts.batch_size, rng)

        out = model.iframe_code(x, "train")
        n_pixels = x.shape[0] * x.shape[-2] * x.shape[-1]
        bpp = out.bits / n_pixels
        d_fake = model.discriminate(out.recon, out.latent, "d_i") if model.config.use_gan else None
        loss = losses.iframe_loss(x, out.recon, bpp, d_fake,
                                  controller.lambda_rate, opts.weights)
        _check_finite(loss, step, "stage-1 generator loss")
        opt_g.zero_grad()
        loss.backward()
        opt_g.step()
        controller_update(controller, float(bpp.detach()))

        if model.config.use_gan:
            recon = out.recon.detach()
            latent = out.latent.detach()
            d_fake = model.discriminate(recon, latent, "d_i")
            d_real = model.discriminate(x, latent, "d_i")
            _, d_term = losses.gan_losses(d_fake, d_real)
            _check_finite(d_term, step, "stage-1 discriminator loss")
            opt_d.zero_grad()
            d_term.backward()
            opt_d.step()

        history["bpp"].append(float(bpp.detach()))
        history["mse"].append(float(losses.mse_255(x, out.recon).detach()))
        history["loss"].append(float(loss.detach()))

    history["controller"] = controller
    return history


# ---------------------------------------------------------------------------
# stage 2: P-frame branch
# ---------------------------------------------------------------------------

def stage2_init(model: VideoCodec) -> None:
    """Seed the residual autoencoder from the I-branch and freeze the I nets.

    All shape-compatible blocks are copied; the residual generator's widened
    input layer (free-latent concat) keeps its fresh initialization.  Any
    other shape mismatch is an error.
    """
    model.e_res.load_state_dict(model.e_i.state_dict())
    model.coder_res.load_state_dict(model.coder_i.state_dict())

    src = model.g_i.state_dict()
    dst = model.g_res.state_dict()
    skipped = []
    for key, value in src.items():
        if dst[key].shape == value.shape:
            dst[key] = value
        else:
            skipped.append(key)
    allowed = {k for k in dst if k.startswith("net.0.")}  # widened input conv
    if not set(skipped) <= allowed:
        raise ValueError(f"unexpected shape mismatches copying the generator: {skipped}")
    model.g_res.load_state_dict(dst)

    model.freeze(*I_BRANCH, "d_i")


@dataclass
class RolloutResult:
    originals: list[torch.Tensor]
    recons: list[torch.Tensor]
    latents: list[torch.Tensor]        # full residual-generator inputs per frame
    bits: list[torch.Tensor]
    flows: list[torch.Tensor | None]   # predictor flow (None without predictor)
    flow_hats: list[torch.Tensor]
    sigmas: list[torch.Tensor]
    warped: list[torch.Tensor]

    @property
    def n_pframes(self) -> int:
        return len(self.recons)


def unroll_rollout(
    model: VideoCodec,
    frames: torch.Tensor,
    gt_flows: torch.Tensor | None,
    opts: TrainOptions,
    rng: np.random.Generator,
    mode: str = "train",
) -> RolloutResult:
    """Code frame 1 with the (frozen) I-branch, then roll the P-branch over
    frames 2..T, maintaining the quantized (and optionally shifted) buffer."""
    cfg = model.config
    with torch.no_grad():
        iframe = model.iframe_code(frames[:, 0], "infer")
    buffer = quantize_8bit(iframe.recon) if opts.quantize_buffer else iframe.recon

    result = RolloutResult([], [], [], [], [], [], [], [])
    for t in range(1, frames.shape[1]):
        x_t = frames[:, t]
        if cfg.use_flow_predictor:
            gt = gt_flows[:, t - 1] if gt_flows is not None else None
            flow = predict_flow(x_t, frames[:, t - 1], cfg.flow_predictor, gt_flow=gt)
            flow_out = model.flow_code(flow, mode)
        else:
            flow = None
            flow_out = model.flow_code(None, mode, frames=torch.cat([x_t, buffer], dim=1))
        warped = dssw(buffer, flow_out.flow_hat, flow_out.sigma,
                      cfg.warp_kernel, cfg.blur_params)
        y_free = model.free_latent(warped) if cfg.use_free_latent else None
        residual = x_t - warped
        res_out = model.residual_code(residual, y_free, mode)
        recon = (warped + res_out.detail).clamp(0.0, 1.0)

        result.originals.append(x_t)
        result.recons.append(recon)
        result.latents.append(res_out.latent)
        result.bits.append(flow_out.bits + res_out.bits)
        result.flows.append(flow)
        result.flow_hats.append(flow_out.flow_hat)
        result.sigmas.append(flow_out.sigma)
        result.warped.append(warped)

        buffer = quantize_8bit(recon) if opts.quantize_buffer else recon
        if opts.random_shift and mode == "train":
            dx, dy = rng.integers(-opts.shift_max, opts.shift_max + 1, size=2)
            buffer = shift_with_replication(buffer, int(dx), int(dy))
    return result


def stage2_train(
    model: VideoCodec,
    clips: list[Clip],
    steps: int,
    opts: TrainOptions,
    schedule: UnrollSchedule | None = None,
) -> dict:
    """Unrolled P-branch training with staged sequence lengths."""
    schedule = schedule or UnrollSchedule.scaled(opts.scale)
    stage2_init(model)
    torch.manual_seed(opts.seed + 1)
    rng = np.random.default_rng(opts.seed + 1)
    controller = ControllerState(target_bpp=opts.target_bpp,
                                 gain=opts.controller_gain, total_steps=steps)

    opt_g = torch.optim.Adam(model.trainable_parameters(*P_BRANCH), lr=LR_BASE)
    opt_d = torch.optim.Adam(model.trainable_parameters("d_p"), lr=LR_BASE)
    history = {"bpp": [], "mse": [], "loss": [], "t": []}

    for step in range(steps):
        lr = learning_rate_at(step, opts.scale)
        _set_lr(opt_g, lr)
        _set_lr(opt_d, lr)
        n_frames = 1 + schedule.p_frames_at(step)
        frames, gt_flows = sample_clip_batch(clips, opts.batch_size, n_frames, rng)

        rollout = unroll_rollout(model, frames, gt_flows, opts, rng, "train")
        n_pixels = frames.shape[0] * frames.shape[-2] * frames.shape[-1]
        terms = []
        for i in range(rollout.n_pframes):
            d_fake = (model.discriminate(rollout.recons[i], rollout.latents[i], "d_p")
                      if model.config.use_gan else None)
            reg = losses.reg_loss(rollout.flows[i], rollout.flow_hats[i],
                                  rollout.sigmas[i], opts.weights)
            terms.append(PFrameTerms(
                rate=rollout.bits[i] / n_pixels,
                mse=losses.mse_255(rollout.originals[i], rollout.recons[i]),
                d_fake=d_fake,
                reg=reg,
            ))
        loss = losses.pframe_loss(terms, controller.lambda_rate, opts.weights)
        _check_finite(loss, step, "stage-2 generator loss")
        opt_g.zero_grad()
        loss.backward()
        opt_g.step()

        mean_bpp = float(torch.stack([t.rate for t in terms]).mean().detach())
        controller_update(controller, mean_bpp)

        if model.config.use_gan:
            d_fakes, d_reals = [], []
            for i in range(rollout.n_pframes):
                latent = rollout.latents[i].detach()
                d_fakes.append(model.discriminate(rollout.recons[i].detach(), latent, "d_p"))
                d_reals.append(model.discriminate(rollout.originals[i], latent, "d_p"))
            d_term = losses.dp_loss(d_fakes, d_reals, opts.weights)
            _check_finite(d_term, step, "stage-2 discriminator loss")
            opt_d.zero_grad()
            d_term.backward()
            opt_d.step()

        history["bpp"].append(mean_bpp)
        history["mse"].append(float(torch.stack(
            [torch.as_tensor(t.mse) for t in terms]).mean().detach()))
        history["loss"].append(float(loss.detach()))
        history["t"].append(n_frames)

    history["controller"] = controller
    return history
