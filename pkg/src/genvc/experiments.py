"""Desk-scale end-to-end experiment: the GAN-vs-no-GAN direction.

Trains two codecs that differ only in the adversarial weight (beta=128 vs
beta=0) on synthetic moving-texture clips, steers both to the same target
bitrate, and compares patch FID of their reconstructions on held-out clips.
Rates are the entropy-model estimates (what the controller steers); at these
tiny resolutions per-segment container overhead would swamp real payloads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .data import synthetic_dataset
from .evalharness import RandomConvEmbedding, patch_fid
from .losses import LossWeights
from .networks import CodecConfig, VideoCodec
from .training import (
    TrainOptions,
    UnrollSchedule,
    stage1_train,
    stage2_train,
    unroll_rollout,
)

DESK_WIDTHS = dict(
    enc_widths=(8, 12, 16, 20), latent_channels=8, hyper_channels=12,
    gen_res_blocks=1, flow_widths=(8, 8, 8, 8), flow_latent_channels=6,
    flow_hyper_channels=8, disc_widths=(12, 16, 24),
)


@dataclass
class DeskRunOptions:
    size: int = 64
    scale: float = 0.01            # of the full-scale unrolling schedule
    max_p_frames: int = 3          # T up to 4
    stage1_steps: int = 2500
    batch_size: int = 2
    target_bpp: float = 0.10       # breathing room at 64px (0.05 starves it)
    iframe_target_bpp: float = 0.2  # desk latents cannot carry 0.4 bpp at 64px
    controller_gain: float = 1e-2   # settle within the shortened schedule
    n_train_clips: int = 24
    n_eval_clips: int = 12
    eval_frames: int = 16
    beta: float = 128.0
    seed: int = 0
    widths: dict = field(default_factory=lambda: dict(DESK_WIDTHS))


@dataclass
class DeskRunResult:
    seed: int
    beta: float
    train_bpp: float      # mean measured bpp over the final training window
    eval_bpp: float       # model-estimate bpp over the held-out clips
    fid: float
    psnr: float


def train_desk_model(opts: DeskRunOptions) -> tuple[VideoCodec, dict]:
    """Both stages at desk scale; returns the model and stage-2 history."""
    torch.manual_seed(opts.seed)
    config = CodecConfig(**opts.widths, use_gan=opts.beta != 0.0,
                         flow_predictor="synthetic_truth")
    model = VideoCodec(config)
    clips = synthetic_dataset(opts.n_train_clips, size=opts.size, n_frames=8,
                              seed=opts.seed + 1000)
    weights = LossWeights(beta=opts.beta)
    train_opts = TrainOptions(
        batch_size=opts.batch_size, scale=opts.scale,
        target_bpp=opts.target_bpp, iframe_target_bpp=opts.iframe_target_bpp,
        controller_gain=opts.controller_gain,
        weights=weights, seed=opts.seed,
    )
    stage1_train(model, clips, opts.stage1_steps, train_opts)
    schedule = UnrollSchedule.scaled(opts.scale, max_p_frames=opts.max_p_frames)
    history = stage2_train(model, clips, schedule.total_steps, train_opts, schedule)
    return model, history


def evaluate_desk_model(
    model: VideoCodec,
    opts: DeskRunOptions,
    embedding: RandomConvEmbedding | None = None,
) -> dict:
    """Reconstruct held-out clips (I-frame then P-frames) and score them."""
    embedding = embedding or RandomConvEmbedding(seed=0)
    eval_clips = synthetic_dataset(opts.n_eval_clips, size=opts.size,
                                   n_frames=opts.eval_frames, seed=opts.seed + 9000)
    eval_train_opts = TrainOptions(quantize_buffer=True, random_shift=False)
    rng = np.random.default_rng(0)
    recon_frames, orig_frames = [], []
    total_bits = 0.0
    n_pframe_pixels = 0
    with torch.no_grad():
        for clip in eval_clips:
            rollout = unroll_rollout(model, clip.frames.unsqueeze(0),
                                     clip.flows.unsqueeze(0) if clip.flows is not None else None,
                                     eval_train_opts, rng, "infer")
            recon_frames.extend(r[0] for r in rollout.recons)
            orig_frames.extend(o[0] for o in rollout.originals)
            total_bits += float(torch.stack(rollout.bits).sum())
            n_pframe_pixels += rollout.n_pframes * opts.size * opts.size

    recons = np.stack([f.permute(1, 2, 0).numpy() for f in recon_frames])
    originals = np.stack([f.permute(1, 2, 0).numpy() for f in orig_frames])
    mse = np.mean((255.0 * (recons - originals)) ** 2)
    return {
        "bpp": total_bits / n_pframe_pixels,
        "fid": patch_fid(recons, originals, patch_size=opts.size, embedding=embedding),
        "psnr": 20 * np.log10(255.0 / np.sqrt(max(mse, 1e-12))),
    }


def run_desk_comparison(seed: int, base: DeskRunOptions | None = None) -> dict[str, DeskRunResult]:
    """One seed of the ablation pair: identical runs except the GAN weight."""
    base = base or DeskRunOptions()
    embedding = RandomConvEmbedding(seed=0)
    results = {}
    for label, beta in (("gan", base.beta or 128.0), ("no_gan", 0.0)):
        opts = DeskRunOptions(**{**base.__dict__, "beta": beta, "seed": seed})
        model, history = train_desk_model(opts)
        scores = evaluate_desk_model(model, opts, embedding)
        results[label] = DeskRunResult(
            seed=seed,
            beta=beta,
            train_bpp=float(np.mean(history["bpp"][-200:])),
            eval_bpp=scores["bpp"],
            fid=scores["fid"],
            psnr=scores["psnr"],
        )
    return results
