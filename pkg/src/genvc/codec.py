"""End-to-end coding of frame sequences to and from the .gvc format.

The first frame is coded by the I-branch, every following frame by the
P-branch (coded flow + sigma, decoupled warp-blur of the previous
reconstruction, free latent, coded residual).  The encoder mirrors the
decoder's reconstruction chain exactly, so both sides keep bit-identical
frame buffers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .coding import (
    BitstreamContainer,
    CodedFrame,
    EntropyModel,
    parse_container,
    range_decode,
    range_encode,
    rate_estimate,
    serialize_container,
)
from .dssw import dssw
from .flow import predict_flow
from .networks import STRIDE, LatentCoder, VideoCodec
from .training import quantize_8bit


@dataclass
class CodingReport:
    bpp_coded: float      # from actual payload bytes
    bpp_estimate: float   # from the entropy-model tables
    recon: torch.Tensor   # encoder-side reconstructions, (T, 3, H, W) unpadded


def pad_frames(frames: torch.Tensor, stride: int = STRIDE) -> tuple[torch.Tensor, tuple[int, int]]:
    """Replicate-pad (T, 3, H, W) on the bottom/right to a stride multiple."""
    h, w = frames.shape[-2:]
    ph = (stride - h % stride) % stride
    pw = (stride - w % stride) % stride
    if ph or pw:
        frames = F.pad(frames, (0, pw, 0, ph), mode="replicate")
    return frames, (h, w)


def _grid_models(coder: LatentCoder, y_hat: torch.Tensor, aux) -> tuple[EntropyModel, EntropyModel]:
    """Frequency tables for one latent pair: (hyper z, main y)."""
    z = aux.z_hat
    p_mean, p_scale = coder.prior_params(z)
    z_model = EntropyModel.from_gaussian(p_mean.detach().numpy(), p_scale.detach().numpy())
    y_model = EntropyModel.from_gaussian(aux.mean.detach().numpy(), aux.scale.detach().numpy())
    return z_model, y_model


def _code_pair(coder: LatentCoder, y_hat: torch.Tensor, aux) -> tuple[list[bytes], float]:
    z_model, y_model = _grid_models(coder, y_hat, aux)
    z_sym = aux.z_hat.detach().numpy().astype(np.int64).reshape(-1)
    y_sym = y_hat.detach().numpy().astype(np.int64).reshape(-1)
    segments = [range_encode(z_sym, z_model), range_encode(y_sym, y_model)]
    bits = rate_estimate(z_sym, z_model) + rate_estimate(y_sym, y_model)
    return segments, bits


def encode_frames(
    model: VideoCodec,
    frames: torch.Tensor,
    gt_flows: torch.Tensor | None = None,
) -> tuple[bytes, CodingReport]:
    """Code (T, 3, H, W) frames in [0, 1] into .gvc bytes."""
    if frames.dim() != 4 or frames.shape[1] != model.config.frame_channels:
        raise ValueError("expected (T, C, H, W) frames")
    model.eval()
    cfg = model.config
    height, width = frames.shape[-2:]
    padded, _ = pad_frames(frames)
    est_bits_total = 0.0
    coded_frames: list[CodedFrame] = []
    recons = []

    with torch.no_grad():
        iframe = model.iframe_code(padded[0:1], "infer")
        segments, est_bits = _code_pair(model.coder_i, iframe.latent, iframe.aux)
        coded_frames.append(CodedFrame("I", segments))
        est_bits_total += est_bits
        buffer = quantize_8bit(iframe.recon)
        recons.append(buffer[0])

        for t in range(1, padded.shape[0]):
            x_t = padded[t : t + 1]
            if cfg.use_flow_predictor:
                gt = gt_flows[t - 1 : t] if gt_flows is not None else None
                if gt is not None and gt.shape[-2:] != x_t.shape[-2:]:
                    gt = F.pad(gt, (0, x_t.shape[-1] - gt.shape[-1],
                                    0, x_t.shape[-2] - gt.shape[-2]), mode="replicate")
                flow = predict_flow(x_t, padded[t - 1 : t], cfg.flow_predictor, gt_flow=gt)
                flow_out = model.flow_code(flow, "infer")
            else:
                flow_out = model.flow_code(None, "infer",
                                           frames=torch.cat([x_t, buffer], dim=1))
            warped = dssw(buffer, flow_out.flow_hat, flow_out.sigma,
                          cfg.warp_kernel, cfg.blur_params)
            y_free = model.free_latent(warped) if cfg.use_free_latent else None
            res_out = model.residual_code(x_t - warped, y_free, "infer")

            flow_segments, flow_bits = _code_pair(model.coder_flow, flow_out.latent,
                                                  flow_out.aux)
            res_segments, res_bits = _code_pair(model.coder_res, res_out.coded_latent,
                                                res_out.aux)
            coded_frames.append(CodedFrame("P", flow_segments + res_segments))
            est_bits_total += flow_bits + res_bits

            recon = (warped + res_out.detail).clamp(0.0, 1.0)
            buffer = quantize_8bit(recon)
            recons.append(buffer[0])

    container = BitstreamContainer(width, height, coded_frames)
    data = serialize_container(container)
    n_pixels = frames.shape[0] * width * height
    report = CodingReport(
        bpp_coded=container.payload_bits / n_pixels,
        bpp_estimate=est_bits_total / n_pixels,
        recon=torch.stack(recons)[..., :height, :width],
    )
    return data, report


def _decode_pair(
    coder: LatentCoder,
    segments: list[bytes],
    latent_channels: int,
    latent_hw: tuple[int, int],
) -> torch.Tensor:
    """Decode (hyper, main) segments back into an integer latent tensor."""
    z_h = _conv_out(_conv_out(latent_hw[0]))
    z_w = _conv_out(_conv_out(latent_hw[1]))
    hyper_ch = coder.prior_mean.numel()
    z_shape = (1, hyper_ch, z_h, z_w)
    p_mean, p_scale = coder.prior_params(torch.zeros(z_shape))
    z_model = EntropyModel.from_gaussian(p_mean.numpy(), p_scale.numpy())
    z_hat = torch.from_numpy(
        range_decode(segments[0], z_model).reshape(z_shape)).float()

    like = torch.zeros(1, latent_channels, *latent_hw)
    mean, scale = coder.predict(z_hat, like)
    y_model = EntropyModel.from_gaussian(mean.numpy(), scale.numpy())
    y_hat = torch.from_numpy(
        range_decode(segments[1], y_model).reshape(like.shape)).float()
    return y_hat


def _conv_out(n: int) -> int:
    return (n + 1) // 2  # stride-2 conv with same padding


def decode_frames(model: VideoCodec, data: bytes) -> torch.Tensor:
    """Decode .gvc bytes into (T, 3, H, W) frames in [0, 1], unpadded dims."""
    model.eval()
    cfg = model.config
    container = parse_container(data)
    pad_h = math.ceil(container.height / STRIDE) * STRIDE
    pad_w = math.ceil(container.width / STRIDE) * STRIDE
    latent_hw = (pad_h // STRIDE, pad_w // STRIDE)

    recons = []
    buffer = None
    with torch.no_grad():
        for i, frame in enumerate(container.frames):
            if (frame.kind == "I") != (i == 0):
                raise ValueError("expected exactly one leading I-frame")
            if frame.kind == "I":
                y_hat = _decode_pair(model.coder_i, frame.segments,
                                     cfg.latent_channels, latent_hw)
                recon = model.g_i(y_hat).clamp(0.0, 1.0)
            else:
                flow_latent = _decode_pair(model.coder_flow, frame.segments[:2],
                                           cfg.flow_latent_channels, latent_hw)
                out = model.g_flow(flow_latent)[..., :pad_h, :pad_w]
                flow_hat = out[:, :2]
                sigma = cfg.sigma_max * torch.sigmoid(out[:, 2:3])
                warped = dssw(buffer, flow_hat, sigma, cfg.warp_kernel, cfg.blur_params)
                u_hat = _decode_pair(model.coder_res, frame.segments[2:],
                                     cfg.latent_channels, latent_hw)
                if cfg.use_free_latent:
                    full = torch.cat([model.free_latent(warped), u_hat], dim=1)
                else:
                    full = u_hat
                recon = (warped + model.g_res(full)).clamp(0.0, 1.0)
            buffer = quantize_8bit(recon)
            recons.append(buffer[0])
    return torch.stack(recons)[..., : container.height, : container.width]
