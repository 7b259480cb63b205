"""Codec networks: I-frame, flow, and residual autoencoder pairs with their
hyperprior entropy stacks, both conditional patch discriminators, and the
free-latent wiring.

Every encoder downsamples by a factor of 16, so latent grids are exactly
input/16 (inputs must be padded to a multiple of 16 upstream).  Config
toggles cover the ablations: no GAN, no free latent, unconditional
discriminator, and learning flow from frames instead of a flow predictor.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import torch
import torch.nn.functional as F
import yaml
from torch import nn
from torch.nn.utils import parametrize

from . import coding
from .dssw import DEFAULT_SCALES, ScaleSpaceParams

STRIDE = 16

PARAM_SETS = (
    "e_i", "g_i", "coder_i",
    "e_flow", "g_flow", "coder_flow",
    "e_res", "g_res", "coder_res",
    "d_i", "d_p",
)

CHECKPOINT_VERSION = 1


@dataclass
class CodecConfig:
    frame_channels: int = 3
    enc_widths: tuple[int, ...] = (32, 48, 64, 96)
    latent_channels: int = 32
    hyper_channels: int = 48
    gen_res_blocks: int = 2
    flow_widths: tuple[int, ...] = (24, 24, 24, 24)
    flow_latent_channels: int = 16
    flow_hyper_channels: int = 24
    disc_widths: tuple[int, ...] = (48, 96, 192)
    blur_scales: tuple[float, ...] = DEFAULT_SCALES
    warp_kernel: str = "bicubic"
    use_gan: bool = True
    use_free_latent: bool = True
    conditional_discriminator: bool = True
    use_flow_predictor: bool = True
    flow_predictor: str = "classical_estimator"

    def __post_init__(self) -> None:
        for name in ("enc_widths", "flow_widths", "disc_widths", "blur_scales"):
            setattr(self, name, tuple(getattr(self, name)))
        if min(self.enc_widths + self.flow_widths + self.disc_widths) <= 0:
            raise ValueError("channel widths must be positive")
        if len(self.enc_widths) != 4 or len(self.flow_widths) != 4:
            raise ValueError("encoders use exactly four stride-2 stages")

    @property
    def sigma_max(self) -> float:
        return self.blur_scales[-1]

    @property
    def blur_params(self) -> ScaleSpaceParams:
        return ScaleSpaceParams(self.blur_scales)

    @property
    def residual_latent_channels(self) -> int:
        return self.latent_channels * (2 if self.use_free_latent else 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        return cls(**d)

    @classmethod
    def from_yaml(cls, path: str) -> "CodecConfig":
        with open(path) as f:
            data = yaml.safe_load(f) or {}
        return cls(**data)


def conv(in_ch: int, out_ch: int, kernel: int = 3, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=kernel // 2)


def deconv(in_ch: int, out_ch: int, kernel: int = 3, stride: int = 2) -> nn.ConvTranspose2d:
    return nn.ConvTranspose2d(in_ch, out_ch, kernel, stride=stride,
                              padding=kernel // 2, output_padding=stride - 1)


class ChannelNorm(nn.Module):
    """Normalize across channels at each spatial position, learnable affine."""

    def __init__(self, channels: int, eps: float = 1e-3):
        super().__init__()
        self.eps = eps
        self.gamma = nn.Parameter(torch.ones(1, channels, 1, 1))
        self.beta = nn.Parameter(torch.zeros(1, channels, 1, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        return (x - mu) * torch.rsqrt(var + self.eps) * self.gamma + self.beta


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            conv(channels, channels), ChannelNorm(channels), nn.LeakyReLU(0.2),
            conv(channels, channels), ChannelNorm(channels),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.block(x)


class Encoder(nn.Module):
    """Four stride-2 stages: spatial dims shrink by exactly 16."""

    def __init__(self, in_ch: int, widths: tuple[int, ...], out_ch: int):
        super().__init__()
        layers: list[nn.Module] = [conv(in_ch, widths[0], 7), ChannelNorm(widths[0]),
                                   nn.LeakyReLU(0.2)]
        prev = widths[0]
        for w in widths:
            layers += [conv(prev, w, stride=2), ChannelNorm(w), nn.LeakyReLU(0.2)]
            prev = w
        layers.append(conv(prev, out_ch))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class Generator(nn.Module):
    """Residual core plus four stride-2 upsampling stages (16x)."""

    def __init__(self, in_ch: int, widths: tuple[int, ...], out_ch: int, res_blocks: int):
        super().__init__()
        layers: list[nn.Module] = [conv(in_ch, widths[-1]), ChannelNorm(widths[-1]),
                                   nn.LeakyReLU(0.2)]
        layers += [ResidualBlock(widths[-1]) for _ in range(res_blocks)]
        prev = widths[-1]
        for w in reversed(widths):
            layers += [deconv(prev, w), ChannelNorm(w), nn.LeakyReLU(0.2)]
            prev = w
        layers.append(conv(prev, out_ch, 7))
        self.net = nn.Sequential(*layers)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return self.net(y)


class FlowEncoder(nn.Module):
    """Shallow stride-16 encoder for the (cheap to code) flow field."""

    def __init__(self, in_ch: int, widths: tuple[int, ...], out_ch: int):
        super().__init__()
        layers: list[nn.Module] = []
        prev = in_ch
        for w in widths:
            layers += [conv(prev, w, 5, stride=2), nn.LeakyReLU(0.2)]
            prev = w
        layers.append(conv(prev, out_ch))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class FlowGenerator(nn.Module):
    """Decodes the flow latent into (flow u, flow v, raw sigma)."""

    def __init__(self, in_ch: int, widths: tuple[int, ...]):
        super().__init__()
        layers: list[nn.Module] = []
        prev = in_ch
        for w in reversed(widths):
            layers += [deconv(prev, w, 5), nn.LeakyReLU(0.2)]
            prev = w
        head = conv(prev, 3)
        with torch.no_grad():
            head.bias[2] = -3.0  # start with light blur, not sigma_max/2
        layers.append(head)
        self.net = nn.Sequential(*layers)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return self.net(y)


class LatentCoder(nn.Module):
    """Hyperprior entropy stack for one latent: h_a, h_s, and a per-channel
    factorized prior for the hyper-latent itself."""

    def __init__(self, latent_ch: int, hyper_ch: int):
        super().__init__()
        self.h_a = nn.Sequential(
            conv(latent_ch, hyper_ch), nn.LeakyReLU(0.2),
            conv(hyper_ch, hyper_ch, 5, stride=2), nn.LeakyReLU(0.2),
            conv(hyper_ch, hyper_ch, 5, stride=2),
        )
        self.h_s = nn.Sequential(
            deconv(hyper_ch, hyper_ch, 5), nn.LeakyReLU(0.2),
            deconv(hyper_ch, hyper_ch, 5), nn.LeakyReLU(0.2),
            conv(hyper_ch, 2 * latent_ch),
        )
        self.prior_mean = nn.Parameter(torch.zeros(hyper_ch))
        self.prior_log_scale = nn.Parameter(torch.zeros(hyper_ch))

    def prior_params(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        shape = (1, -1, 1, 1)
        mean = self.prior_mean.view(shape).expand_as(z)
        scale = self.prior_log_scale.exp().clamp(min=coding.SCALE_FLOOR).view(shape).expand_as(z)
        return mean, scale

    def predict(self, z_hat: torch.Tensor, like: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Mean/scale for the main latent; output cropped to the latent dims."""
        params = self.h_s(z_hat)[..., : like.shape[-2], : like.shape[-1]]
        mean, raw_scale = params.chunk(2, dim=1)
        scale = F.softplus(raw_scale) + coding.SCALE_FLOOR
        return mean, scale

    def forward(self, y: torch.Tensor, mode: str) -> tuple[torch.Tensor, torch.Tensor, "CodeAux"]:
        """Quantize `y`, charge its bits, and return the decoded latent.

        Training uses the mixed proxy: additive noise inside the rate term,
        straight-through rounding on the path the generator decodes.
        """
        if mode not in ("train", "infer"):
            raise ValueError(f"unknown mode {mode!r}")
        z = self.h_a(y)
        z_hat = coding.quantize(z, "round")
        p_mean, p_scale = self.prior_params(z)
        z_rate_in = coding.quantize(z, "noise") if mode == "train" else z_hat
        bits = coding.gaussian_bits(z_rate_in, p_mean, p_scale)

        mean, scale = self.predict(z_hat, y)
        y_hat = coding.quantize(y, "round")
        y_rate_in = coding.quantize(y, "noise") if mode == "train" else y_hat
        bits = bits + coding.gaussian_bits(y_rate_in, mean, scale)
        return y_hat, bits, CodeAux(z_hat=z_hat, mean=mean, scale=scale)


class CodeAux(NamedTuple):
    z_hat: torch.Tensor
    mean: torch.Tensor
    scale: torch.Tensor


class _SpectralNorm(nn.Module):
    """Divide a weight by its top singular value, computed exactly.

    Power-iteration estimates lag the optimizer on layers with a small
    spectral gap; these convolutions are small enough that the exact norm is
    cheap and keeps the Lipschitz bound tight after every step.
    """

    def forward(self, w: torch.Tensor) -> torch.Tensor:
        sigma = torch.linalg.matrix_norm(w.reshape(w.shape[0], -1), ord=2)
        return w / sigma.clamp_min(1e-12)


def _spectral_norm(module: nn.Conv2d) -> nn.Conv2d:
    parametrize.register_parametrization(module, "weight", _SpectralNorm())
    return module


class PatchDiscriminator(nn.Module):
    """Spectrally normalized patch discriminator, optionally conditioned on a
    latent (nearest-neighbor upsampled and concatenated to the image)."""

    def __init__(self, in_ch: int, cond_ch: int, widths: tuple[int, ...]):
        super().__init__()
        self.cond_ch = cond_ch
        layers: list[nn.Module] = []
        prev = in_ch + cond_ch
        for w in widths:
            layers += [_spectral_norm(conv(prev, w, 4, stride=2)), nn.LeakyReLU(0.2)]
            prev = w
        layers += [_spectral_norm(conv(prev, prev, 4)), nn.LeakyReLU(0.2),
                   _spectral_norm(conv(prev, 1, 1))]
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor, latent: torch.Tensor | None = None) -> torch.Tensor:
        if self.cond_ch:
            if latent is None:
                raise ValueError("conditional discriminator needs a latent")
            if latent.shape[1] != self.cond_ch:
                raise ValueError(
                    f"latent has {latent.shape[1]} channels, this branch expects {self.cond_ch}")
            up = F.interpolate(latent.detach(), size=x.shape[-2:], mode="nearest")
            x = torch.cat([x, up], dim=1)
        return torch.sigmoid(self.net(x))


class IFrameCode(NamedTuple):
    latent: torch.Tensor
    recon: torch.Tensor
    bits: torch.Tensor
    aux: CodeAux


class FlowCode(NamedTuple):
    latent: torch.Tensor
    flow_hat: torch.Tensor
    sigma: torch.Tensor
    bits: torch.Tensor
    aux: CodeAux


class ResidualCode(NamedTuple):
    latent: torch.Tensor       # full generator input (free latent + coded part)
    coded_latent: torch.Tensor
    detail: torch.Tensor
    bits: torch.Tensor
    aux: CodeAux


class VideoCodec(nn.Module):
    """The full network bundle; one attribute per parameter set."""

    def __init__(self, config: CodecConfig):
        super().__init__()
        c = config
        self.config = c
        self.e_i = Encoder(c.frame_channels, c.enc_widths, c.latent_channels)
        self.g_i = Generator(c.latent_channels, c.enc_widths, c.frame_channels,
                             c.gen_res_blocks)
        self.coder_i = LatentCoder(c.latent_channels, c.hyper_channels)

        flow_in = 2 if c.use_flow_predictor else 2 * c.frame_channels
        self.e_flow = FlowEncoder(flow_in, c.flow_widths, c.flow_latent_channels)
        self.g_flow = FlowGenerator(c.flow_latent_channels, c.flow_widths)
        self.coder_flow = LatentCoder(c.flow_latent_channels, c.flow_hyper_channels)

        self.e_res = Encoder(c.frame_channels, c.enc_widths, c.latent_channels)
        self.g_res = Generator(c.residual_latent_channels, c.enc_widths,
                               c.frame_channels, c.gen_res_blocks)
        self.coder_res = LatentCoder(c.latent_channels, c.hyper_channels)

        cond_i = c.latent_channels if c.conditional_discriminator else 0
        cond_p = c.residual_latent_channels if c.conditional_discriminator else 0
        self.d_i = PatchDiscriminator(c.frame_channels, cond_i, c.disc_widths)
        self.d_p = PatchDiscriminator(c.frame_channels, cond_p, c.disc_widths)

        self.frozen: set[str] = set()

    # -- parameter-set management ------------------------------------------

    def param_set(self, name: str) -> nn.Module:
        if name not in PARAM_SETS:
            raise ValueError(f"unknown parameter set {name!r}")
        return getattr(self, name)

    def freeze(self, *names: str) -> None:
        for name in names:
            for p in self.param_set(name).parameters():
                p.requires_grad_(False)
            self.frozen.add(name)

    def trainable_parameters(self, *names: str):
        for name in names:
            if name in self.frozen:
                raise ValueError(f"parameter set {name!r} is frozen")
            yield from self.param_set(name).parameters()

    def parameter_hash(self, name: str) -> str:
        h = hashlib.sha256()
        state = self.param_set(name).state_dict()
        for key in sorted(state):
            h.update(key.encode())
            h.update(state[key].detach().cpu().numpy().tobytes())
        return h.hexdigest()

    # -- coding operations ---------------------------------------------------

    def iframe_code(self, x: torch.Tensor, mode: str) -> IFrameCode:
        _check_coded_dims(x)
        y = self.e_i(x)
        y_hat, bits, aux = self.coder_i(y, mode)
        recon = self.g_i(y_hat).clamp(0.0, 1.0)
        return IFrameCode(y_hat, recon, bits, aux)

    def flow_code(
        self,
        flow: torch.Tensor | None,
        mode: str,
        frames: torch.Tensor | None = None,
    ) -> FlowCode:
        if self.config.use_flow_predictor:
            if flow is None:
                raise ValueError("this config codes a predicted flow field")
            if not torch.isfinite(flow).all():
                raise ValueError("flow contains non-finite values")
            inp = flow
        else:
            if frames is None:
                raise ValueError("flow-from-frames config needs (current, previous) frames")
            inp = frames
        y = self.e_flow(inp)
        y_hat, bits, aux = self.coder_flow(y, mode)
        out = self.g_flow(y_hat)[..., : inp.shape[-2], : inp.shape[-1]]
        flow_hat = out[:, :2]
        sigma = self.config.sigma_max * torch.sigmoid(out[:, 2:3])
        return FlowCode(y_hat, flow_hat, sigma, bits, aux)

    def free_latent(self, warped_recon: torch.Tensor) -> torch.Tensor:
        """Real-valued conditioning latent; computable on both sides, 0 bits."""
        return self.e_i(warped_recon)

    def residual_code(self, residual: torch.Tensor, y_free: torch.Tensor | None,
                      mode: str) -> ResidualCode:
        u = self.e_res(residual)
        u_hat, bits, aux = self.coder_res(u, mode)
        if self.config.use_free_latent:
            if y_free is None:
                raise ValueError("this config conditions the residual on a free latent")
            if y_free.shape[-2:] != u_hat.shape[-2:]:
                raise ValueError(
                    f"free latent {tuple(y_free.shape[-2:])} does not align with "
                    f"coded residual latent {tuple(u_hat.shape[-2:])}")
            full = torch.cat([y_free, u_hat], dim=1)
        else:
            full = u_hat
        detail = self.g_res(full)
        return ResidualCode(full, u_hat, detail, bits, aux)

    def discriminate(self, x: torch.Tensor, latent: torch.Tensor | None,
                     which: str) -> torch.Tensor:
        if which == "d_i":
            net = self.d_i
        elif which == "d_p":
            net = self.d_p
        else:
            raise ValueError(f"unknown discriminator {which!r}")
        return net(x, latent if self.config.conditional_discriminator else None)


def _check_coded_dims(x: torch.Tensor) -> None:
    if x.shape[-1] % STRIDE or x.shape[-2] % STRIDE:
        raise ValueError(
            f"coded dims must be multiples of {STRIDE}, got {tuple(x.shape[-2:])}; "
            "pad the input first")


def save_checkpoint(path: str, model: VideoCodec, extra: dict | None = None) -> None:
    torch.save(
        {
            "format_version": CHECKPOINT_VERSION,
            "config": model.config.to_dict(),
            "state": model.state_dict(),
            "frozen": sorted(model.frozen),
            "extra": extra or {},
        },
        path,
    )


def load_checkpoint(path: str) -> tuple[VideoCodec, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('format_version')}")
    model = VideoCodec(CodecConfig.from_dict(payload["config"]))
    model.load_state_dict(payload["state"])
    model.freeze(*payload["frozen"])
    return model, payload["extra"]
