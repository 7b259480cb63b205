"""Training data: procedurally generated moving-texture clips with exact
ground-truth backward flow, plus ingestion of user-supplied frame folders.

Generated clips are a textured background drifting at a fractional velocity
with a few rigidly moving patches on top.  Frames are quantized to the 8-bit
grid (like real inputs); the stored flow maps each frame back onto its
predecessor.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .dssw import gaussian_blur, warp


@dataclass
class Clip:
    """frames: (T, 3, H, W) in [0, 1]; flows[t] is the backward flow of
    frame t+1 onto frame t, shape (T-1, 2, H, W), when ground truth exists."""

    frames: torch.Tensor
    flows: torch.Tensor | None = None

    def __len__(self) -> int:
        return self.frames.shape[0]


def _textured_canvas(rng: np.random.Generator, h: int, w: int) -> torch.Tensor:
    """Multi-octave noise texture, rich in mid-frequency grain, in [0, 1]."""
    canvas = torch.zeros(3, h, w, dtype=torch.float64)
    for std, amp in ((0.0, 0.5), (0.8, 1.2), (2.5, 1.2), (8.0, 1.2)):
        noise = torch.from_numpy(rng.standard_normal((3, h, w)))
        canvas += amp * (gaussian_blur(noise.unsqueeze(0), std).squeeze(0) if std else noise)
    lo = canvas.amin(dim=(1, 2), keepdim=True)
    hi = canvas.amax(dim=(1, 2), keepdim=True)
    return ((canvas - lo) / (hi - lo)).float()


def make_moving_texture_clip(
    rng: np.random.Generator,
    size: int = 64,
    n_frames: int = 12,
    n_patches: int = 2,
    max_bg_speed: float = 1.5,
    global_shift: tuple[float, float] | None = None,
) -> Clip:
    """One clip with known backward flow.

    `global_shift` pins the background velocity (and drops the patches),
    which makes the stored flow exactly that shift everywhere.
    """
    if global_shift is not None:
        bg_vel = np.asarray(global_shift, dtype=np.float64)
        n_patches = 0
    else:
        bg_vel = rng.uniform(-max_bg_speed, max_bg_speed, size=2)

    pad = int(np.ceil(n_frames * np.abs(bg_vel).max())) + 4
    canvas = _textured_canvas(rng, size + 2 * pad, size + 2 * pad)

    patches = []
    for _ in range(n_patches):
        ph, pw = int(rng.integers(12, 24)), int(rng.integers(12, 24))
        vel = rng.integers(-2, 3, size=2)  # integer velocities keep flow exact
        span_y = size - ph - abs(int(vel[1])) * (n_frames - 1) - 1
        span_x = size - pw - abs(int(vel[0])) * (n_frames - 1) - 1
        if span_y <= 1 or span_x <= 1:
            continue
        y0 = int(rng.integers(0, span_y)) + max(0, -int(vel[1])) * (n_frames - 1)
        x0 = int(rng.integers(0, span_x)) + max(0, -int(vel[0])) * (n_frames - 1)
        patches.append({
            "tex": _textured_canvas(rng, ph, pw),
            "pos": np.array([x0, y0], dtype=np.int64),
            "vel": vel.astype(np.int64),
        })

    frames = []
    flows = []
    for t in range(n_frames):
        offset = t * bg_vel
        flow = torch.zeros(2, size + 2 * pad, size + 2 * pad)
        flow[0] = float(offset[0])
        flow[1] = float(offset[1])
        frame = warp(canvas, flow, "bilinear")[:, pad : pad + size, pad : pad + size]
        frame = frame.contiguous()

        gt = torch.empty(2, size, size)
        gt[0] = float(bg_vel[0])
        gt[1] = float(bg_vel[1])
        for p in patches:
            x, y = p["pos"] + t * p["vel"]
            ph, pw = p["tex"].shape[1:]
            frame[:, y : y + ph, x : x + pw] = p["tex"]
            gt[0, y : y + ph, x : x + pw] = float(-p["vel"][0])
            gt[1, y : y + ph, x : x + pw] = float(-p["vel"][1])

        frames.append(torch.round(frame.clamp(0, 1) * 255.0) / 255.0)
        if t > 0:
            flows.append(gt)

    return Clip(torch.stack(frames), torch.stack(flows))


def synthetic_dataset(
    n_clips: int,
    size: int = 64,
    n_frames: int = 12,
    seed: int = 0,
) -> list[Clip]:
    rng = np.random.default_rng(seed)
    return [make_moving_texture_clip(rng, size=size, n_frames=n_frames) for _ in range(n_clips)]


def sample_clip_batch(
    clips: list[Clip],
    batch_size: int,
    n_frames: int,
    rng: np.random.Generator,
) -> tuple[torch.Tensor, torch.Tensor | None]:
    """Random contiguous subsequences: frames (B, T, 3, H, W) and, when every
    sampled clip has ground truth, flows (B, T-1, 2, H, W)."""
    frames, flows = [], []
    for _ in range(batch_size):
        clip = clips[int(rng.integers(0, len(clips)))]
        if len(clip) < n_frames:
            raise ValueError(f"clip with {len(clip)} frames is shorter than T={n_frames}")
        start = int(rng.integers(0, len(clip) - n_frames + 1))
        frames.append(clip.frames[start : start + n_frames])
        if clip.flows is not None:
            flows.append(clip.flows[start : start + n_frames - 1])
    stacked_flows = torch.stack(flows) if len(flows) == batch_size else None
    return torch.stack(frames), stacked_flows


def sample_frame_batch(clips: list[Clip], batch_size: int, rng: np.random.Generator) -> torch.Tensor:
    """Random single frames (B, 3, H, W) for I-branch training."""
    out = []
    for _ in range(batch_size):
        clip = clips[int(rng.integers(0, len(clips)))]
        out.append(clip.frames[int(rng.integers(0, len(clip)))])
    return torch.stack(out)


# ---------------------------------------------------------------------------
# on-disk clips: one directory per clip, numbered PNGs inside
# ---------------------------------------------------------------------------

_FRAME_RE = re.compile(r"(\d+)\.png$")


def save_clip_pngs(clip: Clip, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i in range(len(clip)):
        arr = (clip.frames[i].permute(1, 2, 0).numpy() * 255.0).round().astype(np.uint8)
        Image.fromarray(arr).save(directory / f"frame_{i + 1:04d}.png")
    if clip.flows is not None:
        np.save(directory / "flows.npy", clip.flows.numpy())


def load_clip_dir(directory: str | Path) -> Clip:
    directory = Path(directory)
    paths = sorted(
        (p for p in directory.iterdir() if _FRAME_RE.search(p.name)),
        key=lambda p: int(_FRAME_RE.search(p.name).group(1)),
    )
    if not paths:
        raise FileNotFoundError(f"no numbered PNGs in {directory}")
    frames = []
    for p in paths:
        arr = np.asarray(Image.open(p).convert("RGB"), dtype=np.float32) / 255.0
        frames.append(torch.from_numpy(arr).permute(2, 0, 1))
    flows_path = directory / "flows.npy"
    flows = torch.from_numpy(np.load(flows_path)) if flows_path.exists() else None
    return Clip(torch.stack(frames), flows)


def load_dataset_dir(root: str | Path) -> list[Clip]:
    root = Path(root)
    clip_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not clip_dirs:
        raise FileNotFoundError(f"no clip directories under {root}")
    return [load_clip_dir(d) for d in clip_dirs]
