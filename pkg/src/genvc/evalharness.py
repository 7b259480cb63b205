"""Evaluation: padding/bpp accounting, objective metrics (PSNR, MS-SSIM,
patch FID behind a pluggable embedding), the metric-vs-study "predicts?"
labeling, reconstruction export, and per-video bitrate matching.

bpp is always computed against unpadded dimensions; metrics are computed on
the exact exported frames.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy.linalg import sqrtm
from scipy.ndimage import gaussian_filter

PSNR_CAP_DB = 99.0
FID_PATCH_SIZE = 256

MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

LABEL_YES = "Yes"
LABEL_NO = "No"
LABEL_NO_APPROX = "No≈"


# ---------------------------------------------------------------------------
# padding
# ---------------------------------------------------------------------------

def pad_to_stride(frame: np.ndarray, stride: int = 16) -> tuple[np.ndarray, tuple[int, int]]:
    """Edge-replicate an (H, W, C) frame up to the next stride multiples.

    Returns the padded frame and the original (height, width) for crop_back.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    h, w = frame.shape[:2]
    ph = (stride - h % stride) % stride
    pw = (stride - w % stride) % stride
    padded = np.pad(frame, ((0, ph), (0, pw)) + ((0, 0),) * (frame.ndim - 2), mode="edge")
    return padded, (h, w)


def crop_back(frame: np.ndarray, dims: tuple[int, int]) -> np.ndarray:
    return frame[: dims[0], : dims[1]]


# ---------------------------------------------------------------------------
# PSNR / MS-SSIM
# ---------------------------------------------------------------------------

def _stack01(frames) -> np.ndarray:
    arr = np.asarray(frames, dtype=np.float64)
    if arr.dtype == np.float64 and arr.max() > 1.5:
        raise ValueError("expected frames in [0, 1]; got larger values")
    return arr


def psnr(recons, originals) -> float:
    """PSNR in dB over all frames on the 0-255 scale, capped for identical inputs."""
    a = _stack01(recons)
    b = _stack01(originals)
    if a.shape != b.shape:
        raise ValueError("frame stacks must share dims")
    mse = np.mean((255.0 * (a - b)) ** 2)
    if mse <= 0:
        return PSNR_CAP_DB
    return min(20.0 * math.log10(255.0 / math.sqrt(mse)), PSNR_CAP_DB)


def _ssim_components(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Mean SSIM and mean contrast-structure term of one grayscale pair."""
    c1 = (0.01 * 1.0) ** 2
    c2 = (0.03 * 1.0) ** 2
    mu_a = gaussian_filter(a, 1.5)
    mu_b = gaussian_filter(b, 1.5)
    var_a = gaussian_filter(a * a, 1.5) - mu_a**2
    var_b = gaussian_filter(b * b, 1.5) - mu_b**2
    cov = gaussian_filter(a * b, 1.5) - mu_a * mu_b
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    lum = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    return float((lum * cs).mean()), float(cs.mean())


def _downsample2(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
    x = x[:h, :w]
    return (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2]) / 4.0


def msssim(recons, originals) -> tuple[float, int]:
    """Multi-scale SSIM averaged over frames and channels.

    Uses the standard five scale weights; when frames are too small for all
    five scales the deepest usable scale count is used (weights renormalized)
    and returned alongside the value.
    """
    a = _stack01(recons)
    b = _stack01(originals)
    if a.shape != b.shape:
        raise ValueError("frame stacks must share dims")
    min_side = min(a.shape[1], a.shape[2])
    n_scales = min(len(MSSSIM_WEIGHTS), max(1, int(math.log2(min_side / 16)) + 1))
    weights = np.array(MSSSIM_WEIGHTS[:n_scales])
    weights /= weights.sum()

    per_frame = []
    for fa, fb in zip(a, b):
        per_channel = []
        for ch in range(fa.shape[-1]):
            xa, xb = fa[..., ch], fb[..., ch]
            cs_terms = []
            value = 1.0
            for scale in range(n_scales):
                ssim_full, cs = _ssim_components(xa, xb)
                if scale == n_scales - 1:
                    cs_terms.append(max(ssim_full, 0.0))
                else:
                    cs_terms.append(max(cs, 0.0))
                    xa, xb = _downsample2(xa), _downsample2(xb)
            value = float(np.prod(np.array(cs_terms) ** weights))
            per_channel.append(value)
        per_frame.append(np.mean(per_channel))
    return float(np.mean(per_frame)), n_scales


# ---------------------------------------------------------------------------
# patch FID behind a pluggable embedding
# ---------------------------------------------------------------------------

class RandomConvEmbedding:
    """Deterministic random-feature CNN embedding.

    Stands in for a pretrained feature extractor at desk scale; FID values
    are only comparable within a single embedding id.
    """

    def __init__(self, seed: int = 0, dim: int = 64):
        self.id = f"rand-conv-v1-s{seed}-d{dim}"
        gen = torch.Generator().manual_seed(seed)
        widths = (16, 32, dim)
        layers = []
        prev = 3
        for w in widths:
            conv = torch.nn.Conv2d(prev, w, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen)
                                  * (2.0 / math.sqrt(prev * 9)))
                conv.bias.zero_()
            layers += [conv, torch.nn.LeakyReLU(0.2)]
            prev = w
        self._net = torch.nn.Sequential(*layers).eval()
        for p in self._net.parameters():
            p.requires_grad_(False)

    def __call__(self, patches: np.ndarray) -> np.ndarray:
        """(N, P, P, 3) float patches in [0, 1] -> (N, D) features."""
        x = torch.from_numpy(np.ascontiguousarray(patches.transpose(0, 3, 1, 2))).float()
        with torch.no_grad():
            feats = self._net(x * 2 - 1)
        return feats.mean(dim=(2, 3)).numpy().astype(np.float64)


def extract_patches(frames, patch_size: int = FID_PATCH_SIZE) -> np.ndarray:
    """Non-overlapping square patches pooled over all frames, (N, P, P, C)."""
    arr = _stack01(frames)
    h, w = arr.shape[1:3]
    if h < patch_size or w < patch_size:
        raise ValueError(
            f"frames of {h}x{w} cannot yield {patch_size}x{patch_size} patches; "
            "use a reduced patch size (recorded in the metrics metadata)")
    patches = []
    for frame in arr:
        for i in range(h // patch_size):
            for j in range(w // patch_size):
                patches.append(frame[i * patch_size : (i + 1) * patch_size,
                                     j * patch_size : (j + 1) * patch_size])
    return np.stack(patches)


def frechet_distance(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    mu_a, mu_b = feats_a.mean(axis=0), feats_b.mean(axis=0)
    cov_a = np.cov(feats_a, rowvar=False)
    cov_b = np.cov(feats_b, rowvar=False)
    cross = sqrtm(cov_a @ cov_b)
    if np.iscomplexobj(cross):
        cross = cross.real
    return float(((mu_a - mu_b) ** 2).sum() + np.trace(cov_a + cov_b - 2 * cross))


def patch_fid(recons, originals, patch_size: int = FID_PATCH_SIZE,
              embedding=None) -> float:
    embedding = embedding or RandomConvEmbedding()
    return frechet_distance(
        embedding(extract_patches(recons, patch_size)),
        embedding(extract_patches(originals, patch_size)),
    )


@dataclass
class MetricsResult:
    psnr: float
    msssim: float
    fid256: float
    metadata: dict = field(default_factory=dict)


def metrics(recons, originals, patch_size: int = FID_PATCH_SIZE,
            embedding=None) -> MetricsResult:
    """PSNR + MS-SSIM + patch FID on exactly the frames given."""
    embedding = embedding or RandomConvEmbedding()
    ms_value, n_scales = msssim(recons, originals)
    return MetricsResult(
        psnr=psnr(recons, originals),
        msssim=ms_value,
        fid256=patch_fid(recons, originals, patch_size, embedding),
        metadata={
            "fid_patch_size": patch_size,
            "fid_embedding": embedding.id,
            "msssim_scales": n_scales,
        },
    )


# ---------------------------------------------------------------------------
# "predicts?" labeling
# ---------------------------------------------------------------------------

def predicts_label(value_ours: float, value_other: float, higher_better: bool,
                   ours_preferred: bool) -> str:
    """Does the metric predict the study outcome?

    Values within 1% of each other (relative to the larger magnitude) never
    predict; otherwise the label is Yes exactly when the metric ranks the
    study-preferred method better.
    """
    if abs(value_ours - value_other) <= 0.01 * max(abs(value_ours), abs(value_other)):
        return LABEL_NO_APPROX
    metric_prefers_ours = (value_ours > value_other) == higher_better
    return LABEL_YES if metric_prefers_ours == ours_preferred else LABEL_NO


# ---------------------------------------------------------------------------
# reconstruction export
# ---------------------------------------------------------------------------

def export_recons(frames_by_video: dict[str, np.ndarray], out_dir: str | Path,
                  method: str) -> Path:
    """Write `<method>/<video_id>/frame_%04d.png` trees of 8-bit PNGs."""
    root = Path(out_dir) / method
    for video_id, frames in frames_by_video.items():
        video_dir = root / video_id
        video_dir.mkdir(parents=True, exist_ok=True)
        arr = _stack01(frames)
        for i, frame in enumerate(arr, start=1):
            img = np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(img).save(video_dir / f"frame_{i:04d}.png")
    return root


def load_recons(method_dir: str | Path) -> dict[str, np.ndarray]:
    """Inverse of export_recons for one method folder."""
    method_dir = Path(method_dir)
    out = {}
    for video_dir in sorted(p for p in method_dir.iterdir() if p.is_dir()):
        frames = []
        for png in sorted(video_dir.glob("frame_*.png")):
            frames.append(np.asarray(Image.open(png).convert("RGB"), dtype=np.float64) / 255.0)
        if frames:
            out[video_dir.name] = np.stack(frames)
    if not out:
        raise FileNotFoundError(f"no video folders under {method_dir}")
    return out


# ---------------------------------------------------------------------------
# bitrate matching
# ---------------------------------------------------------------------------

@dataclass
class BitrateMatch:
    chosen: dict[str, str]           # video id -> variant id
    mean_reference_bpp: float
    mean_chosen_bpp: float
    deviation: float                 # (chosen - reference) / reference
    within_observed_band: bool       # at most ~3% smaller / ~24% bigger


def match_bitrates(reference_bpp: dict[str, float],
                   candidates: dict[str, dict[str, float]]) -> BitrateMatch:
    """Pick, per video, the candidate variant closest in bpp to the reference.

    Ties break toward the smaller bpp.  The aggregate report flags chosen
    sets whose mean deviates beyond the -3% / +24% band.
    """
    chosen = {}
    chosen_bpps = []
    for video, ref in reference_bpp.items():
        variants = candidates.get(video)
        if not variants:
            raise ValueError(f"no candidate variants for video {video!r}")
        # round the distance so float noise cannot mask a genuine tie
        best = min(variants.items(), key=lambda kv: (round(abs(kv[1] - ref), 12), kv[1]))
        chosen[video] = best[0]
        chosen_bpps.append(best[1])
    mean_ref = float(np.mean(list(reference_bpp.values())))
    mean_chosen = float(np.mean(chosen_bpps))
    deviation = (mean_chosen - mean_ref) / mean_ref
    return BitrateMatch(
        chosen=chosen,
        mean_reference_bpp=mean_ref,
        mean_chosen_bpp=mean_chosen,
        deviation=deviation,
        within_observed_band=(-0.03 <= deviation <= 0.24),
    )


# ---------------------------------------------------------------------------
# metrics CSV
# ---------------------------------------------------------------------------

METRICS_CSV_COLUMNS = ("video", "method", "bpp", "psnr", "msssim", "fid256")


def write_metrics_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=METRICS_CSV_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
