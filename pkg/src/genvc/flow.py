"""Pluggable flow predictors standing in for a frozen optical-flow network.

Predictors return the backward flow between two frames: warping the previous
frame by the returned field approximates the current frame.  They never
receive gradients and are never trained.
"""

from __future__ import annotations

from typing import Callable

import cv2
import numpy as np
import torch

SYNTHETIC_TRUTH = "synthetic_truth"
CLASSICAL = "classical_estimator"
EXTERNAL = "external"

_EXTERNAL_IMPL: Callable[[torch.Tensor, torch.Tensor], torch.Tensor] | None = None


class FlowPredictorUnavailable(RuntimeError):
    pass


def register_external(fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor] | None) -> None:
    """Install (or clear) the implementation behind the 'external' predictor id."""
    global _EXTERNAL_IMPL
    _EXTERNAL_IMPL = fn


def predict_flow(
    current: torch.Tensor,
    previous: torch.Tensor,
    predictor: str = CLASSICAL,
    gt_flow: torch.Tensor | None = None,
) -> torch.Tensor:
    """Backward flow from `current` to `previous`, shape (B, 2, H, W).

    `synthetic_truth` returns the ground-truth flow attached to generated
    clips; `classical_estimator` runs a frozen pyramidal estimator on the
    frames; `external` dispatches to a registered callable.
    """
    if current.shape != previous.shape:
        raise ValueError("frames must share dims")
    cur, batched = (current, True) if current.dim() == 4 else (current.unsqueeze(0), False)
    prev = previous if previous.dim() == 4 else previous.unsqueeze(0)

    if predictor == SYNTHETIC_TRUTH:
        if gt_flow is None:
            raise ValueError("synthetic_truth needs the clip's ground-truth flow")
        flow = gt_flow if gt_flow.dim() == 4 else gt_flow.unsqueeze(0)
        flow = flow.detach().to(cur.dtype)
    elif predictor == CLASSICAL:
        with torch.no_grad():
            flow = torch.stack([_farneback(cur[i], prev[i]) for i in range(cur.shape[0])])
        flow = flow.to(cur.dtype)
    elif predictor == EXTERNAL:
        if _EXTERNAL_IMPL is None:
            raise FlowPredictorUnavailable("no external flow predictor registered")
        with torch.no_grad():
            flow = _EXTERNAL_IMPL(cur, prev).detach()
    else:
        raise ValueError(f"unknown flow predictor {predictor!r}")

    if flow.shape[-2:] != cur.shape[-2:] or flow.shape[1] != 2:
        raise ValueError("predictor returned a flow with mismatched dims")
    return flow if batched else flow.squeeze(0)


def _farneback(current: torch.Tensor, previous: torch.Tensor) -> torch.Tensor:
    """Pyramidal dense flow on grayscale 8-bit copies of one frame pair."""
    cur = _to_gray_u8(current)
    prev = _to_gray_u8(previous)
    # prev(p) ~ next(p + flow(p)): passing (current, previous) yields the
    # backward field that warps the previous frame onto the current one
    flow = cv2.calcOpticalFlowFarneback(
        cur, prev, None,
        pyr_scale=0.5, levels=3, winsize=15,
        iterations=3, poly_n=5, poly_sigma=1.2, flags=0,
    )
    return torch.from_numpy(np.ascontiguousarray(flow.transpose(2, 0, 1)))


def _to_gray_u8(frame: torch.Tensor) -> np.ndarray:
    arr = frame.detach().cpu().numpy()
    if arr.shape[0] == 3:
        arr = 0.299 * arr[0] + 0.587 * arr[1] + 0.114 * arr[2]
    else:
        arr = arr[0]
    return np.clip(arr * 255.0, 0, 255).astype(np.uint8)
