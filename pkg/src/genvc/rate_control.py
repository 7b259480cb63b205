"""Adaptive proportional rate control.

A single scalar, the bitrate weight lambda_R, is steered in log2 space so the
measured mini-batch bpp tracks a target.  The target itself follows a simple
schedule: a +0.5 bpp bonus for the first 20% of training, then the plain
target.  Separate controller instances drive the I-branch (target 0.4) and
the P-branch (targets like 0.05 / 0.10 / 0.15).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable


@dataclass
class ControllerState:
    log2_lambda: float = 1.0
    gain: float = 1e-3
    eps: float = 1e-9
    target_bpp: float = 0.05
    warmup_bonus: float = 0.5
    warmup_fraction: float = 0.2
    step: int = 0
    total_steps: int = 0

    def __post_init__(self) -> None:
        if self.gain <= 0:
            raise ValueError("gain must be positive")

    @property
    def lambda_rate(self) -> float:
        return 2.0**self.log2_lambda

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "log2_lambda", "gain", "eps", "target_bpp",
            "warmup_bonus", "warmup_fraction", "step", "total_steps",
        )}

    @classmethod
    def from_dict(cls, d: dict) -> "ControllerState":
        return cls(**d)


def target_at(step: int, total_steps: int, state: ControllerState) -> float:
    """Scheduled target bpp: +warmup_bonus while step < warmup_fraction * total."""
    if step < state.warmup_fraction * total_steps:
        return state.target_bpp + state.warmup_bonus
    return state.target_bpp


def update(state: ControllerState, measured_bpp: float) -> ControllerState:
    """One proportional correction from the measured mini-batch bpp.

    The error is the log2 bitrate ratio, so lambda_R stays strictly positive
    and the fixed point sits exactly at the scheduled target.
    """
    if measured_bpp < 0:
        raise ValueError("measured bpp must be nonnegative")
    target = target_at(state.step, state.total_steps, state)
    error = math.log2(measured_bpp + state.eps) - math.log2(target + state.eps)
    state.log2_lambda += state.gain * error
    state.step += 1
    return state


def simulate_plant(
    plant: Callable[[float], float],
    steps: int,
    state: ControllerState,
) -> list[tuple[float, float]]:
    """Closed-loop trajectory of (lambda_R, bpp) against a lambda->bpp map.

    Verification harness: the plant stands in for a training run whose
    bitrate responds monotonically (decreasing) to the rate weight.
    """
    state.total_steps = steps
    trajectory = []
    for _ in range(steps):
        bpp = plant(state.lambda_rate)
        trajectory.append((state.lambda_rate, bpp))
        update(state, bpp)
    return trajectory
