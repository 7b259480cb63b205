"""Generative neural video codec: detail synthesis via conditional
adversarial training, detail propagation via decoupled scale-space warping,
plus rate control, bitstream, evaluation, and 2AFC study tooling."""

__version__ = "0.1.0"
