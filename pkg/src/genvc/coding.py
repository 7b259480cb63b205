"""Latent quantization, entropy models, range coding, and the .gvc container.

The coded path is: quantize a latent grid to integers, build per-element
discrete probability tables (discretized Gaussians under hyperprior-predicted
mean/scale), then either estimate the rate from the tables or actually code
the symbols with a byte-oriented range coder.  ``serialize_container`` /
``parse_container`` define the on-disk ``.gvc`` format.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np
import torch

MAGIC = b"GVC1"
FORMAT_VERSION = 1

SYMBOL_MIN = -64
SYMBOL_MAX = 63
TABLE_TOTAL = 1 << 16
SCALE_FLOOR = 0.01
ESCAPE_TAIL_BITS = 16

I_FRAME_SEGMENTS = 2   # hyper, main
P_FRAME_SEGMENTS = 4   # flow-hyper, flow-main, res-hyper, res-main


class ContainerError(ValueError):
    """Malformed .gvc data: bad magic/version, truncated payload, bad field."""


class ModelMismatchError(ValueError):
    """Range-coded payload failed its checksum (wrong entropy model or corruption)."""


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------

def quantize(y: torch.Tensor, mode: str = "round") -> torch.Tensor:
    """Latent quantization.

    ``round`` snaps to the nearest integer with a straight-through gradient;
    ``noise`` adds uniform(-0.5, 0.5) per element (training-time rate proxy).
    """
    if mode == "round":
        return y + (torch.round(y) - y).detach()
    if mode == "noise":
        return y + (torch.rand_like(y) - 0.5)
    raise ValueError(f"unknown quantization mode {mode!r}")


def gaussian_bits(y: torch.Tensor, mean: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    """Differentiable rate of `y` under a discretized Gaussian, in bits.

    p(y) = CDF(y + 0.5) - CDF(y - 0.5) with the scale floored; this is the
    continuous counterpart of the integer tables used for actual coding.
    """
    scale = scale.clamp(min=SCALE_FLOOR)
    z_hi = (y + 0.5 - mean) / scale
    z_lo = (y - 0.5 - mean) / scale
    p = 0.5 * (torch.erf(z_hi / math.sqrt(2)) - torch.erf(z_lo / math.sqrt(2)))
    return -torch.log2(p.clamp(min=1e-12)).sum()


# ---------------------------------------------------------------------------
# entropy model (per-element integer frequency tables)
# ---------------------------------------------------------------------------

@dataclass
class EntropyModel:
    """Per-element discrete distributions over a bounded symbol alphabet.

    ``freqs`` has shape (n_elements, alphabet + 2): column 0 and the last
    column are escape buckets for symbols outside [lo, hi] (coded with a
    uniform 16-bit tail).  Escape frequencies of 0 mean the model covers the
    alphabet exactly and overflow symbols are an error.  Rows sum to
    ``TABLE_TOTAL``, so probabilities are ``freq / TABLE_TOTAL``.
    """

    lo: int
    hi: int
    freqs: np.ndarray

    def __post_init__(self) -> None:
        n_cols = self.hi - self.lo + 3
        if self.freqs.ndim != 2 or self.freqs.shape[1] != n_cols:
            raise ValueError(f"freqs must be (n, {n_cols})")
        if (self.freqs.sum(axis=1) != TABLE_TOTAL).any():
            raise ValueError("each row must sum to TABLE_TOTAL")
        self.cum = np.zeros((self.freqs.shape[0], n_cols + 1), dtype=np.uint32)
        np.cumsum(self.freqs, axis=1, out=self.cum[:, 1:])

    @property
    def n_elements(self) -> int:
        return self.freqs.shape[0]

    def columns(self, symbols: np.ndarray) -> np.ndarray:
        """Table column of each symbol (escapes map to the end buckets)."""
        cols = symbols.astype(np.int64) - self.lo + 1
        cols[symbols < self.lo] = 0
        cols[symbols > self.hi] = self.hi - self.lo + 2
        return cols

    @classmethod
    def uniform(cls, n_elements: int, n_symbols: int, lo: int = 0) -> "EntropyModel":
        if TABLE_TOTAL % n_symbols != 0:
            raise ValueError("n_symbols must divide the table total")
        freqs = np.zeros((n_elements, n_symbols + 2), dtype=np.uint32)
        freqs[:, 1:-1] = TABLE_TOTAL // n_symbols
        return cls(lo, lo + n_symbols - 1, freqs)

    @classmethod
    def from_gaussian(cls, mean: np.ndarray, scale: np.ndarray) -> "EntropyModel":
        """Discretized-Gaussian tables under per-element mean/scale.

        Interior buckets get CDF(s+0.5) - CDF(s-0.5); the Gaussian tail mass
        beyond the alphabet goes to the escape buckets.  Every bucket keeps a
        frequency of at least 1 so no coded symbol has zero probability.
        """
        from scipy.special import ndtr

        mean = np.asarray(mean, dtype=np.float64).reshape(-1)
        scale = np.clip(np.asarray(scale, dtype=np.float64).reshape(-1), SCALE_FLOOR, None)
        edges = np.arange(SYMBOL_MIN, SYMBOL_MAX + 2) - 0.5  # bucket boundaries
        cdf = ndtr((edges[None, :] - mean[:, None]) / scale[:, None])
        probs = np.empty((mean.size, SYMBOL_MAX - SYMBOL_MIN + 3))
        probs[:, 0] = cdf[:, 0]
        probs[:, 1:-1] = np.diff(cdf, axis=1)
        probs[:, -1] = 1.0 - cdf[:, -1]

        n_buckets = probs.shape[1]
        budget = TABLE_TOTAL - n_buckets
        freqs = np.floor(probs * budget).astype(np.uint32) + 1
        # hand the rounding remainder to each row's largest bucket
        deficit = TABLE_TOTAL - freqs.sum(axis=1)
        freqs[np.arange(freqs.shape[0]), probs.argmax(axis=1)] += deficit.astype(np.uint32)
        return cls(SYMBOL_MIN, SYMBOL_MAX, freqs)


def rate_estimate(symbols: np.ndarray, model: EntropyModel) -> float:
    """Model bits for a symbol stream: sum of -log2 p per element.

    Escape-coded symbols additionally pay the uniform 16-bit tail.
    """
    symbols = np.asarray(symbols).reshape(-1)
    if symbols.size != model.n_elements:
        raise ValueError("symbol count does not match model")
    cols = model.columns(symbols)
    f = model.freqs[np.arange(symbols.size), cols].astype(np.float64)
    if (f == 0).any():
        raise ValueError("zero-probability symbol under this model")
    bits = float(-np.log2(f / TABLE_TOTAL).sum())
    n_escapes = int((cols == 0).sum() + (cols == model.freqs.shape[1] - 1).sum())
    return bits + n_escapes * ESCAPE_TAIL_BITS


# ---------------------------------------------------------------------------
# range coder (byte-renormalizing, 32-bit)
# ---------------------------------------------------------------------------

_PRECISION = 32
_TOP = 1 << (_PRECISION - 8)
_BOTTOM = 1 << (_PRECISION - 16)
_MASK = (1 << _PRECISION) - 1


class RangeEncoder:
    """Single-use streaming encoder; symbols are (cum, freq, total) triples."""

    def __init__(self) -> None:
        self._low = 0
        self._range = _MASK
        self._out = bytearray()

    def encode(self, cum: int, freq: int, total: int) -> None:
        r = self._range // total
        self._low = (self._low + cum * r) & _MASK
        self._range = r * freq
        while True:
            if (self._low ^ (self._low + self._range)) < _TOP:
                pass
            elif self._range < _BOTTOM:
                self._range = (-self._low) & (_BOTTOM - 1)
            else:
                break
            self._out.append((self._low >> (_PRECISION - 8)) & 0xFF)
            self._low = (self._low << 8) & _MASK
            self._range = (self._range << 8) & _MASK

    def finish(self) -> bytes:
        for _ in range(_PRECISION // 8):
            self._out.append((self._low >> (_PRECISION - 8)) & 0xFF)
            self._low = (self._low << 8) & _MASK
        return bytes(self._out)


class RangeDecoder:
    """Single-use streaming decoder mirroring :class:`RangeEncoder`."""

    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0
        self._low = 0
        self._range = _MASK
        self._code = 0
        for _ in range(_PRECISION // 8):
            self._code = ((self._code << 8) | self._next_byte()) & _MASK

    def _next_byte(self) -> int:
        b = self._data[self._pos] if self._pos < len(self._data) else 0
        self._pos += 1
        return b

    def decode_target(self, total: int) -> int:
        self._r = self._range // total
        return min((self._code - self._low) // self._r, total - 1)

    def advance(self, cum: int, freq: int) -> None:
        self._low = (self._low + cum * self._r) & _MASK
        self._range = self._r * freq
        while True:
            if (self._low ^ (self._low + self._range)) < _TOP:
                pass
            elif self._range < _BOTTOM:
                self._range = (-self._low) & (_BOTTOM - 1)
            else:
                break
            self._code = ((self._code << 8) | self._next_byte()) & _MASK
            self._low = (self._low << 8) & _MASK
            self._range = (self._range << 8) & _MASK


def range_encode(symbols: np.ndarray, model: EntropyModel) -> bytes:
    """Losslessly code a symbol stream under per-element tables.

    The payload embeds a CRC of the symbols so decoding under a mismatched
    model fails loudly instead of silently corrupting.
    """
    symbols = np.asarray(symbols, dtype=np.int64).reshape(-1)
    if symbols.size != model.n_elements:
        raise ValueError("symbol count does not match model")
    cols = model.columns(symbols)
    f = model.freqs[np.arange(symbols.size), cols]
    if (f == 0).any():
        raise ValueError("zero-probability symbol under this model")

    enc = RangeEncoder()
    esc_hi_col = model.freqs.shape[1] - 1
    for i in range(symbols.size):
        col = cols[i]
        enc.encode(int(model.cum[i, col]), int(model.freqs[i, col]), TABLE_TOTAL)
        if col == 0 or col == esc_hi_col:
            offset = (model.lo - 1 - symbols[i]) if col == 0 else (symbols[i] - model.hi - 1)
            if not 0 <= offset < (1 << ESCAPE_TAIL_BITS):
                raise ValueError(f"symbol {symbols[i]} outside the escape tail range")
            enc.encode((int(offset) >> 8) & 0xFF, 1, 256)
            enc.encode(int(offset) & 0xFF, 1, 256)
    crc = zlib.crc32(symbols.astype("<i4").tobytes()) & 0xFFFFFFFF
    return struct.pack("<I", crc) + enc.finish()


def range_decode(data: bytes, model: EntropyModel) -> np.ndarray:
    """Inverse of :func:`range_encode`; raises ModelMismatchError on checksum failure."""
    if len(data) < 4:
        raise ContainerError("range-coded payload too short")
    (crc_expected,) = struct.unpack("<I", data[:4])
    dec = RangeDecoder(data[4:])
    esc_hi_col = model.freqs.shape[1] - 1
    out = np.empty(model.n_elements, dtype=np.int64)
    for i in range(model.n_elements):
        target = dec.decode_target(TABLE_TOTAL)
        col = int(np.searchsorted(model.cum[i], target, side="right")) - 1
        dec.advance(int(model.cum[i, col]), int(model.freqs[i, col]))
        if col == 0 or col == esc_hi_col:
            hi_byte = dec.decode_target(256)
            dec.advance(hi_byte, 1)
            lo_byte = dec.decode_target(256)
            dec.advance(lo_byte, 1)
            offset = (hi_byte << 8) | lo_byte
            out[i] = (model.lo - 1 - offset) if col == 0 else (model.hi + 1 + offset)
        else:
            out[i] = model.lo + col - 1
    if zlib.crc32(out.astype("<i4").tobytes()) & 0xFFFFFFFF != crc_expected:
        raise ModelMismatchError("checksum mismatch: wrong entropy model or corrupt payload")
    return out


# ---------------------------------------------------------------------------
# .gvc container
# ---------------------------------------------------------------------------

@dataclass
class CodedFrame:
    kind: str  # "I" or "P"
    segments: list[bytes]

    def __post_init__(self) -> None:
        expected = I_FRAME_SEGMENTS if self.kind == "I" else P_FRAME_SEGMENTS
        if self.kind not in ("I", "P"):
            raise ValueError(f"frame kind must be 'I' or 'P', got {self.kind!r}")
        if len(self.segments) != expected:
            raise ValueError(f"{self.kind}-frame needs {expected} segments")


@dataclass
class BitstreamContainer:
    width: int   # unpadded
    height: int  # unpadded
    frames: list[CodedFrame]

    @property
    def payload_bits(self) -> int:
        return 8 * sum(len(seg) for frame in self.frames for seg in frame.segments)

    @property
    def bpp(self) -> float:
        return self.payload_bits / (len(self.frames) * self.width * self.height)


def serialize_container(container: BitstreamContainer) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<BHHH", FORMAT_VERSION, container.width, container.height,
                       len(container.frames))
    for frame in container.frames:
        out += b"I" if frame.kind == "I" else b"P"
        for seg in frame.segments:
            out += struct.pack("<I", len(seg))
            out += seg
    return bytes(out)


def parse_container(data: bytes) -> BitstreamContainer:
    if len(data) < 11:
        raise ContainerError("data shorter than the container header")
    if data[:4] != MAGIC:
        raise ContainerError(f"bad magic {data[:4]!r}")
    version, width, height, n_frames = struct.unpack("<BHHH", data[4:11])
    if version != FORMAT_VERSION:
        raise ContainerError(f"unsupported container version {version}")
    pos = 11
    frames = []
    for _ in range(n_frames):
        if pos >= len(data):
            raise ContainerError("truncated container: missing frame tag")
        kind = chr(data[pos])
        pos += 1
        if kind not in ("I", "P"):
            raise ContainerError(f"unknown frame tag {kind!r}")
        n_segments = I_FRAME_SEGMENTS if kind == "I" else P_FRAME_SEGMENTS
        segments = []
        for _ in range(n_segments):
            if pos + 4 > len(data):
                raise ContainerError("truncated container: missing segment length")
            (length,) = struct.unpack("<I", data[pos : pos + 4])
            pos += 4
            if pos + length > len(data):
                raise ContainerError("truncated container: segment payload cut short")
            segments.append(data[pos : pos + length])
            pos += length
        frames.append(CodedFrame(kind, segments))
    if pos != len(data):
        raise ContainerError(f"{len(data) - pos} trailing bytes after the last frame")
    return BitstreamContainer(width, height, frames)
