"""Block-floating-point and pass-through compression of per-PRB IQ blocks.

A block is the 24 signed 16-bit scalars of one PRB (12 resource elements,
interleaved I/Q).  BFP shares one 4-bit exponent per block and packs fixed
width two's-complement mantissas big-endian, exponent byte first (low nibble).
Array variants operate on (n, 24) batches; the engines use those on whole
symbols at a time.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

SCALARS_PER_PRB = 24
INT16_MIN = -32768
INT16_MAX = 32767
_MAX_EXPONENT = 15  # exponent travels in a 4-bit field


class CompMeth(IntEnum):
    NONE = 0
    BFP = 1


@dataclass(frozen=True)
class CompressedPrb:
    comp_meth: CompMeth
    iq_width: int
    exponent: int
    mantissas: tuple[int, ...]


def _check_params(meth: CompMeth, width: int):
    if meth not in (CompMeth.NONE, CompMeth.BFP):
        raise ValueError(f"unsupported compression method {meth}")
    if meth == CompMeth.NONE and width != 16:
        raise ValueError("pass-through compression requires iq_width 16")
    if not 1 <= width <= 16:
        raise ValueError(f"iq_width {width} out of range [1, 16]")


def prb_block_size(meth: CompMeth, width: int) -> int:
    """Wire size in bytes of one compressed PRB."""
    _check_params(meth, width)
    if meth == CompMeth.NONE:
        return 48
    return 1 + (SCALARS_PER_PRB * width + 7) // 8


def compress_blocks(values: np.ndarray, meth: CompMeth, width: int):
    """Compress an (n, 24) int batch; returns (exponents (n,), mantissas (n, 24)).

    BFP exponent: e = max(0, bits_required(block peak) - (width - 1)), capped
    at the 4-bit field, where bits_required counts two's-complement magnitude
    bits (so -2^k needs k bits and +2^k needs k+1); mantissas round half away
    from zero and clamp into the signed width.  Raising the exponent on
    post-rounding overflow is deliberately not done, so e stays a pure
    function of the pre-rounding peak and re-compressing a reconstruction
    reproduces the exponent exactly.
    """
    _check_params(meth, width)
    values = np.asarray(values, dtype=np.int64)
    if values.ndim != 2 or values.shape[1] != SCALARS_PER_PRB:
        raise ValueError("expected an (n, 24) array of scalars")
    if values.min(initial=0) < INT16_MIN or values.max(initial=0) > INT16_MAX:
        raise ValueError("scalars exceed the signed 16-bit range")
    n = values.shape[0]
    if meth == CompMeth.NONE:
        return np.zeros(n, dtype=np.int64), values.copy()
    mag = np.where(values >= 0, values, -values - 1)
    # frexp exponent == minimal magnitude-bit count, exact for small ints
    bits = np.frexp(mag.max(axis=1).astype(np.float64))[1]
    exp = np.clip(bits - (width - 1), 0, _MAX_EXPONENT)
    half = np.where(exp > 0, 1 << np.maximum(exp - 1, 0), 0)
    mag = (np.abs(values) + half[:, None]) >> exp[:, None]
    mant = np.where(values < 0, -mag, mag)
    lo, hi = -(1 << (width - 1)), (1 << (width - 1)) - 1
    return exp, np.clip(mant, lo, hi)


def decompress_blocks(exponents: np.ndarray, mantissas: np.ndarray, meth: CompMeth) -> np.ndarray:
    """Inverse of :func:`compress_blocks`; output saturates to int16 range."""
    mantissas = np.asarray(mantissas, dtype=np.int64)
    if meth == CompMeth.NONE:
        return mantissas.copy()
    exponents = np.asarray(exponents, dtype=np.int64)
    out = mantissas << exponents[:, None]
    return np.clip(out, INT16_MIN, INT16_MAX)


def compress(block, meth: CompMeth, width: int) -> CompressedPrb:
    """Compress a single 24-scalar block."""
    values = np.asarray(block, dtype=np.int64).reshape(1, SCALARS_PER_PRB)
    exp, mant = compress_blocks(values, meth, width)
    return CompressedPrb(meth, width, int(exp[0]), tuple(int(m) for m in mant[0]))


def decompress(prb: CompressedPrb):
    """Decompress a single block back to 24 signed 16-bit scalars."""
    mant = np.asarray(prb.mantissas, dtype=np.int64).reshape(1, SCALARS_PER_PRB)
    out = decompress_blocks(np.asarray([prb.exponent]), mant, prb.comp_meth)
    return tuple(int(v) for v in out[0])


FIXED_SCALE = 1 << 15


def float_to_fixed(x: np.ndarray) -> np.ndarray:
    """Scale [-1, 1) floats to signed 16-bit, half-away rounding, saturating."""
    x = np.asarray(x, dtype=np.float64)
    scaled = np.copysign(np.floor(np.abs(x) * FIXED_SCALE + 0.5), x)
    return np.clip(scaled, INT16_MIN, INT16_MAX).astype(np.int64)


def fixed_to_float(v: np.ndarray) -> np.ndarray:
    return np.asarray(v, dtype=np.float64) / FIXED_SCALE


def complex_to_scalars(values: np.ndarray) -> np.ndarray:
    """(..., 12) complex resource elements to (..., 24) interleaved I/Q."""
    values = np.asarray(values)
    out = np.empty(values.shape[:-1] + (SCALARS_PER_PRB,), dtype=np.float64)
    out[..., 0::2] = values.real
    out[..., 1::2] = values.imag
    return out


def scalars_to_complex(scalars: np.ndarray) -> np.ndarray:
    """(..., 24) interleaved I/Q scalars to (..., 12) complex values."""
    scalars = np.asarray(scalars, dtype=np.float64)
    return scalars[..., 0::2] + 1j * scalars[..., 1::2]


def pack_prb_blocks(
    exponents: np.ndarray, mantissas: np.ndarray, meth: CompMeth, width: int
) -> bytes:
    """Serialize compressed blocks to their wire form, one row per PRB."""
    _check_params(meth, width)
    mantissas = np.asarray(mantissas, dtype=np.int64)
    n = mantissas.shape[0]
    if meth == CompMeth.NONE:
        return mantissas.astype(">i2").tobytes()
    u = (mantissas & ((1 << width) - 1)).astype(np.uint32)
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint32)
    bits = ((u[:, :, None] >> shifts) & 1).astype(np.uint8)
    packed = np.packbits(bits.reshape(n, SCALARS_PER_PRB * width), axis=1)
    exp_col = np.asarray(exponents, dtype=np.uint8).reshape(n, 1) & 0x0F
    return np.hstack([exp_col, packed]).tobytes()


def unpack_prb_blocks(data: bytes, n: int, meth: CompMeth, width: int):
    """Parse n wire blocks; returns (exponents, mantissas)."""
    _check_params(meth, width)
    size = prb_block_size(meth, width)
    if len(data) != n * size:
        raise ValueError(f"expected {n * size} payload bytes, got {len(data)}")
    if meth == CompMeth.NONE:
        values = np.frombuffer(data, dtype=">i2").astype(np.int64).reshape(n, SCALARS_PER_PRB)
        return np.zeros(n, dtype=np.int64), values
    rows = np.frombuffer(data, dtype=np.uint8).reshape(n, size)
    exp = (rows[:, 0] & 0x0F).astype(np.int64)
    bits = np.unpackbits(rows[:, 1:], axis=1)[:, : SCALARS_PER_PRB * width]
    bits = bits.reshape(n, SCALARS_PER_PRB, width).astype(np.int64)
    shifts = np.arange(width - 1, -1, -1, dtype=np.int64)
    u = (bits << shifts).sum(axis=2)
    mant = np.where(u >= 1 << (width - 1), u - (1 << width), u)
    return exp, mant
