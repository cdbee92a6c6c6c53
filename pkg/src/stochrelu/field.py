"""Prime-field arithmetic with signed encoding and fixed-point quantization.

Field elements are integers in ``[0, p)``.  Signed values use the usual
two-range convention: ``[0, half)`` holds non-negative values and
``[half, p)`` holds negative ones, where ``half = (p - 1) // 2``.

Scalar helpers work on Python ints; the ``*_array`` helpers work on int64
numpy arrays holding canonical residues.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

DEFAULT_PRIME = 2138816513
QUANT_BITS = 15


class FieldError(ValueError):
    """Raised for values outside the legal signed range."""


class QuantizationError(FieldError):
    """Raised when a quantized magnitude exceeds the 15-bit cap."""


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin, exact for n < 3.3e24."""
    if n < 2:
        return False
    small = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)
    for q in small:
        if n % q == 0:
            return n == q
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in small:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


@dataclass(frozen=True)
class FieldParams:
    p: int = DEFAULT_PRIME
    m: int = field(init=False)
    half: int = field(init=False)

    def __post_init__(self):
        if not 2 < self.p < 2**63:
            raise FieldError(f"modulus {self.p} outside (2, 2^63)")
        if not is_prime(self.p):
            raise FieldError(f"modulus {self.p} is not prime")
        object.__setattr__(self, "m", math.ceil(math.log2(self.p)))
        object.__setattr__(self, "half", (self.p - 1) // 2)


DEFAULT_PARAMS = FieldParams()


@dataclass(frozen=True)
class FixedPointScale:
    frac_bits: int
    bound: int = 2**QUANT_BITS

    @property
    def max_product(self) -> int:
        return (self.bound - 1) ** 2

    def check(self, params: FieldParams) -> None:
        """Raise unless every product of two capped values decodes correctly.

        The full 15-bit cap misses this on the default prime by a sliver
        (``(2^15 - 1)^2`` is about 0.4% above ``half``); only products of two
        near-maximal values are affected.
        """
        if self.frac_bits < 0:
            raise FieldError("negative fractional bits")
        if self.max_product >= params.half:
            raise FieldError(f"products up to {self.max_product} exceed the signed range {params.half}")


@dataclass(frozen=True)
class FieldElement:
    value: int
    params: FieldParams = DEFAULT_PARAMS

    def __post_init__(self):
        if not 0 <= self.value < self.params.p:
            raise FieldError(f"{self.value} is not a residue mod {self.params.p}")

    def _other(self, other) -> int:
        if isinstance(other, FieldElement):
            if other.params.p != self.params.p:
                raise FieldError("mixing elements of different fields")
            return other.value
        return int(other) % self.params.p

    def __add__(self, other):
        return FieldElement((self.value + self._other(other)) % self.params.p, self.params)

    __radd__ = __add__

    def __sub__(self, other):
        return FieldElement((self.value - self._other(other)) % self.params.p, self.params)

    def __rsub__(self, other):
        return FieldElement((self._other(other) - self.value) % self.params.p, self.params)

    def __mul__(self, other):
        return FieldElement(self.value * self._other(other) % self.params.p, self.params)

    __rmul__ = __mul__

    def __neg__(self):
        return FieldElement(-self.value % self.params.p, self.params)

    def __int__(self):
        return self.value

    def signed(self) -> int:
        return decode(self, self.params)

    def to_bytes(self) -> bytes:
        return struct.pack("<Q", self.value)

    @classmethod
    def from_bytes(cls, data: bytes, params: FieldParams = DEFAULT_PARAMS) -> FieldElement:
        (value,) = struct.unpack("<Q", data)
        return cls(value, params)


def _value(e) -> int:
    return e.value if isinstance(e, FieldElement) else int(e)


def encode(v: int, params: FieldParams = DEFAULT_PARAMS) -> FieldElement:
    """Map a signed integer in ``[-half, half)`` to its field residue."""
    v = int(v)
    if not -params.half <= v < params.half:
        raise FieldError(f"{v} outside signed range [-{params.half}, {params.half})")
    return FieldElement(v % params.p, params)


def decode(e, params: FieldParams = DEFAULT_PARAMS) -> int:
    value = _value(e)
    return value if value < params.half else value - params.p


def add(a, b, params: FieldParams = DEFAULT_PARAMS) -> FieldElement:
    return FieldElement((_value(a) + _value(b)) % params.p, params)


def sub(a, b, params: FieldParams = DEFAULT_PARAMS) -> FieldElement:
    return FieldElement((_value(a) - _value(b)) % params.p, params)


def mul(a, b, params: FieldParams = DEFAULT_PARAMS) -> FieldElement:
    return FieldElement(_value(a) * _value(b) % params.p, params)


def neg(a, params: FieldParams = DEFAULT_PARAMS) -> FieldElement:
    return FieldElement(-_value(a) % params.p, params)


def is_nonnegative(e, params: FieldParams = DEFAULT_PARAMS) -> bool:
    return _value(e) < params.half


def round_half_away(x: float) -> int:
    r = math.floor(abs(x) + 0.5)
    return r if x >= 0 else -r


def quantize(v: float, scale: FixedPointScale, params: FieldParams = DEFAULT_PARAMS) -> FieldElement:
    q = round_half_away(v * 2**scale.frac_bits)
    if abs(q) >= scale.bound:
        raise QuantizationError(f"{v} quantizes to {q}, beyond the {scale.bound} cap")
    return encode(q, params)


def dequantize(e, scale: FixedPointScale, params: FieldParams = DEFAULT_PARAMS) -> float:
    return decode(e, params) / 2**scale.frac_bits


# -- vectorised helpers ------------------------------------------------------


def encode_array(v, params: FieldParams = DEFAULT_PARAMS) -> np.ndarray:
    v = np.asarray(v, dtype=np.int64)
    if v.size and (v.min() < -params.half or v.max() >= params.half):
        raise FieldError("values outside the signed range")
    return np.mod(v, params.p)


def decode_array(e, params: FieldParams = DEFAULT_PARAMS) -> np.ndarray:
    e = np.asarray(e, dtype=np.int64)
    return np.where(e < params.half, e, e - params.p)


def quantize_array(v, scale: FixedPointScale, params: FieldParams = DEFAULT_PARAMS) -> np.ndarray:
    x = np.asarray(v, dtype=np.float64) * 2.0**scale.frac_bits
    q = (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)
    if q.size and np.abs(q).max() >= scale.bound:
        raise QuantizationError("quantized magnitude beyond the 15-bit cap")
    return encode_array(q, params)


def rescale_signed(v, shift: int) -> np.ndarray:
    """Divide signed integers by ``2**shift``, rounding half away from zero."""
    v = np.asarray(v, dtype=np.int64)
    if shift == 0:
        return v
    mag = (np.abs(v) + (1 << (shift - 1))) >> shift
    return np.where(v < 0, -mag, mag)


def matmul_mod(a, b, params: FieldParams = DEFAULT_PARAMS) -> np.ndarray:
    """``a @ b mod p`` for canonical residues, exact for any p < 2^63."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    p = params.p
    inner = a.shape[-1] if a.ndim else 1
    if p < 2**32 and inner < 2**15:
        # 16-bit limbs of b keep every partial sum below 2^63
        lo = b & 0xFFFF
        hi = b >> 16
        r_lo = np.mod(a @ lo, p)
        r_hi = np.mod(a @ hi, p)
        return np.mod(r_hi * 65536 % p + r_lo, p)
    out = np.asarray(a.astype(object) @ b.astype(object)) % p
    return out.astype(np.int64)


def uniform_array(rng: np.random.Generator, size, params: FieldParams = DEFAULT_PARAMS) -> np.ndarray:
    return rng.integers(0, params.p, size=size, dtype=np.int64)
