"""Bit strings, explicit classical-quantum sources and brute-force entropy oracles.

Everything here is immutable and pure.  ``BitString`` is the currency of the
whole pipeline; ``IntervalDecoder`` turns a finite bit string into biased and
uniform draws by arithmetic decoding, which is how every protocol in this
package consumes its seed.
"""

from __future__ import annotations

import math
import struct
from collections import defaultdict
from dataclasses import dataclass
from functools import reduce
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence

NORM_TOL = 1e-12
IDENTITY_TOL = 1e-9


class BitString:
    """Fixed-length bit sequence, most significant (first) bit leftmost.

    Stored as a Python int plus a length so that XOR, masking and parity are
    single big-int operations.
    """

    __slots__ = ("_value", "_length")

    def __init__(self, value: int = 0, length: int = 0):
        if length < 0:
            raise ValueError("length must be non-negative")
        if value < 0 or value >> length:
            raise ValueError(f"value {value} does not fit in {length} bits")
        self._value = value
        self._length = length

    @classmethod
    def from_str(cls, text: str) -> "BitString":
        text = text.strip()
        if any(c not in "01" for c in text):
            raise ValueError("bit string may only contain '0' and '1'")
        return cls(int(text, 2) if text else 0, len(text))

    @classmethod
    def from_bits(cls, bits: Iterable[int]) -> "BitString":
        value = 0
        length = 0
        for b in bits:
            if b not in (0, 1):
                raise ValueError(f"not a bit: {b!r}")
            value = (value << 1) | int(b)
            length += 1
        return cls(value, length)

    @classmethod
    def zeros(cls, length: int) -> "BitString":
        return cls(0, length)

    @property
    def value(self) -> int:
        return self._value

    def __len__(self) -> int:
        return self._length

    def __iter__(self):
        n = self._length
        v = self._value
        for i in range(n - 1, -1, -1):
            yield (v >> i) & 1

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            start, stop, step = idx.indices(self._length)
            if step == 1:
                width = max(0, stop - start)
                shift = self._length - start - width
                return BitString((self._value >> shift) & ((1 << width) - 1), width)
            return BitString.from_bits(self[i] for i in range(start, stop, step))
        if idx < 0:
            idx += self._length
        if not 0 <= idx < self._length:
            raise IndexError("bit index out of range")
        return (self._value >> (self._length - 1 - idx)) & 1

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitString):
            return NotImplemented
        return self._length == other._length and self._value == other._value

    def __hash__(self) -> int:
        return hash((self._value, self._length))

    def __xor__(self, other: "BitString") -> "BitString":
        if len(self) != len(other):
            raise ValueError(f"cannot XOR bit strings of length {len(self)} and {len(other)}")
        return BitString(self._value ^ other._value, self._length)

    def __add__(self, other: "BitString") -> "BitString":
        return BitString((self._value << other._length) | other._value, self._length + other._length)

    def __repr__(self) -> str:
        if self._length <= 64:
            return f"BitString('{self.to_str()}')"
        return f"BitString(<{self._length} bits>)"

    def to_str(self) -> str:
        return format(self._value, f"0{self._length}b") if self._length else ""

    def to_list(self) -> list[int]:
        return list(self)

    def weight(self) -> int:
        return self._value.bit_count()

    def to_packed(self) -> bytes:
        """Pack MSB-first, zero-padded to a byte boundary, with an 8-byte
        little-endian bit count appended as trailer."""
        pad = (-self._length) % 8
        nbytes = (self._length + pad) // 8
        body = (self._value << pad).to_bytes(nbytes, "big") if nbytes else b""
        return body + struct.pack("<Q", self._length)

    @classmethod
    def from_packed(cls, data: bytes) -> "BitString":
        if len(data) < 8:
            raise ValueError("packed bit string is missing its 8-byte length trailer")
        (length,) = struct.unpack("<Q", data[-8:])
        body = data[:-8]
        if len(body) != (length + 7) // 8:
            raise ValueError(f"trailer says {length} bits but body has {len(body)} bytes")
        pad = (-length) % 8
        value = int.from_bytes(body, "big") >> pad if body else 0
        return cls(value, length)


def read_bits_file(path) -> BitString:
    """Load a ``.bits`` (ASCII) or ``.bin`` (packed) file."""
    path = Path(path)
    if path.suffix == ".bin":
        return BitString.from_packed(path.read_bytes())
    return BitString.from_str(path.read_text())


def write_bits_file(path, bits: BitString) -> None:
    path = Path(path)
    if path.suffix == ".bin":
        path.write_bytes(bits.to_packed())
    else:
        path.write_text(bits.to_str() + "\n")


def xor_fold(parts: Sequence[BitString]) -> BitString:
    if not parts:
        raise ValueError("xor_fold needs at least one part")
    length = len(parts[0])
    for i, p in enumerate(parts):
        if len(p) != length:
            raise ValueError(f"part {i} has length {len(p)}, expected {length}")
    return reduce(lambda a, b: a ^ b, parts)


@dataclass(frozen=True)
class CQSource:
    """Explicit joint distribution of a message ``x`` and classical side info ``e``."""

    outcomes: tuple[tuple[BitString, Hashable, float], ...]

    def __post_init__(self):
        outcomes = tuple((x, e, float(p)) for x, e, p in self.outcomes)
        object.__setattr__(self, "outcomes", outcomes)
        if not outcomes:
            raise ValueError("a source needs at least one outcome")
        n = len(outcomes[0][0])
        total = 0.0
        for x, _, p in outcomes:
            if len(x) != n:
                raise ValueError("all messages in a source must share one length")
            if p < 0:
                raise ValueError(f"negative probability {p}")
            total += p
        if abs(total - 1.0) > NORM_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")

    @property
    def n(self) -> int:
        return len(self.outcomes[0][0])

    @classmethod
    def uniform(cls, n: int) -> "CQSource":
        p = 2.0 ** -n
        return cls(tuple((BitString(v, n), None, p) for v in range(1 << n)))

    @classmethod
    def flat(cls, support: Iterable[BitString]) -> "CQSource":
        support = list(support)
        p = 1.0 / len(support)
        return cls(tuple((x, None, p) for x in support))

    def joint(self) -> dict[tuple[BitString, Hashable], float]:
        acc: dict = defaultdict(float)
        for x, e, p in self.outcomes:
            acc[(x, e)] += p
        return dict(acc)

    def support_size(self) -> int:
        return len({x for x, _, p in self.outcomes if p > 0})


@dataclass(frozen=True)
class EntropyEstimate:
    p_guess: float
    h_min: float

    def __post_init__(self):
        if not 0 < self.p_guess <= 1 + IDENTITY_TOL:
            raise ValueError(f"guessing probability {self.p_guess} outside (0, 1]")


def guessing_probability(source: CQSource) -> float:
    """Optimal classical guessing probability sum_e p(e) max_x p(x|e)."""
    best: dict = defaultdict(float)
    for (x, e), p in source.joint().items():
        best[e] = max(best[e], p)
    return min(1.0, math.fsum(best.values()))


def min_entropy(source: CQSource) -> EntropyEstimate:
    pg = guessing_probability(source)
    return EntropyEstimate(p_guess=pg, h_min=max(0.0, -math.log2(pg)))


def distance_to_uniform(dist, m: int | None = None) -> float:
    """Total variation distance between an m-bit distribution and uniform.

    ``dist`` is either a sequence of 2**m probabilities indexed by the integer
    value of the string, or a mapping BitString -> probability (missing strings
    have probability 0; ``m`` is then taken from the keys unless given).
    """
    if isinstance(dist, Mapping):
        if m is None:
            m = len(next(iter(dist)))
        probs = [0.0] * (1 << m)
        for z, p in dist.items():
            probs[z.value if isinstance(z, BitString) else int(z)] += p
    else:
        probs = list(dist)
        m = int(round(math.log2(len(probs)))) if m is None else m
        if len(probs) != 1 << m:
            raise ValueError("sequence distribution must have 2**m entries")
    total = math.fsum(probs)
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"distribution sums to {total!r}")
    u = 2.0 ** -m
    return 0.5 * math.fsum(abs(p - u) for p in probs)


class SeedExhausted(RuntimeError):
    def __init__(self, consumed: int, available: int, required: int | None = None):
        self.consumed = consumed
        self.available = available
        self.required = required
        msg = f"seed exhausted after {consumed} of {available} bits"
        if required is not None:
            msg += f"; this schedule needs about {required} bits"
        super().__init__(msg)


class IntervalDecoder:
    """Arithmetic decoder reading a bit string as the binary fraction U in [0, 1).

    The current interval is [lo, lo + w) / 2**exp.  A draw splits it at
    lo + floor(w * cum_j / 2**scale_bits), so the pieces tile the interval
    exactly and each has width within one unit of its ideal share; ``w`` is
    kept above 2**(scale_bits + GUARD_BITS) so the relative distortion is below
    2**-GUARD_BITS.  Seed bits are read only as needed to decide the piece
    containing U.  A Bernoulli(q) draw therefore costs about h(q) bits on
    average, and a uniform draw over 2**j values costs j bits.
    """

    GUARD_BITS = 32

    def __init__(self, bits: BitString, required_hint: int | None = None):
        self._bits = bits
        self._pos = 0
        self._u = 0
        self._lo = 0
        self._w = 1
        self._exp = 0
        self.required_hint = required_hint

    @property
    def consumed(self) -> int:
        return self._pos

    @property
    def available(self) -> int:
        return len(self._bits)

    def _read(self) -> None:
        if self._pos >= len(self._bits):
            raise SeedExhausted(self._pos, len(self._bits), self.required_hint)
        self._u = (self._u << 1) | self._bits[self._pos]
        self._pos += 1

    def draw(self, weights: Sequence[int], scale_bits: int) -> int:
        if sum(weights) != 1 << scale_bits or any(c < 0 for c in weights):
            raise ValueError("weights must be non-negative and sum to 2**scale_bits")
        grow = scale_bits + self.GUARD_BITS + 1 - self._w.bit_length()
        if grow > 0:
            self._lo <<= grow
            self._w <<= grow
            self._exp += grow
        bounds = [self._lo]
        acc = 0
        for c in weights:
            acc += c
            bounds.append(self._lo + ((self._w * acc) >> scale_bits))
        exp = self._exp
        while True:
            # U lies in [u, u + 1) / 2**pos; compare at a common exponent f
            f = max(exp, self._pos)
            u_lo = self._u << (f - self._pos)
            u_hi = (self._u + 1) << (f - self._pos)
            sh = f - exp
            for j, c in enumerate(weights):
                if c == 0:
                    continue
                lo_j, hi_j = bounds[j] << sh, bounds[j + 1] << sh
                if lo_j <= u_lo and u_hi <= hi_j:
                    self._lo = bounds[j]
                    self._w = bounds[j + 1] - bounds[j]
                    return j
                if lo_j > u_lo:
                    break
            self._read()

    def bernoulli(self, q_fixed: int, scale_bits: int = 32) -> int:
        """1 with probability q_fixed / 2**scale_bits."""
        return self.draw([(1 << scale_bits) - q_fixed, q_fixed], scale_bits)

    def uniform(self, nbits: int) -> int:
        return self.draw([1] * (1 << nbits), nbits)


def fixed_point(q: float, scale_bits: int = 32) -> int:
    if not 0 <= q <= 1:
        raise ValueError(f"probability {q} outside [0, 1]")
    return int(round(q * (1 << scale_bits)))


def binary_entropy(q: float) -> float:
    if q <= 0 or q >= 1:
        return 0.0
    return -q * math.log2(q) - (1 - q) * math.log2(1 - q)


def xor_distribution(parts: Sequence[Mapping[BitString, float]]) -> dict[BitString, float]:
    """Distribution of the XOR of independent explicit distributions."""
    if not parts:
        raise ValueError("need at least one distribution")
    acc = dict(parts[0])
    for dist in parts[1:]:
        nxt: dict = defaultdict(float)
        for a, pa in acc.items():
            for b, pb in dist.items():
                nxt[a ^ b] += pa * pb
        acc = dict(nxt)
    return acc
