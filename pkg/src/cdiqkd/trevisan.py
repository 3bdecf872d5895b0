"""Trevisan's extractor: weak designs, a concrete 1-bit extractor and the
seed-length / error calculator.

The 1-bit extractor is the list-decodable code C = Reed-Solomon o Hadamard.
For a subseed of ``t`` bits, let ``w = ceil(t/2)``.  The message is cut into
``w``-bit chunks c_0, c_1, ... read as coefficients of a polynomial over
GF(2^w).  The first ``t - w`` subseed bits pick an evaluation point alpha, the
last ``w`` bits pick a Hadamard mask beta, and the output bit is
<p(alpha), beta> over GF(2).  The codeword has length 2^t, the subseed read
MSB-first is the codeword index.

Because the code is linear, every codeword position is a fixed parity check
of the message; we precompute those masks once per (n, t) and then each
output bit is one popcount.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .bitcore import BitString

C1 = 3 * 2 ** 0.25
C2 = 1 / 8
LN2 = math.log(2)
DEFAULT_DESIGN_CAP = 1 << 20

# x^w + ... irreducible over GF(2); index = w
IRREDUCIBLE = {
    1: 0b11,
    2: 0b111,
    3: 0b1011,
    4: 0b10011,
    5: 0b100101,
    6: 0b1000011,
    7: 0b10000011,
    8: 0b100011011,
    9: 0b1000010001,
    10: 0b10000001001,
    11: 0b100000000101,
    12: 0b1000001010011,
}


class DesignTooLarge(ValueError):
    pass


def gf_mul(a: int, b: int, w: int) -> int:
    poly = IRREDUCIBLE[w]
    r = 0
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if a >> w:
            a ^= poly
    return r


@dataclass(frozen=True)
class WeakDesign:
    sets: tuple[tuple[int, ...], ...]
    d: int
    t: int

    @property
    def m(self) -> int:
        return len(self.sets)

    def __post_init__(self):
        for s in self.sets:
            if len(s) != self.t:
                raise ValueError(f"set {s} does not have size {self.t}")
            if any(not 0 <= e < self.d for e in s):
                raise ValueError(f"set {s} has elements outside [0, {self.d})")

    def overlap_sums(self) -> list[int]:
        """sum_{j<i} 2^{|S_i & S_j|} for every i."""
        as_sets = [set(s) for s in self.sets]
        return [sum(2 ** len(as_sets[i] & as_sets[j]) for j in range(i)) for i in range(self.m)]

    def is_weak_design(self, r: float = 1.0) -> bool:
        bound = r * (self.m - 1)
        return all(s <= bound for s in self.overlap_sums())

    def to_json(self) -> str:
        return json.dumps({"t": self.t, "m": self.m, "d": self.d, "sets": [list(s) for s in self.sets]})

    @classmethod
    def from_json(cls, text: str) -> "WeakDesign":
        obj = json.loads(text)
        design = cls(tuple(tuple(s) for s in obj["sets"]), d=obj["d"], t=obj["t"])
        if design.m != obj["m"]:
            raise ValueError("header m does not match the number of sets")
        return design


def design_seed_length(t: int, m: int) -> int:
    return t * math.ceil(t / LN2) * math.ceil(math.log2(4 * m))


def build_weak_design(t: int, m: int, cap: int = DEFAULT_DESIGN_CAP) -> WeakDesign:
    """Weak (t,1)-design of m sets over d = t*ceil(t/ln2)*ceil(log 4m) positions.

    [d] is cut into ceil(log 4m) levels of t blocks with b = ceil(t/ln2)
    positions each.  A set takes one position per block of a single level, so
    sets on different levels are disjoint.  Within a level, positions are fixed
    block by block by the method of conditional expectations, which keeps
    sum 2^{|S_i & S_j|} over earlier same-level sets below (1 + 1/b)^t <= 2
    times their count.  A set goes to the first level where the total overlap
    sum stays within m - 1.
    """
    if t < 1 or m < 1:
        raise ValueError("t and m must be positive")
    d = design_seed_length(t, m)
    if d > cap:
        raise DesignTooLarge(f"weak design needs d = {d} seed bits, above the cap {cap}")
    return _build_weak_design(t, m)


@lru_cache(maxsize=64)
def _build_weak_design(t: int, m: int) -> WeakDesign:
    d = design_seed_length(t, m)
    b = math.ceil(t / LN2)
    levels = math.ceil(math.log2(4 * m))
    members = [np.zeros((m, t), dtype=np.int64) for _ in range(levels)]
    counts = [0] * levels
    sets = []
    for i in range(m):
        for lvl in range(levels):
            c = counts[lvl]
            choice, in_level = _greedy_set(members[lvl][:c], t, b)
            if (i - c) + in_level <= m - 1:
                members[lvl][c] = choice
                counts[lvl] += 1
                offset = lvl * t * b
                sets.append(tuple(int(offset + j * b + e) for j, e in enumerate(choice)))
                break
        else:
            raise RuntimeError(f"could not place set {i}; design construction failed")
    return WeakDesign(tuple(sets), d=d, t=t)


def _greedy_set(prior: np.ndarray, t: int, b: int) -> tuple[np.ndarray, float]:
    # weights[s] = 2^{matches of prior set s with the positions fixed so far}
    weights = np.ones(len(prior))
    choice = np.zeros(t, dtype=np.int64)
    for j in range(t):
        if len(prior):
            hits = np.bincount(prior[:, j], weights=weights, minlength=b)
            e = int(np.argmin(hits))
            weights = weights * np.where(prior[:, j] == e, 2.0, 1.0)
        else:
            e = 0
        choice[j] = e
    return choice, float(weights.sum())


def toy_design(t: int, m: int, d: int) -> WeakDesign:
    """Cyclic design for structural runs with a seed too short for full-sized
    designs: set i reads positions (i + j) mod d, j < t, in that order.

    No overlap guarantee; callers can inspect ``is_weak_design``.
    """
    if d == 0:
        if t != 0:
            raise ValueError("a zero-length seed only supports t = 0")
        return WeakDesign(tuple(() for _ in range(m)), d=0, t=0)
    if not 1 <= t <= d:
        raise ValueError("toy design needs 1 <= t <= d")
    return WeakDesign(tuple(tuple((i + j) % d for j in range(t)) for i in range(m)), d=d, t=t)


def code_shape(n: int, t: int) -> tuple[int, int, int]:
    """(w, alpha_bits, chunks) for the RS o Hadamard code on n-bit messages."""
    w = (t + 1) // 2
    return w, t - w, (math.ceil(n / w) if w else 0)


@lru_cache(maxsize=256)
def position_masks(n: int, t: int) -> tuple[int, ...]:
    """For each codeword position, the n-bit parity mask (as int, MSB = first
    message bit) such that C(x)[pos] = parity(x & mask)."""
    if t > 2 * max(IRREDUCIBLE):
        raise ValueError(f"subseed length {t} exceeds the supported field sizes")
    if t == 0:
        return (0,)
    w, abits, chunks = code_shape(n, t)
    masks = []
    for pos in range(1 << t):
        alpha = pos >> w
        beta = pos & ((1 << w) - 1)
        mask = 0
        apow = 1
        for i in range(chunks):
            # chunk i contributes <c_i * alpha^i, beta>; bit k of c_i is x^k in the field
            chunk_mask = 0
            for k in range(w):
                if (gf_mul(1 << k, apow, w) & beta).bit_count() & 1:
                    chunk_mask |= 1 << k
            # chunk integer is MSB-first: message bit i*w + (w-1-k) is coefficient of x^k
            for k in range(w):
                if chunk_mask >> k & 1:
                    idx = i * w + (w - 1 - k)
                    if idx < n:
                        mask |= 1 << (n - 1 - idx)
            apow = gf_mul(apow, alpha, w)
        masks.append(mask)
    return tuple(masks)


def codeword(x: BitString, t: int) -> BitString:
    masks = position_masks(len(x), t)
    return BitString.from_bits((x.value & mk).bit_count() & 1 for mk in masks)


def evaluate_codeword_bit(x: BitString, subseed: BitString) -> int:
    """C(x)[subseed] straight from the definition: Horner evaluation of the
    message polynomial at alpha, then the Hadamard inner product with beta."""
    t = len(subseed)
    if t == 0:
        return 0
    w, abits, chunks = code_shape(len(x), t)
    alpha = subseed.value >> w
    beta = subseed.value & ((1 << w) - 1)
    padded = x + BitString.zeros(chunks * w - len(x))
    acc = 0
    for i in reversed(range(chunks)):
        acc = gf_mul(acc, alpha, w) ^ padded[i * w:(i + 1) * w].value
    return (acc & beta).bit_count() & 1


def one_bit_extract(x: BitString, subseed: BitString) -> int:
    t = len(subseed)
    masks = position_masks(len(x), t)
    return (x.value & masks[subseed.value]).bit_count() & 1


def relative_distance_bound(n: int, t: int) -> float:
    """Lower bound on the relative Hamming distance of the code.

    A nonzero polynomial of degree D vanishes on at most D of the 2^{t-w}
    evaluation points, and a nonzero field element meets exactly half of the
    Hadamard masks.
    """
    w, abits, chunks = code_shape(n, t)
    if w == 0:
        return 0.0
    points = 1 << abits
    degree = chunks - 1
    return max(0.0, (1 - degree / points) / 2)


def list_size_bound(n: int, t: int, eps: float) -> float:
    """Binary Johnson bound on codewords within relative radius 1/2 - eps.

    With relative distance 1/2 - zeta the list is at most
    (1/2 - zeta) / (2 eps^2 - zeta) when 2 eps^2 > zeta; infinite otherwise.
    """
    zeta = 0.5 - relative_distance_bound(n, t)
    denom = 2 * eps * eps - zeta
    return (0.5 - zeta) / denom if denom > 0 else math.inf


def one_bit_guarantee(n: int, t: int, eps: float) -> tuple[float, float]:
    """(min-entropy needed, error) of the 1-bit extractor from an (eps, L) code:
    a (log L + log(1/(2 eps)), 2 eps)-strong extractor."""
    L = list_size_bound(n, t, eps)
    return math.log2(L) + math.log2(1 / (2 * eps)), 2 * eps


def extract(x: BitString, seed: BitString, design: WeakDesign, params: "ExtractorParams | None" = None) -> BitString:
    if len(seed) != design.d:
        raise ValueError(f"seed has {len(seed)} bits, design needs {design.d}")
    if params is not None:
        if len(x) != params.n:
            raise ValueError(f"message has {len(x)} bits, parameters say n = {params.n}")
        if design.m != params.m:
            raise ValueError(f"design has {design.m} sets, parameters say m = {params.m}")
    masks = position_masks(len(x), design.t)
    sv = seed.value
    d = design.d
    xv = x.value
    out = 0
    for s in design.sets:
        pos = 0
        for e in s:
            pos = (pos << 1) | ((sv >> (d - 1 - e)) & 1)
        out = (out << 1) | ((xv & masks[pos]).bit_count() & 1)
    return BitString(out, design.m)


@dataclass(frozen=True)
class ExtractorParams:
    n: int
    k: float
    m: int
    d: float
    log2_eps_T: float
    mode: str = "asymptotic"
    c1: float = C1
    c2: float = C2

    def __post_init__(self):
        if not 0 < self.m < self.k <= self.n:
            raise ValueError(f"need 0 < m < k <= n, got n={self.n}, k={self.k}, m={self.m}")


def log2_eps_T(k: float, m: float) -> float:
    """log2 of 3 m 2^{-(k-m)/8 + 1/4}."""
    return math.log2(3 * m) - (k - m) / 8 + 0.25


def compute_params(n: int, k: float, m: int, mode: str = "asymptotic") -> ExtractorParams:
    """Seed length and error of the m-bit extractor for an n-bit, k-source.

    ``asymptotic`` returns (7 + k - m + log n)^2 log(4m)/ln 2 rounded up to an
    integer.  ``exact`` keeps the design's ceilings: t = ceil(7 + k - m + log n)
    and d = t ceil(t/ln 2) ceil(log 4m).
    """
    if not 0 < m < k:
        raise ValueError(f"output length m={m} must satisfy 0 < m < k={k}")
    if k > n:
        raise ValueError(f"min-entropy k={k} exceeds message length n={n}")
    tt = 7 + k - m + math.log2(n)
    if mode == "asymptotic":
        d = math.ceil(tt * tt * math.log2(4 * m) / LN2)
    elif mode == "exact":
        t = math.ceil(tt)
        d = design_seed_length(t, m)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return ExtractorParams(n=n, k=k, m=m, d=d, log2_eps_T=log2_eps_T(k, m), mode=mode)


def strong_error_bound(k: float, m: int) -> float:
    """3 m 2^{(2 + m - k)/8}: the smallest error the m-bit extractor can claim."""
    return 3 * m * 2 ** ((2 + m - k) / 8)
