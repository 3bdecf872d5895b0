"""One-shot and unbounded GHZ randomness expansion, plus the expansion error
calculator.

Seed consumption schedule ``ivl-v1``: the seed is read as a binary fraction by
an arithmetic decoder.  Each round draws the round type g ~ Bernoulli(q) with
q fixed to 32-bit precision; a game round then draws its input uniformly from
{111, 100, 010, 001} (two bits).  A round costs about h(q) + 2q seed bits.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

from .bitcore import BitString, IntervalDecoder, SeedExhausted, binary_entropy, fixed_point
from .ghz_device import GAME_INPUTS, GENERATING_INPUT, Device, DeviceUnresponsive, GhzInput, ghz_win
from .trevisan import build_weak_design, design_seed_length, extract

SCHEDULE_VERSION = "ivl-v1"
ALPHA = 120931
BETA = 31328
Q_BITS = 32


class DegenerateConfigWarning(UserWarning):
    pass


class ScheduleInfeasible(ValueError):
    pass


@dataclass(frozen=True)
class ExpansionConfig:
    N: int
    eta: float
    q: float

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("output length N must be at least 1")
        if not 0 < self.eta < 0.5:
            raise ValueError("error tolerance eta must lie in (0, 1/2)")
        if not 0 <= self.q <= 1:
            raise ValueError("test probability q must lie in [0, 1]")

    @property
    def threshold(self) -> float:
        return self.eta * self.q * self.N

    @property
    def max_failures(self) -> int:
        # F > eta q N  <=>  F > floor(eta q N) for integer F; absorb float noise
        return math.floor(self.threshold + 1e-9)


@dataclass(frozen=True)
class Round:
    index: int
    g: int
    input: tuple[int, int, int]
    output: tuple[int, int, int]
    win: bool | None
    recorded: int


@dataclass
class ExpansionOutcome:
    status: str
    output: BitString | None
    failures: int
    rounds: list = field(default_factory=list)
    threshold: float = 0.0
    seed_consumed: int = 0
    reason: str = ""
    step: int | None = None
    steps: list = field(default_factory=list)

    @property
    def succeeded(self) -> bool:
        return self.status == "Succeed"

    def to_jsonl(self) -> str:
        lines = [
            json.dumps({"index": r.index, "g": r.g, "input": list(r.input), "output": list(r.output), "win": r.win})
            for r in self.rounds
        ]
        if not self.succeeded:
            lines.append(json.dumps({"abort": True, "failures": self.failures, "threshold": self.threshold,
                                     "reason": self.reason, "step": self.step}))
        return "\n".join(lines) + ("\n" if lines else "")


def expected_seed_cost(N: int, q: float) -> float:
    return N * (binary_entropy(q) + 2 * q)


def seed_budget(N: int, q: float) -> int:
    """Seed bits a one-shot run of N rounds should be given: the expected cost
    plus a margin of six standard deviations and a constant for decoder lag."""
    sd = 0.0
    if 0 < q < 1:
        # per-round cost is 2 + log2(1/q) on game rounds, log2(1/(1-q)) otherwise
        sd = math.sqrt(N * q * (1 - q)) * abs(2 + math.log2((1 - q) / q))
    return math.ceil(expected_seed_cost(N, q) + 6 * sd + 32)


def round_schedule(seed_bits: BitString, config: ExpansionConfig) -> list[tuple[int, tuple[int, int, int]]]:
    """The (g, input) sequence ``one_shot_expand`` will play for this seed,
    decoded without touching a device."""
    decoder = IntervalDecoder(seed_bits, required_hint=seed_budget(config.N, config.q))
    qf = fixed_point(config.q, Q_BITS)
    plan = []
    for _ in range(config.N):
        g = decoder.bernoulli(qf, Q_BITS)
        plan.append((g, GAME_INPUTS[decoder.uniform(2)] if g else GENERATING_INPUT))
    return plan


def one_shot_expand(seed_bits: BitString, device: Device, config: ExpansionConfig) -> ExpansionOutcome:
    if config.q == 0:
        warnings.warn("q = 0: no game rounds are played, the output is untested", DegenerateConfigWarning)
    decoder = IntervalDecoder(seed_bits, required_hint=seed_budget(config.N, config.q))
    qf = fixed_point(config.q, Q_BITS)
    rounds: list[Round] = []
    failures = 0
    for i in range(config.N):
        g = decoder.bernoulli(qf, Q_BITS)
        inp = GAME_INPUTS[decoder.uniform(2)] if g else GENERATING_INPUT
        try:
            out = device.query(GhzInput(*inp))
        except DeviceUnresponsive as exc:
            device.mark_aborted()
            return ExpansionOutcome("Abort", None, failures, rounds, config.threshold,
                                    decoder.consumed, reason=f"device unresponsive: {exc}")
        if g:
            win = ghz_win(GhzInput(*inp), out)
            recorded = 0 if win else 1
            failures += not win
        else:
            win = None
            recorded = out.a1
        rounds.append(Round(i, g, inp, out.bits, win, recorded))
    if failures > config.max_failures:
        device.mark_aborted()
        return ExpansionOutcome("Abort", None, failures, rounds, config.threshold, decoder.consumed,
                                reason="too many failures")
    bits = BitString.from_bits(r.recorded for r in rounds)
    return ExpansionOutcome("Succeed", bits, failures, rounds, config.threshold, decoder.consumed)


@dataclass(frozen=True)
class ExpansionSchedule:
    """Plan for cross-fed expansion.

    Each step grows the string by ``growth``; the device runs ceil(raw_ratio *
    next_len) rounds so the extractor has an entropy gap, and the current
    string is split into an extractor seed reserve (exactly the weak design's
    d for (t, next_len)) and the device input (everything else).
    """

    eta: float = 0.1
    q: float = 0.01
    growth: float = 2.0
    raw_ratio: float = 1.5
    t: int = 4

    def plan(self, seed_len: int, target_len: int) -> list[dict]:
        steps = []
        cur = seed_len
        while cur < target_len:
            nxt = max(cur + 1, math.ceil(self.growth * cur))
            N = math.ceil(self.raw_ratio * nxt)
            if N <= nxt:
                N = nxt + 1
            d = design_seed_length(self.t, nxt)
            need = seed_budget(N, self.q)
            if d + need > cur:
                raise ScheduleInfeasible(
                    f"step {len(steps) + 1}: |X_j| = {cur} bits cannot cover an extractor seed of {d} "
                    f"bits plus about {need} device-input bits for {N} rounds"
                )
            steps.append({"in_len": cur, "reserve": d, "rounds": N, "out_len": nxt})
            cur = nxt
        return steps


def unbounded_expand(seed: BitString, device_a: Device, device_b: Device, target_len: int,
                     schedule: ExpansionSchedule | None = None, exhaustion_aborts: bool = False) -> ExpansionOutcome:
    """Cross-fed expansion up to ``target_len`` bits.

    Feeds after the first step are produced by the protocol itself, so running
    out of feed there means the previous output was far from uniform and the
    run aborts.  ``exhaustion_aborts`` extends that to the first step, for
    callers whose seed is itself an extractor output.
    """
    if device_a is device_b:
        raise ValueError("unbounded expansion needs two distinct devices")
    schedule = schedule or ExpansionSchedule()
    if target_len <= len(seed):
        return ExpansionOutcome("Succeed", seed[:target_len], 0)
    plan = schedule.plan(len(seed), target_len)
    x = seed
    log = []
    failures = 0
    for j, step in enumerate(plan, start=1):
        device = device_a if j % 2 == 1 else device_b
        reserve = x[: step["reserve"]]
        feed = x[step["reserve"]:]
        cfg = ExpansionConfig(N=step["rounds"], eta=schedule.eta, q=schedule.q)
        try:
            out = one_shot_expand(feed, device, cfg)
        except SeedExhausted as exc:
            if j == 1 and not exhaustion_aborts:
                raise
            device.mark_aborted()
            return ExpansionOutcome("Abort", None, failures, reason=f"feed exhausted: {exc}", step=j, steps=log)
        out.step = j
        log.append(out)
        failures += out.failures
        if not out.succeeded:
            return ExpansionOutcome("Abort", None, failures, out.rounds, out.threshold, out.seed_consumed,
                                    reason=out.reason, step=j, steps=log)
        design = build_weak_design(schedule.t, step["out_len"])
        x = extract(out.output, reserve, design)
        assert len(x) > step["in_len"], "expansion step did not lengthen the string"
    return ExpansionOutcome("Succeed", x[:target_len], failures, steps=log)


def ms_error(m: float, alpha: float = ALPHA, beta: float = BETA) -> float:
    """log2 of 2^{(alpha - m)/beta}."""
    if m < 1:
        raise ValueError("seed length must be at least 1")
    return (alpha - m) / beta


def infer_alpha(m: float, eps: float, beta: float = BETA) -> float:
    if not 0 < eps <= 1:
        raise ValueError("target error must lie in (0, 1]")
    return m + beta * math.log2(eps)


@dataclass(frozen=True)
class MsErrorParams:
    alpha: float = ALPHA
    beta: float = BETA

    @property
    def c3(self) -> float:
        return 2 ** (self.alpha / self.beta)

    @property
    def c4(self) -> float:
        return 1 / self.beta

    def log2_eps(self, m: float) -> float:
        return ms_error(m, self.alpha, self.beta)
