"""Event-ordered simulation of the key-distribution phase.

Eve runs the pair source.  In round i she sends particle 2i-1 to Alice and
particle 2i to Bob.  Alice measures hers with setting z_{2i-1}.  Only after Bob
acknowledges particle 2i does Alice broadcast z_{2i}, which is Bob's setting.
All classical traffic goes over an ordered bus.  Eve can read it but has no
way to write to it.

The inner protocol is a CHSH/E91-style loop.  Its (eps_c, eps_s) are inputs,
not derived.  The z layout is documented in ``session_budget``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

from .bitcore import BitString, IntervalDecoder, fixed_point
from .ghz_device import derive_rng
from .trevisan import build_weak_design, design_seed_length, extract

TSIRELSON = 2 * math.sqrt(2)
ALICE_ANGLES = (0.0, math.pi / 2)
BOB_TEST_ANGLES = (math.pi / 4, -math.pi / 4)
BOB_KEY_ANGLES = ALICE_ANGLES

CLASSICAL_KINDS = frozenset({"BobAck", "SettingBroadcast", "Classical", "RoundAbandoned"})

_I2 = np.eye(2)
_PAULI_Z = np.diag([1.0, -1.0])
_PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]])
SINGLET = np.array([0, 1, -1, 0]) / math.sqrt(2)
SINGLET_RHO = np.outer(SINGLET, SINGLET).astype(complex)


def projector(angle: float, outcome: int) -> np.ndarray:
    """Projector for outcome 0 (+1) or 1 (-1) of cos(a) Z + sin(a) X."""
    obs = math.cos(angle) * _PAULI_Z + math.sin(angle) * _PAULI_X
    sign = 1 if outcome == 0 else -1
    return (_I2 + sign * obs) / 2


def werner_state(p: float) -> np.ndarray:
    """(1 - p) singlet + p I/4: depolarised with probability p."""
    return (1 - p) * SINGLET_RHO + p * np.eye(4) / 4


def expected_qber(p: float) -> float:
    return p / 2


def singlet_correlator(a: float, b: float) -> float:
    return -math.cos(a - b)


# -- events and bus ---------------------------------------------------------

@dataclass(frozen=True)
class Event:
    index: int
    kind: str
    round: int | None = None
    particle: int | None = None
    party: str | None = None
    setting: int | None = None
    outcome: int | None = None
    role: str | None = None
    label: str | None = None
    payload: object = None

    @property
    def classical(self) -> bool:
        return self.kind in CLASSICAL_KINDS

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, obj: dict) -> "Event":
        return cls(**obj)


class SessionTranscript:
    """Append-only event log; every classical event is pushed to the Eve tap."""

    def __init__(self, eve: "EveModel | None" = None, degenerate: bool = False):
        self._events: list[Event] = []
        self._eve = eve
        self.degenerate = degenerate

    @property
    def events(self) -> tuple[Event, ...]:
        return tuple(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def emit(self, kind: str, **fields) -> Event:
        ev = Event(len(self._events), kind, **fields)
        self._events.append(ev)
        if ev.classical and self._eve is not None:
            self._eve.observe(ev)
        return ev

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_dict()) + "\n" for e in self._events)

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "SessionTranscript":
        t = cls()
        for line in text.splitlines():
            if line.strip():
                t._events.append(Event.from_dict(json.loads(line)))
        return t

    @classmethod
    def load(cls, path) -> "SessionTranscript":
        return cls.from_jsonl(Path(path).read_text())


class OrderingViolation(AssertionError):
    pass


def verify_transcript(transcript: SessionTranscript | list) -> list[str]:
    """Check event indices and the ack-before-broadcast rule; returns violations."""
    events = transcript.events if isinstance(transcript, SessionTranscript) else list(transcript)
    problems = []
    sent: set[int] = set()
    acked: set[int] = set()
    broadcast: set[int] = set()
    for pos, ev in enumerate(events):
        if ev.index != pos:
            problems.append(f"event at position {pos} carries index {ev.index}")
        if ev.kind == "PairSent":
            sent.add(ev.particle)
        elif ev.kind == "BobAck":
            if ev.particle not in sent:
                problems.append(f"ack of particle {ev.particle} before it was sent")
            acked.add(ev.particle)
        elif ev.kind == "SettingBroadcast":
            i = ev.round
            if 2 * i not in acked:
                problems.append(f"setting for round {i} broadcast before BobAck({2 * i})")
            if 2 * i - 1 not in sent or 2 * i not in sent:
                problems.append(f"setting for round {i} broadcast before both particles were sent")
            broadcast.add(i)
        elif ev.kind == "Measurement" and ev.party == "B" and ev.round not in broadcast:
            problems.append(f"Bob measured round {ev.round} before its setting arrived")
    return problems


# -- Eve --------------------------------------------------------------------

@dataclass
class EveModel:
    """passive | intercept_resend (fraction p of Bob's particles measured in a
    random Z/X basis and resent) | source_tamper (supplier(round, rng) -> rho)."""

    kind: str = "passive"
    p: float = 0.0
    supplier: Callable | None = None
    knowledge: list = field(default_factory=list)
    intercepted: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("passive", "intercept_resend", "source_tamper"):
            raise ValueError(f"unknown Eve model {self.kind!r}")
        if not 0 <= self.p <= 1:
            raise ValueError("intercept fraction must lie in [0, 1]")
        if self.kind == "source_tamper" and self.supplier is None:
            raise ValueError("source_tamper needs a state supplier")

    @classmethod
    def passive(cls):
        return cls("passive")

    @classmethod
    def intercept_resend(cls, p: float = 1.0):
        return cls("intercept_resend", p=p)

    @classmethod
    def source_tamper(cls, supplier):
        return cls("source_tamper", supplier=supplier)

    def observe(self, event: Event) -> None:
        self.knowledge.append(event)

    def source(self, round_index: int, honest_state: np.ndarray, rng) -> np.ndarray:
        if self.kind == "source_tamper":
            return np.asarray(self.supplier(round_index, rng), dtype=complex)
        return honest_state

    def in_flight(self, round_index: int, rho: np.ndarray, rng) -> np.ndarray:
        """Whatever Eve does to Bob's particle on its way."""
        if self.kind != "intercept_resend" or rng.random() >= self.p:
            return rho
        angle = ALICE_ANGLES[int(rng.integers(2))]
        rho, outcome = _measure(rho, 1, angle, rng)
        self.intercepted.append((round_index, angle, outcome))
        return rho


@lru_cache(maxsize=None)
def _lifted(qubit: int, angle: float, outcome: int) -> np.ndarray:
    proj = projector(angle, outcome)
    op = np.kron(proj, _I2) if qubit == 0 else np.kron(_I2, proj)
    op.flags.writeable = False
    return op


def _measure(rho: np.ndarray, qubit: int, angle: float, rng) -> tuple[np.ndarray, int]:
    """Born-rule sample of one qubit, returning the collapsed state."""
    p0_op = _lifted(qubit, angle, 0)
    # tr(P rho) = sum_ij P_ij rho_ji
    p0 = float(np.real(np.sum(p0_op * rho.T)))
    outcome = 0 if rng.random() < p0 else 1
    op = p0_op if outcome == 0 else _lifted(qubit, angle, 1)
    post = op @ rho @ op
    norm = float(np.real(np.trace(post)))
    return post / norm, outcome


# -- configuration and budget -----------------------------------------------

@dataclass(frozen=True)
class SessionConfig:
    rounds: int = 4000
    test_fraction: float = 0.5
    inner_errors: tuple[float, float] = (0.0, 0.0)
    abort_threshold: float = 2.2
    min_per_pair: int = 50
    noise: float = 0.0
    loss: float = 0.0
    key_length: int = 64
    pa_t: int = 4
    delta: float = 0.0
    master_seed: int = 0

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be non-negative")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test fraction must lie in (0, 1)")
        if not (0 <= self.noise <= 1 and 0 <= self.loss < 1):
            raise ValueError("noise must lie in [0, 1] and loss in [0, 1)")
        if self.key_length < 1:
            raise ValueError("key length must be positive")

    @property
    def test_rounds(self) -> int:
        return round(self.test_fraction * self.rounds)

    @classmethod
    def from_dict(cls, obj: dict) -> "SessionConfig":
        obj = dict(obj)
        if "inner_errors" in obj:
            obj["inner_errors"] = tuple(obj["inner_errors"])
        return cls(**obj)


ROLE_MARGIN = 64


def role_budget(rounds: int, tests: int) -> int:
    """Bits to choose exactly ``tests`` of ``rounds`` positions sequentially:
    log2 C(rounds, tests) plus a margin for the 32-bit quantisation."""
    if rounds == 0:
        return 0
    log_binom = (math.lgamma(rounds + 1) - math.lgamma(tests + 1) - math.lgamma(rounds - tests + 1)) / math.log(2)
    return math.ceil(log_binom) + ROLE_MARGIN


def session_budget(config: SessionConfig) -> dict:
    """Layout of z: [2R setting bits][test-position segment][PA seed]."""
    settings = 2 * config.rounds
    roles = role_budget(config.rounds, config.test_rounds)
    pa = design_seed_length(config.pa_t, config.key_length)
    return {"settings": settings, "roles": roles, "pa_seed": pa, "total": settings + roles + pa}


class BudgetShortfall(ValueError):
    def __init__(self, have: int, need: int):
        self.have = have
        self.need = need
        super().__init__(f"z has {have} bits; this session needs {need}")


def select_tests(bits: BitString, rounds: int, tests: int) -> list[bool]:
    """Exactly ``tests`` test positions, uniform over all subsets up to 2^-32
    quantisation, drawn by arithmetic decoding."""
    dec = IntervalDecoder(bits, required_hint=len(bits))
    left = tests
    roles = []
    for r in range(rounds, 0, -1):
        pick = dec.bernoulli(fixed_point(left / r)) if 0 < left < r else int(left == r)
        roles.append(bool(pick))
        left -= pick
    return roles


# -- scores, keys, errors ---------------------------------------------------

@dataclass(frozen=True)
class ChshEstimate:
    score: float
    correlators: dict
    counts: dict
    conclusive: bool


def chsh_from_counts(counts: dict, min_per_pair: int = 1) -> ChshEstimate:
    """``counts[(x, y)] = [same, different]``; S = |E00 + E01 + E10 - E11|."""
    corr = {}
    n = {}
    for xy in ((0, 0), (0, 1), (1, 0), (1, 1)):
        same, diff = counts.get(xy, (0, 0))
        n[xy] = same + diff
        corr[xy] = (same - diff) / n[xy] if n[xy] else 0.0
    s = abs(corr[0, 0] + corr[0, 1] + corr[1, 0] - corr[1, 1])
    return ChshEstimate(s, corr, n, all(v >= min_per_pair for v in n.values()))


def analytic_chsh(a=ALICE_ANGLES, b=BOB_TEST_ANGLES) -> float:
    e = {(x, y): singlet_correlator(a[x], b[y]) for x in (0, 1) for y in (0, 1)}
    return abs(e[0, 0] + e[0, 1] + e[1, 0] - e[1, 1])


def chsh_score(transcript: SessionTranscript, test_rounds, min_per_pair: int = 1) -> ChshEstimate:
    test_rounds = set(test_rounds)
    meas: dict = {}
    for ev in transcript.events:
        if ev.kind == "Measurement" and ev.round in test_rounds:
            meas.setdefault(ev.round, {})[ev.party] = (ev.setting, ev.outcome)
    counts: dict = {}
    for r in test_rounds:
        m = meas.get(r, {})
        if "A" not in m or "B" not in m:
            continue
        (x, a), (y, b) = m["A"], m["B"]
        c = counts.setdefault((x, y), [0, 0])
        c[a != b] += 1
    return chsh_from_counts(counts, min_per_pair)


def compose_errors(inner: tuple[float, float], delta: float) -> tuple[float, float]:
    """(eps_c + delta, eps_s + delta), each capped at 1."""
    ec, es = inner
    for v in (ec, es, delta):
        if v < 0:
            raise ValueError("errors must be non-negative")
    return min(1.0, ec + delta), min(1.0, es + delta)


@dataclass
class KeyPair:
    status: str
    alice_key: BitString | None
    bob_key: BitString | None
    composed_errors: tuple[float, float]
    chsh: ChshEstimate | None = None
    qber: float | None = None
    sifted: int = 0
    reason: str = ""

    @property
    def accepted(self) -> bool:
        return self.status == "Accept"

    @property
    def vacuous(self) -> bool:
        return max(self.composed_errors) >= 1


# -- the session ------------------------------------------------------------

def run_session(z: BitString, config: SessionConfig, eve: EveModel | None = None) -> tuple[KeyPair, SessionTranscript]:
    eve = eve or EveModel.passive()
    errors = compose_errors(config.inner_errors, config.delta)
    if config.rounds == 0:
        return KeyPair("Abort", None, None, errors, reason="degenerate: zero rounds"), SessionTranscript(eve, degenerate=True)
    budget = session_budget(config)
    if len(z) < budget["total"]:
        raise BudgetShortfall(len(z), budget["total"])
    R = config.rounds
    settings = z[: 2 * R]
    roles_seg = z[2 * R: 2 * R + budget["roles"]]
    pa_seed = z[2 * R + budget["roles"]: budget["total"]]
    is_test = select_tests(roles_seg, R, config.test_rounds)

    rng = derive_rng(config.master_seed, "session", "physics")
    eve_rng = derive_rng(config.master_seed, "session", "eve")
    honest = werner_state(config.noise) if config.noise else SINGLET_RHO
    tr = SessionTranscript(eve)
    acked: set[int] = set()
    alice: dict[int, tuple[int, int]] = {}
    bob: dict[int, tuple[int, int]] = {}

    for i in range(1, R + 1):
        x, y = settings[2 * i - 2], settings[2 * i - 1]
        rho = eve.source(i, honest, eve_rng)
        tr.emit("PairSent", round=i, particle=2 * i - 1)
        tr.emit("PairSent", round=i, particle=2 * i)
        rho = eve.in_flight(i, rho, eve_rng)
        rho, a = _measure(rho, 0, ALICE_ANGLES[x], rng)
        alice[i] = (x, a)
        tr.emit("Measurement", round=i, party="A", setting=x, outcome=a)
        if config.loss and rng.random() < config.loss:
            tr.emit("RoundAbandoned", round=i, particle=2 * i)
            continue
        tr.emit("BobAck", round=i, particle=2 * i)
        acked.add(2 * i)
        # the security-relevant ordering: never broadcast z_2i before its ack
        if 2 * i not in acked:
            raise OrderingViolation(f"round {i}: broadcast attempted before BobAck({2 * i})")
        role = "test" if is_test[i - 1] else "key"
        tr.emit("SettingBroadcast", round=i, setting=y, role=role)
        angles = BOB_TEST_ANGLES if role == "test" else BOB_KEY_ANGLES
        _, b = _measure(rho, 1, angles[y], rng)
        bob[i] = (y, b)
        tr.emit("Measurement", round=i, party="B", setting=y, outcome=b)

    problems = verify_transcript(tr)
    if problems:
        raise OrderingViolation("; ".join(problems))
    kept = sorted(bob)
    tests = [i for i in kept if is_test[i - 1]]
    tr.emit("Classical", label="alice_settings", payload={str(i): alice[i][0] for i in kept})
    tr.emit("Classical", label="test_outcomes",
            payload={str(i): [alice[i][1], bob[i][1]] for i in tests})
    est = chsh_score(tr, tests, config.min_per_pair)
    tr.emit("Classical", label="chsh", payload={"score": est.score, "conclusive": est.conclusive})
    if not est.conclusive:
        return KeyPair("Abort", None, None, errors, est, reason="inconclusive Bell test"), tr
    if est.score < config.abort_threshold:
        return KeyPair("Abort", None, None, errors, est, reason="CHSH score below threshold"), tr

    sift = [i for i in kept if not is_test[i - 1] and alice[i][0] == bob[i][0]]
    raw_a = BitString.from_bits(alice[i][1] for i in sift)
    raw_b = BitString.from_bits(1 - bob[i][1] for i in sift)
    qber = (raw_a ^ raw_b).weight() / len(sift) if sift else None
    if len(sift) < 2 * config.key_length:
        return KeyPair("Abort", None, None, errors, est, qber, len(sift), reason="too few sifted bits"), tr
    tr.emit("Classical", label="pa_seed", payload=pa_seed.to_str())
    if qber:
        # reconciliation is outside this simulator; stop with the diagnostic
        return KeyPair("Accept", None, None, errors, est, qber, len(sift),
                       reason="raw keys disagree; reconciliation required"), tr
    design = build_weak_design(config.pa_t, config.key_length)
    ka = extract(raw_a, pa_seed, design)
    kb = extract(raw_b, pa_seed, design)
    return KeyPair("Accept", ka, kb, errors, est, qber, len(sift)), tr
