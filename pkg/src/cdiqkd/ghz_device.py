"""Untrusted three-component devices playing the GHZ game.

Each ``Device`` owns three ``Component`` objects.  On a query, component i is
handed only its own input bit; the honest model correlates the components
through a freshly prepared shared state (|000> - |111>)/sqrt(2) which each
component measures locally: Pauli X on input 1, Pauli Y on input 0.

The PRNG inside a device simulates quantum physics (and the adversary's
devices); it plays no part in the cryptographic argument.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

GAME_INPUTS = ((1, 1, 1), (1, 0, 0), (0, 1, 0), (0, 0, 1))
GENERATING_INPUT = (1, 1, 1)

_SQRT2 = np.sqrt(2.0)
GHZ_STATE = np.zeros(8, dtype=complex)
GHZ_STATE[0] = 1 / _SQRT2
GHZ_STATE[7] = -1 / _SQRT2

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
# eigenvectors for eigenvalue +1 (outcome 0) and -1 (outcome 1)
_BASES = {
    1: (np.array([1, 1]) / _SQRT2, np.array([1, -1]) / _SQRT2),
    0: (np.array([1, 1j]) / _SQRT2, np.array([1, -1j]) / _SQRT2),
}


def derive_rng(master_seed: int, *labels) -> np.random.Generator:
    """Domain-separated simulation stream for ``labels`` under ``master_seed``."""
    payload = json.dumps([master_seed, *[str(x) for x in labels]]).encode()
    digest = hashlib.sha256(payload).digest()
    return np.random.default_rng(np.random.SeedSequence(list(np.frombuffer(digest, dtype=np.uint32))))


@dataclass(frozen=True)
class GhzInput:
    x1: int
    x2: int
    x3: int

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError(f"GHZ input bits must be 0/1, got {self.bits}")

    @property
    def bits(self) -> tuple[int, int, int]:
        return (self.x1, self.x2, self.x3)

    @property
    def is_game_input(self) -> bool:
        return self.bits in GAME_INPUTS


@dataclass(frozen=True)
class GhzOutput:
    a1: int
    a2: int
    a3: int

    @property
    def bits(self) -> tuple[int, int, int]:
        return (self.a1, self.a2, self.a3)


def ghz_win(inp: GhzInput, out: GhzOutput) -> bool:
    return (out.a1 ^ out.a2 ^ out.a3) == (inp.x1 & inp.x2 & inp.x3)


def classical_game_value(strategies=None) -> float:
    """Best average win probability of a deterministic strategy over the four
    game inputs.  A strategy is three (f(0), f(1)) tables."""
    tables = list(itertools.product((0, 1), repeat=2))
    if strategies is None:
        strategies = itertools.product(tables, repeat=3)
    best = 0.0
    for strat in strategies:
        wins = sum(
            ghz_win(GhzInput(*x), GhzOutput(*(strat[i][x[i]] for i in range(3))))
            for x in GAME_INPUTS
        )
        best = max(best, wins / 4)
    return best


def operator_expectation(ops: Sequence[np.ndarray], state: np.ndarray = GHZ_STATE) -> complex:
    full = ops[0]
    for op in ops[1:]:
        full = np.kron(full, op)
    return complex(np.vdot(state, full @ state))


def is_eigenstate(ops: Sequence[np.ndarray], eigenvalue: float, state: np.ndarray = GHZ_STATE) -> bool:
    full = ops[0]
    for op in ops[1:]:
        full = np.kron(full, op)
    return bool(np.allclose(full @ state, eigenvalue * state, atol=1e-12))


class DeviceError(RuntimeError):
    pass


class DeviceUnresponsive(DeviceError):
    """A scripted device has no entry for the requested round."""


@dataclass
class DeviceModel:
    kind: str = "honest"
    p: float = 0.0
    strategy: tuple = ((0, 0), (0, 0), (0, 0))
    table: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("honest", "noisy", "deterministic", "scripted"):
            raise ValueError(f"unknown device model {self.kind!r}")
        if not 0 <= self.p <= 0.5:
            raise ValueError("flip probability must lie in [0, 1/2]")
        if self.kind == "deterministic":
            self.strategy = tuple(tuple(int(v) for v in f) for f in self.strategy)
            if len(self.strategy) != 3 or any(len(f) != 2 for f in self.strategy):
                raise ValueError("a deterministic strategy is three (f(0), f(1)) tables")

    @classmethod
    def honest(cls):
        return cls("honest")

    @classmethod
    def noisy(cls, p: float):
        return cls("noisy", p=p)

    @classmethod
    def deterministic(cls, strategy):
        return cls("deterministic", strategy=strategy)

    @classmethod
    def constant_zero(cls):
        return cls("deterministic", strategy=((0, 0), (0, 0), (0, 0)))

    @classmethod
    def scripted(cls, table: dict):
        return cls("scripted", table={int(k): tuple(int(b) for b in v) for k, v in table.items()})

    @classmethod
    def scripted_from_json(cls, path):
        return cls.scripted(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        if self.kind == "noisy":
            return {"kind": "noisy", "p": self.p}
        if self.kind == "deterministic":
            return {"kind": "deterministic", "strategy": [list(f) for f in self.strategy]}
        if self.kind == "scripted":
            return {"kind": "scripted", "table": {str(k): list(v) for k, v in self.table.items()}}
        return {"kind": "honest"}

    @classmethod
    def from_dict(cls, obj: dict) -> "DeviceModel":
        kind = obj.get("kind", "honest")
        if kind == "noisy":
            return cls.noisy(obj["p"])
        if kind == "deterministic":
            return cls.deterministic(obj["strategy"])
        if kind == "scripted":
            return cls.scripted(obj.get("table", {}))
        if kind == "constant_zero":
            return cls.constant_zero()
        if kind == "honest":
            return cls.honest()
        raise ValueError(f"unknown device model {kind!r}")


@lru_cache(maxsize=None)
def _collapsed(history: tuple) -> np.ndarray:
    """GHZ state after the measurements in ``history``, each (qubit, setting, outcome)."""
    psi = GHZ_STATE.reshape(2, 2, 2)
    for qubit, setting, outcome in history:
        vec = _BASES[setting][outcome]
        amp = np.tensordot(vec.conj(), psi, axes=([0], [qubit]))
        amp = amp / np.linalg.norm(amp)
        psi = np.moveaxis(np.multiply.outer(vec, amp), 0, qubit)
    psi.flags.writeable = False
    return psi


@lru_cache(maxsize=None)
def _prob_plus(history: tuple, qubit: int, setting: int) -> float:
    amp = np.tensordot(_BASES[setting][0].conj(), _collapsed(history), axes=([0], [qubit]))
    return float(np.vdot(amp, amp).real)


class _SharedState:
    """Three-qubit state shared by one round's components.

    Exact Born-rule sampling with collapse; post-measurement states depend
    only on the measurement history, so they are cached.
    """

    def __init__(self):
        self.history: tuple = ()

    @property
    def psi(self) -> np.ndarray:
        return _collapsed(self.history)

    def measure(self, qubit: int, setting: int, rng: np.random.Generator) -> int:
        p0 = _prob_plus(self.history, qubit, setting)
        outcome = 0 if rng.random() < p0 else 1
        self.history += ((qubit, setting, outcome),)
        return outcome


class Component:
    """One isolated box.  It sees its own input bit and nothing else."""

    def __init__(self, index: int, model: DeviceModel, rng: np.random.Generator):
        self.index = index
        self._model = model
        self._rng = rng
        self.inputs_seen: list[int] = []

    def respond(self, bit: int, round_index: int, shared: _SharedState | None) -> int:
        self.inputs_seen.append(bit)
        kind = self._model.kind
        if kind == "deterministic":
            return self._model.strategy[self.index][bit]
        if kind == "scripted":
            try:
                return self._model.table[round_index][self.index]
            except KeyError:
                raise DeviceUnresponsive(f"no scripted output for round {round_index}") from None
        return shared.measure(self.index, bit, self._rng)


class Device:
    """A black box of three components; queried strictly sequentially."""

    def __init__(self, model: DeviceModel | None = None, rng: np.random.Generator | None = None, label: str = ""):
        self.model = model or DeviceModel.honest()
        self.label = label
        self._rng = rng if rng is not None else np.random.default_rng(0)
        self.components = tuple(Component(i, self.model, self._rng) for i in range(3))
        self.rounds = 0
        self.retired = False
        self.aborted = False

    def query(self, inp: GhzInput) -> GhzOutput:
        if self.retired or self.aborted:
            raise DeviceError(f"device {self.label!r} is {'retired' if self.retired else 'aborted'}")
        shared = _SharedState() if self.model.kind in ("honest", "noisy") else None
        bits = [c.respond(x, self.rounds, shared) for c, x in zip(self.components, inp.bits)]
        self.rounds += 1
        if self.model.kind == "noisy" and self._rng.random() < self.model.p:
            bits[int(self._rng.integers(3))] ^= 1
        return GhzOutput(*bits)

    def retire(self) -> None:
        self.retired = True

    def mark_aborted(self) -> None:
        self.aborted = True


def query(device: Device, inp: GhzInput) -> GhzOutput:
    return device.query(inp)


def component_marginal(model: DeviceModel, inputs: GhzInput, samples: int, rng: np.random.Generator, component: int = 0) -> np.ndarray:
    """Outcome counts of one component over ``samples`` fresh rounds."""
    dev = Device(model, rng)
    counts = np.zeros(2, dtype=int)
    for _ in range(samples):
        counts[dev.query(inputs).bits[component]] += 1
    return counts


DeviceFactory = Callable[[int, str], Device]
