"""Randomness processing: extract with every seed, expand each output on fresh
devices, XOR everything together.  Also the error composition and the
security-parameter calculator.

Two regimes never mix.  ``security_parameter`` and friends evaluate the real
formulas at true scale (k around 10^5 and up) in log2 space.
``run_processing`` actually moves bits, with a toy seed length ``d_struct``
small enough to enumerate all 2^d_struct seeds.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .bitcore import BitString, xor_fold
from .expansion import ALPHA, BETA, ExpansionOutcome, ExpansionSchedule, ms_error, unbounded_expand
from .ghz_device import Device, DeviceModel, derive_rng
from .trevisan import C1, C2, compute_params, extract, log2_eps_T, toy_design

GAMMA_DEFAULT = 1 / (4 * BETA)          # 1/125312
GAMMA_IMPROVED = C2 / (2 * 3917)         # 1/62672
IMPROVED_RATIO = 3916 / 3917
PAPER_SCALE = "paper-scale"
TOY_SCALE = "toy-structural"


def log2_add(*terms: float) -> float:
    """log2(sum 2^t) without leaving log space."""
    terms = [t for t in terms if t != -math.inf]
    if not terms:
        return -math.inf
    top = max(terms)
    return top + math.log2(math.fsum(2.0 ** (t - top) for t in terms))


def csw_errors(eps_T: float, eps_c: float, eps_s: float, eta: float) -> tuple[float, float]:
    """(completeness, soundness) after extracting with all seeds and XOR-ing."""
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    return (eps_c + eps_T) / eta, eps_s + 2 * math.sqrt(eps_T) + 2 * eta


def log2_csw_errors(l_eps_T: float, l_eps_c: float, l_eps_s: float, l_eta: float) -> tuple[float, float]:
    completeness = log2_add(l_eps_c, l_eps_T) - l_eta
    soundness = log2_add(l_eps_s, 1 + l_eps_T / 2, 1 + l_eta)
    return completeness, soundness


@dataclass(frozen=True)
class SecurityReport:
    k: float
    m: float
    log2_eta: float
    log2_eps_T: float
    log2_eps_MS: float
    log2_completeness: float
    log2_soundness: float
    log2_delta: float
    gamma: float
    d: int
    log2_device_count: float
    regime: str = PAPER_SCALE

    @property
    def eta(self) -> float:
        return 2.0 ** self.log2_eta

    @property
    def delta(self) -> float:
        return 2.0 ** self.log2_delta

    @property
    def vacuous(self) -> bool:
        return self.log2_delta >= 0

    def to_json(self, **extra) -> str:
        rec = {"regime": self.regime, "k": self.k, "m": self.m, "d": self.d, "gamma": self.gamma,
               "vacuous": self.vacuous}
        for name in ("eta", "eps_T", "eps_MS", "completeness", "soundness", "delta", "device_count"):
            rec[name] = {"log2": getattr(self, "log2_" + name)}
        rec.update(extra)
        return json.dumps(rec, indent=2)


def decay_exponent(m_ratio: float, a: float, c2: float = C2, c4: float = 1 / BETA) -> float:
    """Exponential decay rate of delta when m = m_ratio k and eta = 2^{-a k},
    ignoring polynomial prefactors."""
    ext = c2 * (1 - m_ratio)
    exp_ = c4 * m_ratio
    return min(ext - a, exp_ - a, ext / 2, exp_, a)


def best_decay(m_ratio: float = 0.5, grid: int = 20001) -> tuple[float, float]:
    """(a, rate) maximising ``decay_exponent`` over a grid of a in (0, c4)."""
    a_values = np.linspace(0, 1 / BETA, grid)[1:]
    rates = np.array([decay_exponent(m_ratio, a) for a in a_values])
    i = int(np.argmax(rates))
    return float(a_values[i]), float(rates[i])


def log2_delta(k: float, m: float, log2_eta: float, drop_prefactors: bool = False) -> float:
    return _compose(k, m, log2_eta, drop_prefactors)[-1]


def _compose(k, m, log2_eta, drop_prefactors):
    lt = log2_eps_T(k, m)
    if drop_prefactors:
        lt -= math.log2(m)
    lms = ms_error(m)
    comp, sound = log2_csw_errors(lt, lms, lms, log2_eta)
    return lt, lms, comp, sound, max(comp, sound)


def security_parameter(k: float, m: float, eta: float | None = None, *, log2_eta: float | None = None,
                       n: int | None = None, drop_prefactors: bool = False) -> SecurityReport:
    """All error terms for min-entropy k, extractor output m and tolerance eta.

    ``eta`` may be given directly or as ``log2_eta`` when it underflows.  The
    seed length d uses the asymptotic rounding with |X| = n (defaults to
    k, i.e. a fully random message).
    """
    if not m < k:
        raise ValueError(f"need m < k, got m={m}, k={k}")
    if log2_eta is None:
        if eta is None or not 0 < eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        log2_eta = math.log2(eta)
    lt, lms, comp, sound, ld = _compose(k, m, log2_eta, drop_prefactors)
    ratio = m / k
    gamma = decay_exponent(ratio, -log2_eta / k)
    d = compute_params(max(n or math.ceil(k), math.ceil(k)), k, m).d
    return SecurityReport(k=k, m=m, log2_eta=log2_eta, log2_eps_T=lt, log2_eps_MS=lms,
                          log2_completeness=comp, log2_soundness=sound, log2_delta=ld,
                          gamma=gamma, d=d, log2_device_count=math.log2(6) + d)


def default_strategy(k: float) -> tuple[float, float]:
    """(m, log2 eta) with m = k/2 and eta = 2^{-k/125312}."""
    return k / 2, -k * GAMMA_DEFAULT


def improved_strategy(k: float) -> tuple[float, float]:
    return IMPROVED_RATIO * k, -k * GAMMA_IMPROVED


def best_log2_eta(k: float, m: float) -> float:
    """Tolerance balancing the completeness and soundness terms for (k, m)."""
    lt = log2_eps_T(k, m)
    lms = ms_error(m)
    a = log2_add(lt, lms)

    def gap(y):
        comp, sound = log2_csw_errors(lt, lms, lms, y)
        return comp - sound

    lo, hi = a - 4, -1e-12
    if gap(hi) > 0:
        return hi
    for _ in range(200):
        mid = (lo + hi) / 2
        if gap(mid) > 0:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


class VacuousSecurity(ValueError):
    def __init__(self, k, report):
        self.report = report
        super().__init__(f"no choice of m, eta gives delta < 1 at k = {k}")


def optimize_m_eta(k: float, floor: float = 2 * ALPHA / 3, grid: int = 400) -> tuple[float, float, SecurityReport]:
    """Minimise delta over m in (alpha, k) with the balancing eta for each m.

    Returns (m, log2 eta, report).  The m = k/2 default strategy is always a
    candidate, so the result never does worse than it.
    """
    if k < floor:
        raise ValueError(f"k = {k} is below the optimiser floor {floor}")

    def objective(m):
        return log2_delta(k, m, best_log2_eta(k, m))

    lo = min(ALPHA, k / 2) + 1
    hi = k - 1
    ms = np.linspace(lo, hi, grid)
    vals = np.array([objective(m) for m in ms])
    i = int(np.argmin(vals))
    a, b = ms[max(i - 1, 0)], ms[min(i + 1, grid - 1)]
    res = minimize_scalar(objective, bounds=(a, b), method="bounded", options={"xatol": 1e-3})
    candidates = [(float(res.x), best_log2_eta(k, float(res.x))), (float(ms[i]), best_log2_eta(k, float(ms[i])))]
    candidates.append(default_strategy(k))
    best = min(candidates, key=lambda c: log2_delta(k, c[0], c[1]))
    report = security_parameter(k, best[0], log2_eta=best[1])
    if report.vacuous:
        raise VacuousSecurity(k, report)
    return best[0], best[1], report


def threshold_k(strategy: Callable[[float], tuple[float, float]] | str = "balanced", lo: float = 1e3,
                hi: float = 2e6) -> float:
    """Smallest k (to within 1 bit) with delta < 1 under the given strategy.

    ``balanced`` uses m = k/2 with the best tolerance for each k.
    """
    if strategy == "balanced":
        def strat(k):
            return k / 2, best_log2_eta(k, k / 2)
    else:
        strat = strategy

    def ok(k):
        m, le = strat(k)
        return log2_delta(k, m, le) < 0

    if ok(lo) or not ok(hi):
        raise ValueError("threshold not bracketed")
    while hi - lo > 1:
        mid = (lo + hi) / 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def log_slope(ks, strategy, drop_prefactors: bool = False) -> float:
    """Least-squares decay rate -d log2(delta)/dk over the grid ``ks``."""
    ks = np.asarray(ks, dtype=float)
    ys = np.array([log2_delta(k, *strategy(k), drop_prefactors=drop_prefactors) for k in ks])
    slope = np.polyfit(ks, ys, 1)[0]
    return float(-slope)


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["k", "m", "eta", "log2_delta"])
    for k, m, le, ld in rows:
        w.writerow([k, m, 2.0 ** le, ld])
    return buf.getvalue()


# -- structural pipeline ----------------------------------------------------

@dataclass
class ProcessingConfig:
    n: int
    k: float
    m: int
    d_struct: int
    eta: float
    target_len: int
    t_struct: int | None = None
    schedule: ExpansionSchedule = field(default_factory=ExpansionSchedule)
    device_factory: Callable[[int, str], Device] | None = None
    master_seed: int = 0
    cap: int = 1 << 12
    jobs: int = 1

    def __post_init__(self):
        if 2 ** self.d_struct > self.cap:
            raise ValueError(f"2^{self.d_struct} structural runs exceed the cap {self.cap}")
        if not self.m < self.k:
            raise ValueError("extractor output m must be below the min-entropy k")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if self.t_struct is None:
            self.t_struct = min(2, self.d_struct)


def honest_factory(master_seed: int, model: DeviceModel | None = None,
                   overrides: dict[int, DeviceModel] | None = None) -> Callable[[int, str], Device]:
    """Factory handing out a new seeded device per (seed index, role)."""
    model = model or DeviceModel.honest()
    overrides = overrides or {}

    def make(index: int, role: str) -> Device:
        return Device(overrides.get(index, model), derive_rng(master_seed, "device", index, role),
                      label=f"seed{index}/{role}")

    return make


@dataclass
class ProcessingResult:
    status: str
    z: BitString | None
    report: SecurityReport | None
    seeds: list
    w: list
    runs: list
    aborted: int
    devices: list

    @property
    def succeeded(self) -> bool:
        return self.status == "Succeed"

    def summary(self) -> dict:
        return {"regime": TOY_SCALE, "status": self.status, "runs": len(self.runs), "aborted_runs": self.aborted,
                "z_len": len(self.z) if self.z is not None else None, "devices": 2 * len(self.devices)}


def run_processing(message: BitString, config: ProcessingConfig) -> ProcessingResult:
    if len(message) != config.n:
        raise ValueError(f"message has {len(message)} bits, config says n = {config.n}")
    d = config.d_struct
    design = toy_design(config.t_struct, config.m, d)
    factory = config.device_factory or honest_factory(config.master_seed)
    seeds = [BitString(i, d) for i in range(1 << d)]
    ws = [extract(message, s, design) for s in seeds]

    pairs = []
    seen = set()
    for i in range(len(seeds)):
        pair = (factory(i, "A"), factory(i, "B"))
        for dev in pair:
            if id(dev) in seen or dev.rounds or dev.retired:
                raise ValueError(f"device factory returned a used device for seed {i}")
            seen.add(id(dev))
        pairs.append(pair)

    def run(i):
        a, b = pairs[i]
        return unbounded_expand(ws[i], a, b, config.target_len, config.schedule, exhaustion_aborts=True)

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            runs: list[ExpansionOutcome] = list(pool.map(run, range(len(seeds))))
    else:
        runs = [run(i) for i in range(len(seeds))]
    for a, b in pairs:
        a.retire()
        b.retire()

    aborted = sum(not r.succeeded for r in runs)
    report = None
    if config.m > 0 and config.k > config.m:
        report = security_parameter(config.k, config.m, config.eta, n=config.n)
    # fewer than an eta-fraction of rejected runs is required; ties abort
    if aborted / len(runs) >= config.eta:
        return ProcessingResult("Abort", None, report, seeds, ws, runs, aborted, pairs)
    z = xor_fold([r.output for r in runs if r.succeeded])
    return ProcessingResult("Succeed", z, report, seeds, ws, runs, aborted, pairs)
