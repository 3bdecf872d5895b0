"""Command-line entry point.

Exit codes: 0 success, 1 usage or input error, 2 vacuous parameters, 3
protocol abort.  Every stdout line carries a regime label, ``[paper-scale]``
for formula evaluation at true parameters and ``[toy-structural]`` for runs
that actually move bits.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bitcore import BitString, SeedExhausted, read_bits_file, write_bits_file
from .expansion import ExpansionSchedule, ScheduleInfeasible, unbounded_expand
from .ghz_device import Device, DeviceModel, derive_rng
from .processing import (PAPER_SCALE, TOY_SCALE, ProcessingConfig, VacuousSecurity, default_strategy,
                         honest_factory, improved_strategy, optimize_m_eta, run_processing,
                         security_parameter, sweep_csv, best_log2_eta, log2_delta)
from .qkd_session import BudgetShortfall, EveModel, SessionConfig, SessionTranscript, run_session, verify_transcript
from .trevisan import DesignTooLarge, build_weak_design, extract

EXIT_OK, EXIT_USAGE, EXIT_VACUOUS, EXIT_ABORT = 0, 1, 2, 3


class UsageError(Exception):
    pass


def say(regime: str, text: str) -> None:
    for line in str(text).splitlines() or [""]:
        print(f"[{regime}] {line}")


@dataclass
class RunManifest:
    command: str
    regime: str
    out_dir: Path
    config_path: str | None = None
    config: dict = field(default_factory=dict)
    master_seed: int = 0

    def to_dict(self) -> dict:
        return {"command": self.command, "regime": self.regime, "out_dir": str(self.out_dir),
                "config_path": self.config_path, "config": self.config, "master_seed": self.master_seed,
                "version": __version__}

    @property
    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def write(self) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / "manifest.json"
        path.write_text(json.dumps({**self.to_dict(), "manifest_hash": self.hash}, indent=2) + "\n")
        return path

    def write_json(self, name: str, obj: dict) -> Path:
        path = self.out_dir / name
        path.write_text(json.dumps({**obj, "regime": self.regime, "manifest_hash": self.hash}, indent=2) + "\n")
        return path

    def stamp(self, path: Path) -> Path:
        """Sidecar carrying the manifest hash for a non-JSON artifact."""
        meta = path.with_name(path.name + ".meta.json")
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        meta.write_text(json.dumps({"artifact": path.name, "sha256": digest, "regime": self.regime,
                                    "manifest_hash": self.hash}, indent=2) + "\n")
        return meta


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(obj, dict):
        raise UsageError(f"config {path} must be a JSON object")
    return obj


def load_bits(path: str) -> BitString:
    try:
        return read_bits_file(path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot parse bit file {path}: {exc}") from None


def make_manifest(args, regime: str, config: dict) -> RunManifest:
    out_dir = Path(getattr(args, "out_dir", None) or ".")
    return RunManifest(args.command, regime, out_dir, getattr(args, "config", None), config,
                       getattr(args, "master_seed", 0))


# -- subcommands ------------------------------------------------------------

def report_lines(rep) -> list[str]:
    return [
        f"k = {rep.k:.0f}, m = {rep.m:.1f}, log2 eta = {rep.log2_eta:.6g}",
        f"seed length d = {rep.d}",
        f"log2 eps_T = {rep.log2_eps_T:.6g}",
        f"log2 eps_MS = {rep.log2_eps_MS:.6g}",
        f"log2 completeness = {rep.log2_completeness:.6g}",
        f"log2 soundness = {rep.log2_soundness:.6g}",
        f"log2 delta = {rep.log2_delta:.6g}",
        f"gamma = {rep.gamma:.6g}",
        f"device components = 6 * 2^{rep.d} (log2 = {rep.log2_device_count:.6g})",
        "security: " + ("VACUOUS (delta >= 1)" if rep.vacuous else "delta < 1"),
    ]


def cmd_params(args) -> int:
    k = args.k
    if k < 1:
        raise UsageError("k must be at least 1")
    if args.optimize:
        try:
            m, le, rep = optimize_m_eta(k, floor=1)
        except VacuousSecurity as exc:
            rep = exc.report
    else:
        m = args.m if args.m is not None else k / 2
        if not 0 < m < k:
            raise UsageError("need 0 < m < k")
        if args.log2_eta is not None:
            le = args.log2_eta
        elif args.eta is not None:
            if not 0 < args.eta < 1:
                raise UsageError("eta must lie in (0, 1)")
            le = float(np.log2(args.eta))
        else:
            le = default_strategy(k)[1] if args.m is None else best_log2_eta(k, m)
        rep = security_parameter(k, m, log2_eta=le)
    man = make_manifest(args, PAPER_SCALE, {"k": k, "m": args.m, "eta": args.eta, "log2_eta": args.log2_eta,
                                             "optimize": args.optimize})
    if args.out_dir:
        man.write()
        man.write_json("report.json", json.loads(rep.to_json()))
    for line in report_lines(rep):
        say(PAPER_SCALE, line)
    return EXIT_VACUOUS if rep.vacuous else EXIT_OK


def cmd_extract(args) -> int:
    x = load_bits(args.message)
    seed = load_bits(args.seed)
    try:
        design = build_weak_design(args.t, args.m)
    except DesignTooLarge as exc:
        raise UsageError(str(exc)) from None
    if len(seed) < design.d:
        raise UsageError(f"seed has {len(seed)} bits; weak design for t={args.t}, m={args.m} needs {design.d}")
    z = extract(x, seed[: design.d], design)
    man = make_manifest(args, TOY_SCALE, {"t": args.t, "m": args.m})
    man.write()
    out = Path(args.out)
    write_bits_file(out, z)
    man.stamp(out)
    say(TOY_SCALE, f"extracted {len(z)} bits from {len(x)} with a {design.d}-bit seed -> {out}")
    return EXIT_OK


def schedule_from(obj: dict) -> ExpansionSchedule:
    try:
        return ExpansionSchedule(**obj)
    except TypeError as exc:
        raise UsageError(f"bad schedule: {exc}") from None


def cmd_expand(args) -> int:
    cfg = load_config(args.config)
    seed = load_bits(args.seed)
    schedule = schedule_from(cfg.get("schedule", {}))
    try:
        model = DeviceModel.from_dict(cfg.get("device", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad device model: {exc}") from None
    ms = cfg.get("master_seed", args.master_seed)
    args.master_seed = ms
    a = Device(model, derive_rng(ms, "expand", "A"), "A")
    b = Device(model, derive_rng(ms, "expand", "B"), "B")
    man = make_manifest(args, TOY_SCALE, cfg)
    man.write()
    try:
        out = unbounded_expand(seed, a, b, args.target, schedule)
    except (ScheduleInfeasible, SeedExhausted) as exc:
        raise UsageError(str(exc)) from None
    log = {"status": out.status, "failures": out.failures, "step": out.step, "reason": out.reason,
           "steps": [{"rounds": len(s.rounds), "failures": s.failures, "seed_consumed": s.seed_consumed,
                      "threshold": s.threshold} for s in out.steps]}
    man.write_json("expand_log.json", log)
    if not out.succeeded:
        say(TOY_SCALE, f"Abort at step {out.step}: {out.reason} ({out.failures} failures)")
        return EXIT_ABORT
    path = Path(args.out)
    write_bits_file(path, out.output)
    man.stamp(path)
    say(TOY_SCALE, f"Succeed: {len(seed)} -> {len(out.output)} bits in {len(out.steps)} steps -> {path}")
    return EXIT_OK


def processing_config(cfg: dict, n: int, jobs: int) -> ProcessingConfig:
    try:
        devices = cfg.get("devices", {})
        model = DeviceModel.from_dict(devices.get("default", {}))
        overrides = {int(i): DeviceModel.from_dict(o) for i, o in devices.get("overrides", {}).items()}
        ms = cfg.get("master_seed", 0)
        return ProcessingConfig(
            n=cfg.get("n", n), k=cfg["k"], m=cfg["m"], d_struct=cfg.get("d_struct", 2), eta=cfg["eta"],
            target_len=cfg["target_len"], t_struct=cfg.get("t_struct"),
            schedule=schedule_from(cfg.get("schedule", {})),
            device_factory=honest_factory(ms, model, overrides), master_seed=ms,
            cap=cfg.get("cap", 1 << 12), jobs=jobs or cfg.get("jobs", 1))
    except KeyError as exc:
        raise UsageError(f"config is missing {exc}") from None
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad processing config: {exc}") from None


def cmd_process(args) -> int:
    cfg = load_config(args.config)
    x = load_bits(args.message)
    pc = processing_config(cfg, len(x), args.jobs)
    args.master_seed = pc.master_seed
    man = make_manifest(args, TOY_SCALE, cfg)
    man.write()
    try:
        res = run_processing(x, pc)
    except (ValueError, ScheduleInfeasible, SeedExhausted) as exc:
        raise UsageError(str(exc)) from None
    runs = [{"seed": s.to_str(), "status": r.status, "failures": r.failures, "step": r.step, "reason": r.reason}
            for s, r in zip(res.seeds, res.runs)]
    man.write_json("process_log.json", {**res.summary(), "runs": runs})
    if res.report is not None:
        man.write_json("report.json", json.loads(res.report.to_json()))
    say(TOY_SCALE, f"{len(res.runs)} expansion runs, {res.aborted} aborted, eta = {pc.eta}")
    if not res.succeeded:
        say(TOY_SCALE, f"Abort: {res.aborted}/{len(res.runs)} runs rejected (needs fewer than eta = {pc.eta})")
        return EXIT_ABORT
    path = Path(args.out)
    write_bits_file(path, res.z)
    man.stamp(path)
    say(TOY_SCALE, f"Succeed: |Z| = {len(res.z)} -> {path}")
    if res.report is not None:
        say(PAPER_SCALE, f"formula delta at k = {pc.k}, m = {pc.m}: log2 delta = {res.report.log2_delta:.6g}")
    return EXIT_OK


def parse_eve(spec: str) -> EveModel:
    name, _, arg = spec.partition(":")
    if name == "passive":
        return EveModel.passive()
    if name in ("intercept", "intercept_resend"):
        return EveModel.intercept_resend(float(arg) if arg else 1.0)
    raise UsageError(f"unknown Eve model {spec!r} (passive | intercept[:p])")


def cmd_qkd(args) -> int:
    cfg = load_config(args.config)
    z = load_bits(args.z)
    try:
        sc = SessionConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad session config: {exc}") from None
    eve = parse_eve(args.eve)
    args.master_seed = sc.master_seed
    man = make_manifest(args, TOY_SCALE, {**cfg, "eve": args.eve})
    man.write()
    try:
        kp, tr = run_session(z, sc, eve)
    except (BudgetShortfall, SeedExhausted) as exc:
        raise UsageError(str(exc)) from None
    tpath = man.out_dir / "transcript.jsonl"
    tr.save(tpath)
    man.stamp(tpath)
    rec = {"status": kp.status, "reason": kp.reason, "composed_errors": list(kp.composed_errors),
           "vacuous": kp.vacuous, "sifted": kp.sifted, "qber": kp.qber,
           "chsh": kp.chsh.score if kp.chsh else None,
           "alice_key": kp.alice_key.to_str() if kp.alice_key else None,
           "bob_key": kp.bob_key.to_str() if kp.bob_key else None}
    man.write_json("keys.json", rec)
    if kp.chsh is not None:
        say(TOY_SCALE, f"CHSH score S = {kp.chsh.score:.4f} (threshold {sc.abort_threshold})")
    say(TOY_SCALE, f"composed errors (eps_c + delta, eps_s + delta) = {kp.composed_errors}")
    if not kp.accepted:
        say(TOY_SCALE, f"Abort: {kp.reason}")
        return EXIT_ABORT
    agree = kp.alice_key is not None and kp.alice_key == kp.bob_key
    say(TOY_SCALE, f"Accept: {kp.sifted} sifted bits, keys identical: {agree}" +
        (f", {kp.reason}" if kp.reason else ""))
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        tr = SessionTranscript.load(args.transcript)
    except (OSError, ValueError, TypeError) as exc:
        raise UsageError(f"cannot read transcript {args.transcript}: {exc}") from None
    problems = verify_transcript(tr)
    broadcasts = sum(e.kind == "SettingBroadcast" for e in tr.events)
    say(TOY_SCALE, f"{len(tr)} events, {broadcasts} setting broadcasts")
    for p in problems:
        say(TOY_SCALE, f"violation: {p}")
    say(TOY_SCALE, "ordering invariant: " + ("FAIL" if problems else "ok"))
    return EXIT_USAGE if problems else EXIT_OK


def cmd_sweep(args) -> int:
    strategies = {"default": default_strategy, "improved": improved_strategy,
                  "balanced": lambda k: (k / 2, best_log2_eta(k, k / 2))}
    strat = strategies[args.strategy]
    ks = np.linspace(args.k_min, args.k_max, args.points)
    rows = []
    for k in ks:
        m, le = strat(float(k))
        rows.append((float(k), m, le, log2_delta(float(k), m, le)))
    man = make_manifest(args, PAPER_SCALE, {"strategy": args.strategy, "k_min": args.k_min,
                                             "k_max": args.k_max, "points": args.points})
    man.write()
    path = Path(args.out)
    path.write_text(sweep_csv(rows))
    man.stamp(path)
    say(PAPER_SCALE, f"{len(rows)} rows ({args.strategy} strategy) -> {path}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cdiqkd", description="Randomness pipeline and device-independent QKD simulator")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default="."):
        sp.add_argument("--out-dir", default=out_default, help="directory for manifest and artifacts")

    sp = sub.add_parser("params", help="security parameters at true scale")
    sp.add_argument("--k", type=float, required=True)
    sp.add_argument("--m", type=float)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--eta", type=float)
    g.add_argument("--log2-eta", type=float)
    sp.add_argument("--optimize", action="store_true")
    sp.add_argument("--out-dir", default=None)
    sp.set_defaults(func=cmd_params)

    sp = sub.add_parser("extract", help="Trevisan extraction of a bit file")
    sp.add_argument("message")
    sp.add_argument("seed")
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--t", type=int, default=4)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("expand", help="unbounded expansion with two simulated devices")
    sp.add_argument("seed")
    sp.add_argument("--target", type=int, required=True)
    sp.add_argument("--config")
    sp.add_argument("--master-seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_expand)

    sp = sub.add_parser("process", help="full processing protocol at toy seed length")
    sp.add_argument("message")
    sp.add_argument("--config", required=True)
    sp.add_argument("--jobs", type=int, default=0)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_process)

    sp = sub.add_parser("qkd", help="key-distribution session driven by z")
    sp.add_argument("z")
    sp.add_argument("--config")
    sp.add_argument("--eve", default="passive")
    common(sp)
    sp.set_defaults(func=cmd_qkd)

    sp = sub.add_parser("replay", help="re-verify ordering invariants of a saved transcript")
    sp.add_argument("transcript")
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("sweep", help="CSV of log2 delta over a k grid")
    sp.add_argument("--k-min", type=float, default=3e5)
    sp.add_argument("--k-max", type=float, default=1e7)
    sp.add_argument("--points", type=int, default=50)
    sp.add_argument("--strategy", choices=("default", "improved", "balanced"), default="default")
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"[{TOY_SCALE if args.command not in ('params', 'sweep') else PAPER_SCALE}] error: {exc}",
              file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
