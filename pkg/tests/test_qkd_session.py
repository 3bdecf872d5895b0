import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cdiqkd.bitcore import BitString
from cdiqkd.qkd_session import (CLASSICAL_KINDS, SINGLET_RHO, TSIRELSON, BudgetShortfall, Event, EveModel,
                                OrderingViolation, SessionConfig, SessionTranscript, analytic_chsh,
                                chsh_from_counts, compose_errors, expected_qber, projector, role_budget,
                                run_session, select_tests, session_budget, singlet_correlator,
                                verify_transcript, werner_state)

import oracles
from fixtures import random_bits

SMALL = SessionConfig(rounds=600, test_fraction=0.5, min_per_pair=20, key_length=16)


def z_for(config, *labels):
    return random_bits(session_budget(config)["total"], "z", *labels)


class TestPhysics:
    def test_projectors(self):
        for a in (0.0, 0.3, math.pi / 2):
            p0, p1 = projector(a, 0), projector(a, 1)
            assert np.allclose(p0 + p1, np.eye(2)) and np.allclose(p0 @ p0, p0)

    def test_singlet_correlators(self):
        for a, b in [(0, 0), (0, math.pi / 4), (math.pi / 2, -math.pi / 4), (0.7, 0.1)]:
            obs_a = projector(a, 0) - projector(a, 1)
            obs_b = projector(b, 0) - projector(b, 1)
            exact = np.real(np.trace(SINGLET_RHO @ np.kron(obs_a, obs_b)))
            assert exact == pytest.approx(singlet_correlator(a, b), abs=1e-12)

    def test_analytic_chsh(self):
        assert analytic_chsh() == pytest.approx(TSIRELSON, abs=1e-12)

    def test_werner(self):
        rho = werner_state(0.3)
        assert np.trace(rho) == pytest.approx(1) and np.allclose(rho, rho.conj().T)
        assert expected_qber(0.2) == 0.1


class TestChsh:
    def test_uncorrelated_near_zero(self):
        rng = np.random.default_rng(0)
        counts = {}
        for xy in itertools.product((0, 1), repeat=2):
            same = int(rng.binomial(4000, 0.5))
            counts[xy] = [same, 4000 - same]
        est = chsh_from_counts(counts)
        assert est.score < 4 * 2 / math.sqrt(4000)

    def test_deterministic_local_bound(self):
        assert oracles.chsh_deterministic_max() == 2
        for a0, a1, b0, b1 in itertools.product((0, 1), repeat=4):
            a, b = (a0, a1), (b0, b1)
            counts = {(x, y): [10, 0] if a[x] == b[y] else [0, 10] for x in (0, 1) for y in (0, 1)}
            assert chsh_from_counts(counts).score <= 2

    def test_inconclusive(self):
        est = chsh_from_counts({(0, 0): [5, 0], (0, 1): [5, 5], (1, 0): [3, 3], (1, 1): [0, 9]}, min_per_pair=6)
        assert not est.conclusive


class TestCompose:
    def test_examples(self):
        assert compose_errors((0.01, 0.02), 0) == (0.01, 0.02)
        assert compose_errors((0.01, 0.02), 0.005) == pytest.approx((0.015, 0.025))
        assert compose_errors((0.9, 0.9), 0.5) == (1.0, 1.0)
        with pytest.raises(ValueError):
            compose_errors((0.1, -0.1), 0)

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
    def test_additive(self, ec, es, d1, d2):
        once = compose_errors((ec, es), d1 + d2)
        twice = compose_errors(compose_errors((ec, es), d1), d2)
        assert twice == pytest.approx(once, abs=1e-12)
        assert compose_errors(compose_errors((ec, es), d2), d1) == pytest.approx(twice, abs=1e-12)


class TestBudget:
    def test_layout(self):
        b = session_budget(SMALL)
        assert b["settings"] == 1200 and b["total"] == b["settings"] + b["roles"] + b["pa_seed"]
        assert b["roles"] == role_budget(600, 300) > 590

    def test_shortfall(self):
        z = z_for(SMALL)[:-1]
        with pytest.raises(BudgetShortfall, match=str(session_budget(SMALL)["total"])):
            run_session(z, SMALL)

    @given(st.integers(1, 300), st.data())
    @settings(max_examples=30)
    def test_select_exact_count(self, rounds, data):
        tests = data.draw(st.integers(0, rounds))
        roles = select_tests(random_bits(role_budget(rounds, tests), "sel", rounds, tests), rounds, tests)
        assert len(roles) == rounds and sum(roles) == tests


class TestSession:
    def test_honest_accepts_with_equal_keys(self):
        kp, tr = run_session(z_for(SMALL, "h"), SMALL)
        assert kp.accepted and kp.alice_key == kp.bob_key and len(kp.alice_key) == 16
        assert kp.chsh.score > 2.4 and kp.qber == 0
        assert verify_transcript(tr) == []

    def test_intercept_resend_aborts(self):
        kp, _ = run_session(z_for(SMALL, "i"), SMALL, EveModel.intercept_resend(1.0))
        assert not kp.accepted and kp.chsh.score < 2.2 and "threshold" in kp.reason

    def test_zero_rounds_degenerate(self):
        kp, tr = run_session(BitString.zeros(0), SessionConfig(rounds=0))
        assert kp.status == "Abort" and len(tr) == 0 and tr.degenerate

    def test_passive_eve_sees_exactly_classical_events(self):
        eve = EveModel.passive()
        _, tr = run_session(z_for(SMALL, "eve"), SMALL, eve)
        assert eve.knowledge == [e for e in tr.events if e.classical]
        assert {e.kind for e in eve.knowledge} <= CLASSICAL_KINDS

    def test_eve_learns_bob_settings_only_at_broadcast(self):
        eve = EveModel.passive()
        z = z_for(SMALL, "leak")
        _, tr = run_session(z, SMALL, eve)
        first_summary = next(i for i, e in enumerate(eve.knowledge) if e.kind == "Classical")
        for pos, ev in enumerate(eve.knowledge[:first_summary]):
            if ev.kind == "SettingBroadcast":
                assert ev.setting == z[2 * ev.round - 1]
            else:
                assert ev.setting is None
        # Alice's own settings are revealed only after the last round
        assert all(e.kind != "Measurement" for e in eve.knowledge)

    def test_passive_eve_changes_nothing(self):
        z = z_for(SMALL, "p")
        a, _ = run_session(z, SMALL)
        b, _ = run_session(z, SMALL, EveModel.passive())
        assert a.alice_key == b.alice_key and a.chsh.score == b.chsh.score

    def test_source_tamper_product_state(self):
        # Eve hands out |00>; no Bell violation survives
        prod = np.zeros((4, 4), dtype=complex)
        prod[0, 0] = 1
        kp, _ = run_session(z_for(SMALL, "t"), SMALL, EveModel.source_tamper(lambda i, rng: prod))
        assert not kp.accepted and kp.chsh.score <= 2 + 4 * 2 / math.sqrt(75)

    def test_loss_abandons_rounds(self):
        cfg = SessionConfig(rounds=600, min_per_pair=10, key_length=16, loss=0.3)
        kp, tr = run_session(z_for(cfg, "loss"), cfg)
        abandoned = [e for e in tr.events if e.kind == "RoundAbandoned"]
        assert 120 < len(abandoned) < 240
        acked = {e.round for e in tr.events if e.kind == "BobAck"}
        assert all(e.round not in acked for e in abandoned)
        assert all(e.round in acked for e in tr.events if e.kind == "SettingBroadcast")
        assert verify_transcript(tr) == []

    def test_noise_qber(self):
        p = 0.1
        cfg = SessionConfig(rounds=4000, noise=p, min_per_pair=50, abort_threshold=2.0)
        kp, _ = run_session(z_for(cfg, "noise"), cfg)
        sigma = math.sqrt(expected_qber(p) * (1 - expected_qber(p)) / kp.sifted)
        assert abs(kp.qber - expected_qber(p)) < 3 * sigma
        assert kp.accepted and kp.alice_key is None and "reconciliation" in kp.reason

    def test_composed_errors_carried(self):
        cfg = SessionConfig(rounds=600, min_per_pair=20, key_length=16, inner_errors=(0.01, 0.02), delta=0.005)
        kp, _ = run_session(z_for(cfg, "c"), cfg)
        assert kp.composed_errors == pytest.approx((0.015, 0.025)) and not kp.vacuous

    def test_deterministic(self):
        z = z_for(SMALL, "det")
        (a, ta), (b, tb) = run_session(z, SMALL), run_session(z, SMALL)
        assert a.alice_key == b.alice_key and ta.to_jsonl() == tb.to_jsonl()


class TestTranscript:
    def test_round_order(self):
        _, tr = run_session(z_for(SMALL, "o"), SMALL)
        kinds = [(e.kind, e.party) for e in tr.events if e.round == 7 and e.kind != "Classical"]
        assert kinds == [("PairSent", None), ("PairSent", None), ("Measurement", "A"), ("BobAck", None),
                         ("SettingBroadcast", None), ("Measurement", "B")]
        idx = {e.kind: e.index for e in tr.events if e.round == 7}
        assert idx["SettingBroadcast"] > idx["BobAck"]

    def test_jsonl_roundtrip(self, tmp_path):
        _, tr = run_session(z_for(SMALL, "j"), SMALL)
        path = tmp_path / "t.jsonl"
        tr.save(path)
        back = SessionTranscript.load(path)
        assert back.events == tr.events and verify_transcript(back) == []
        lines = path.read_text().splitlines()
        assert [json.loads(line)["index"] for line in lines] == list(range(len(tr)))

    def test_detects_swapped_broadcast(self):
        _, tr = run_session(z_for(SMALL, "sw"), SMALL)
        evs = list(tr.events)
        ack = next(i for i, e in enumerate(evs) if e.kind == "BobAck")
        bc = ack + 1
        assert evs[bc].kind == "SettingBroadcast"
        evs[ack], evs[bc] = Event(ack, **_fields(evs[bc])), Event(bc, **_fields(evs[ack]))
        problems = verify_transcript(evs)
        assert any("before BobAck" in p for p in problems)

    def test_detects_bad_index(self):
        evs = [Event(0, "PairSent", round=1, particle=1), Event(5, "PairSent", round=1, particle=2)]
        assert verify_transcript(evs) == ["event at position 1 carries index 5"]

    def test_violation_is_assertion(self):
        assert issubclass(OrderingViolation, AssertionError)


def _fields(ev):
    d = ev.to_dict()
    del d["index"], d["kind"]
    return {"kind": ev.kind, **d}
