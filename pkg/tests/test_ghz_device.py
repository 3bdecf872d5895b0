import json
import math

import numpy as np
import pytest
from scipy.stats import chi2_contingency

from cdiqkd.ghz_device import (GAME_INPUTS, GHZ_STATE, PAULI_X, PAULI_Y, Device, DeviceError, DeviceModel,
                               DeviceUnresponsive, GhzInput, GhzOutput, classical_game_value,
                               component_marginal, derive_rng, ghz_win, is_eigenstate, operator_expectation)

import oracles


def test_win_examples():
    assert ghz_win(GhzInput(1, 1, 1), GhzOutput(1, 0, 0))
    assert ghz_win(GhzInput(1, 0, 0), GhzOutput(0, 0, 0))
    assert not ghz_win(GhzInput(1, 1, 1), GhzOutput(1, 1, 0))


def test_input_validation():
    with pytest.raises(ValueError):
        GhzInput(2, 0, 0)
    assert GhzInput(0, 1, 0).is_game_input and not GhzInput(0, 0, 0).is_game_input


def test_eigenvalue_identities():
    assert np.isclose(np.linalg.norm(GHZ_STATE), 1)
    assert is_eigenstate([PAULI_X, PAULI_X, PAULI_X], -1)
    for ops in ([PAULI_X, PAULI_Y, PAULI_Y], [PAULI_Y, PAULI_X, PAULI_Y], [PAULI_Y, PAULI_Y, PAULI_X]):
        assert is_eigenstate(ops, +1)
    assert operator_expectation([PAULI_X, PAULI_X, PAULI_X]) == pytest.approx(-1)
    # component 1 alone is maximally mixed, so generating outputs are uniform
    assert operator_expectation([PAULI_X, np.eye(2), np.eye(2)]) == pytest.approx(0)


class TestClassicalValue:
    def test_exhaustive(self):
        assert classical_game_value() == 0.75
        assert len(oracles.ghz_strategies()) == 64

    def test_constant_zero(self):
        assert classical_game_value([((0, 0), (0, 0), (0, 0))]) == 0.75

    def test_no_perfect_strategy(self):
        for strat in oracles.ghz_strategies():
            wins = sum(ghz_win(GhzInput(*x), GhzOutput(*(strat[i][x[i]] for i in range(3)))) for x in GAME_INPUTS)
            assert wins < 4


class TestHonest:
    @pytest.mark.parametrize("inp", GAME_INPUTS)
    def test_always_wins(self, inp):
        dev = Device(DeviceModel.honest(), derive_rng(3, inp))
        assert all(ghz_win(GhzInput(*inp), dev.query(GhzInput(*inp))) for _ in range(2000))

    def test_generating_output_uniform(self):
        counts = component_marginal(DeviceModel.honest(), GhzInput(1, 1, 1), 20000, derive_rng(4))
        assert abs(counts[1] / counts.sum() - 0.5) < 4 * math.sqrt(0.25 / 20000)

    @pytest.mark.parametrize("model", [DeviceModel.honest(), DeviceModel.noisy(0.2)], ids=["honest", "noisy"])
    def test_no_signalling_chi2(self, model):
        # component 1 keeps input 1; toggle the others between 111 and 100
        rng = derive_rng(5, "ns", model.kind)
        a = component_marginal(model, GhzInput(1, 1, 1), 100000, rng)
        b = component_marginal(model, GhzInput(1, 0, 0), 100000, rng)
        assert chi2_contingency(np.array([a, b]))[1] > 1e-3

    def test_components_see_only_their_bit(self):
        dev = Device(DeviceModel.honest(), derive_rng(6))
        for x in GAME_INPUTS:
            dev.query(GhzInput(*x))
        for i, comp in enumerate(dev.components):
            assert comp.inputs_seen == [x[i] for x in GAME_INPUTS]


class TestOtherModels:
    def test_constant_zero_truth_table(self):
        dev = Device(DeviceModel.constant_zero())
        results = {x: ghz_win(GhzInput(*x), dev.query(GhzInput(*x))) for x in GAME_INPUTS}
        assert results == {(1, 1, 1): False, (1, 0, 0): True, (0, 1, 0): True, (0, 0, 1): True}

    def test_noisy_loss_rate(self):
        p, n = 0.1, 20000
        dev = Device(DeviceModel.noisy(p), derive_rng(7))
        losses = sum(not ghz_win(GhzInput(1, 1, 1), dev.query(GhzInput(1, 1, 1))) for _ in range(n))
        assert abs(losses / n - p) < 3 * math.sqrt(p * (1 - p) / n) + 1e-3

    def test_deterministic_loses_a_quarter(self):
        rng = np.random.default_rng(0)
        for strat in oracles.ghz_strategies()[::7]:
            dev = Device(DeviceModel.deterministic(strat))
            picks = rng.integers(4, size=4000)
            losses = sum(not ghz_win(GhzInput(*GAME_INPUTS[i]), dev.query(GhzInput(*GAME_INPUTS[i]))) for i in picks)
            assert losses / 4000 >= 0.25 - 3 * math.sqrt(0.1875 / 4000)

    def test_scripted_json(self, tmp_path):
        path = tmp_path / "table.json"
        path.write_text(json.dumps({"0": [1, 0, 0], "1": [0, 0, 0]}))
        dev = Device(DeviceModel.scripted_from_json(path))
        assert dev.query(GhzInput(1, 1, 1)).bits == (1, 0, 0)
        assert dev.query(GhzInput(1, 0, 0)).bits == (0, 0, 0)
        with pytest.raises(DeviceUnresponsive):
            dev.query(GhzInput(1, 1, 1))

    def test_model_validation_and_roundtrip(self):
        with pytest.raises(ValueError):
            DeviceModel.noisy(0.7)
        with pytest.raises(ValueError):
            DeviceModel("quantum-magic")
        for model in (DeviceModel.honest(), DeviceModel.noisy(0.2), DeviceModel.constant_zero(),
                      DeviceModel.scripted({3: (1, 1, 1)})):
            assert DeviceModel.from_dict(json.loads(json.dumps(model.to_dict()))) == model


def test_retired_and_aborted_devices_refuse():
    dev = Device()
    dev.retire()
    with pytest.raises(DeviceError, match="retired"):
        dev.query(GhzInput(1, 1, 1))
    dev = Device()
    dev.mark_aborted()
    with pytest.raises(DeviceError, match="aborted"):
        dev.query(GhzInput(1, 1, 1))


def test_rng_domain_separation():
    a = derive_rng(1, "device", 0, "A").random(4)
    assert np.array_equal(a, derive_rng(1, "device", 0, "A").random(4))
    assert not np.array_equal(a, derive_rng(1, "device", 0, "B").random(4))
    assert not np.array_equal(a, derive_rng(2, "device", 0, "A").random(4))
