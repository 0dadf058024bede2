import json

import numpy as np
import pytest

from config import env_threads, load_run_config, parse_run_config
from exceptions import ConfigError


def test_defaults_describe_the_rabi_model():
    config = load_run_config(None)
    params = config.params()
    assert (params.n_spins, params.n_modes) == (1, 1)
    assert params.coupling[0, 0] == 1.0 and params.tunneling[0] == 1.0
    assert config.truncation.fock_cutoff == 12
    assert config.output.format is None


def test_model_sized_defaults():
    config = parse_run_config({"model": {"n_spins": 3, "n_modes": 1,
                                         "coupling": [0.5, 0.5, 0.5], "tunneling": [1, 1, 1]}})
    params = config.params()
    (sigma, xi), = config.functional_targets(params)
    np.testing.assert_allclose(sigma, [0.4, 0.05, -0.3])
    np.testing.assert_array_equal(xi, [0.0])
    assert config.adiabatic_sigmas(params)[0].size == 3
    pots = config.spectrum_potentials(params)
    assert pots.v.size == 3 and pots.j.size == 1


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_run_config({"modle": {}})
    with pytest.raises(ConfigError, match="truncation"):
        parse_run_config({"truncation": {"cutoff": 10}})
    with pytest.raises(ConfigError, match="targets"):
        parse_run_config({"functional": {"targets": [{"sigma": [0.1], "xi": [0.0], "w": 1}]}})


@pytest.mark.parametrize("document", [
    {"truncation": {"fock_cutoff": "12"}},
    {"truncation": {"fock_cutoff": 12.5}},
    {"functional": {"aufbau": 1}},
    {"curve": {"lambdas": 1.0}},
    {"curve": {"method": "exact"}},
    {"output": {"format": "png"}},
    {"output": {"threads": 0}},
    {"truncation": {"fock_cutoff": 1}},
    {"regular_set": {"arrangement": "random"}},
    {"model": []},
])
def test_bad_values(document):
    with pytest.raises(ConfigError):
        parse_run_config(document)


def test_bad_model_parameters():
    with pytest.raises(ConfigError):
        parse_run_config({"model": {"tunneling": [0.0]}})
    with pytest.raises(ConfigError):
        parse_run_config({"model": {"n_spins": 2, "coupling": [1.0], "tunneling": [1.0, 1.0]}})
    with pytest.raises(ConfigError, match="targets"):
        parse_run_config({"functional": {"targets": [{"sigma": [0.1, 0.2], "xi": [0.0]}]}})
    with pytest.raises(ConfigError, match="spectrum"):
        parse_run_config({"spectrum": {"v": [0.1, 0.2]}})


def test_numbers_are_coerced_to_float():
    config = parse_run_config({"curve": {"tol": 1, "sigma_min": -1}})
    assert isinstance(config.curve.tol, float)
    assert config.curve.sigma_min == -1.0


def test_dump_round_trip(tmp_path):
    document = {
        "model": {"n_spins": 2, "n_modes": 1, "coupling": [0.8, 0.5], "tunneling": [1.0, 0.7]},
        "functional": {"targets": [{"sigma": [0.3, -0.1], "xi": [0.2]}], "methods": ["lieb"]},
        "output": {"seed": 4},
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(document))
    config = load_run_config(str(path))
    again = parse_run_config(json.loads(json.dumps(config.to_dict())))
    assert again.to_dict() == config.to_dict()
    assert again.output.seed == 4
    assert again.functional.targets[0].xi == [0.2]


def test_unreadable_or_invalid_files(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_run_config(str(tmp_path / "missing.json"))
    broken = tmp_path / "broken.json"
    broken.write_text("{\"model\": ")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_run_config(str(broken))


def test_thread_environment(monkeypatch):
    monkeypatch.setenv("DICKE_DFT_THREADS", "3")
    assert env_threads() == 3
    monkeypatch.setenv("DICKE_DFT_THREADS", "0")
    assert env_threads() == 1
    monkeypatch.setenv("DICKE_DFT_THREADS", "many")
    with pytest.raises(ConfigError):
        env_threads()
