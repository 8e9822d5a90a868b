import json

import pytest

from scenephys.config import ConfigError, RunConfig, defaults, from_dict, resolve


def test_defaults_resolve_to_default_config():
    assert resolve(environ={}) == RunConfig()


def test_layers_apply_in_order_file_env_set(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text("[evaluator.sim]\ndt = 0.01\n[run]\nworkers = 3\n[tto]\nsteps = 7\n")
    env = {"SCENEPHYS_EVALUATOR__SIM__DT": "0.005", "SCENEPHYS_TTO__STEPS": "9"}
    cfg = resolve(path, ["tto.steps=11"], environ=env)
    assert cfg.run.workers == 3
    assert cfg.evaluator.sim.dt == 0.005
    assert cfg.tto.steps == 11


def test_unrelated_environment_is_ignored():
    assert resolve(environ={"HOME": "/x", "SCENEPHYS_": "1"}) == RunConfig()


def test_free_maps_accept_data_keys():
    cfg = resolve(sets=["corpus.violation_mix={collision = 0.2}"], environ={})
    assert cfg.corpus.violation_mix == {"collision": 0.2}


@pytest.mark.parametrize("sets", [["tto.nonsense=1"], ["nosuch.key=1"], ["tto=3"], ["tto.steps"], ["=3"],
                                  ["run.workers=0"]])
def test_bad_overrides_raise_config_error(sets):
    with pytest.raises(ConfigError):
        resolve(sets=sets, environ={})


def test_unparseable_file_raises_config_error(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[tto\nsteps = ")
    with pytest.raises(ConfigError):
        resolve(path, environ={})
    with pytest.raises(ConfigError):
        resolve(tmp_path / "missing.toml", environ={})


def test_plain_dict_round_trip():
    cfg = resolve(sets=["grpo.K=6", "grpo.perturbation.yaw=0.2", "evaluator.reach.num_pairs=30"], environ={})
    assert from_dict(json.loads(cfg.to_json())) == cfg
    assert cfg.grpo_config().K == 6
    assert cfg.grpo_config().reward_config.enabled == cfg.grpo.reward_enabled


def test_json_is_sorted_and_stable():
    text = RunConfig().to_json()
    assert text == json.dumps(json.loads(text), indent=2, sort_keys=True) + "\n"
    assert set(defaults()) == {"run", "evaluator", "tto", "corpus", "grpo"}
