import pytest

from trajcurate.config import ConfigError, PipelineConfig, from_dict, load, loads
from trajcurate.scoring import ScoringFunction


def test_defaults_round_trip():
    cfg = PipelineConfig()
    assert loads(cfg.dumps()) == cfg
    assert load(None) == cfg


def test_partial_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("partition:\n  l_min: 4\n  l_max: 12\ncurate:\n  tau_seg: 8\njudge:\n  failure_policy: degrade\n")
    cfg = load(p)
    assert (cfg.partition.l_min, cfg.partition.l_max) == (4, 12)
    assert cfg.curate.tau_seg == 8.0 and isinstance(cfg.curate.tau_seg, float)
    assert cfg.curation().failure_policy == "degrade"
    assert loads(cfg.dumps()) == cfg


def test_scoring_functions_from_yaml():
    cfg = loads("scoring:\n  functions:\n    - {family: cap, features: [tool_calls], params: {w: 1, M: 5}}\n")
    assert cfg.scoring.functions == (ScoringFunction("cap", ("tool_calls",), {"w": 1, "M": 5}),)


@pytest.mark.parametrize("text", [
    "bogus: {}",
    "partition: {l_mni: 3}",
    "partition: {l_min: 5, l_max: 2}",
    "partition: {l_min: 2.5}",
    "screen: {tau_global: 2}",
    "curate: {tau_seg: 0}",
    "curate: {emit_mode: everything}",
    "judge: {kind: remote}",
    "judge: {concurrency: 0}",
    "fit: {learning_rate: fast}",
    "- a list",
])
def test_rejects_bad_config(text):
    with pytest.raises(ConfigError):
        loads(text)


def test_override():
    cfg = PipelineConfig().override("curate", tau_seg=9, emit_mode=None)
    assert cfg.curate.tau_seg == 9.0 and cfg.curate.emit_mode == "segments"
    with pytest.raises(ConfigError):
        cfg.override("screen", tau_global=3.0)
    with pytest.raises(ConfigError):
        cfg.override("screen", nonsense=1)


def test_no_secret_field():
    # the judge token is read from the environment; the config only names the variable
    d = from_dict({}).to_dict()["judge"]
    assert "api_key_env" in d and not any(k in d for k in ("api_key", "token"))
