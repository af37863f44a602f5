import pytest

from src.errors import ConfigError, InputFileError
from src.pipeline.config import PipelineConfig, from_yaml, load_config


def _yaml(tmp_path, text):
    path = tmp_path / "cfg.yaml"
    path.write_text(text, encoding="utf-8")
    return path


def test_precedence_flags_yaml_env(tmp_path):
    """flags > YAML > entorno > valores por defecto."""
    env = {"KG2TOOL_SEED": "1", "KG2TOOL_PER_PATTERN": "5", "KG2TOOL_DISTRACTORS": "7"}
    cfg_file = _yaml(tmp_path, "seed: 2\nper_pattern: 6\n")
    cfg = load_config({"seed": 3}, cfg_file, environ=env)
    assert cfg.seed == 3
    assert cfg.per_pattern == 6
    assert cfg.distractors == 7
    assert cfg.review_prob == 0.3


def test_env_values_are_coerced():
    """Listas y números desde variables de entorno."""
    env = {"KG2TOOL_PATTERNS": "1p, 2i", "KG2TOOL_SPLIT": "0.1", "KG2TOOL_LENIENT": "true"}
    cfg = load_config(environ=env)
    assert cfg.patterns == ("1p", "2i")
    assert cfg.split == 0.1
    assert cfg.lenient is True


def test_yaml_llm_section(tmp_path):
    """La sección llm se combina con LLM_* del entorno."""
    cfg_file = _yaml(tmp_path, "llm:\n  model: tiny\n  timeout: 5\n")
    cfg = load_config(config_path=cfg_file, environ={"LLM_BASE_URL": "http://x/v1"})
    assert cfg.llm.model == "tiny" and cfg.llm.timeout == 5
    assert cfg.llm.configured


def test_yaml_unknown_keys(tmp_path):
    """Claves desconocidas → ConfigError con su nombre."""
    with pytest.raises(ConfigError) as info:
        from_yaml(_yaml(tmp_path, "seeds: 3\nllm:\n  colour: red\n"))
    assert "seeds" in str(info.value) and "llm.colour" in str(info.value)


def test_missing_yaml():
    with pytest.raises(InputFileError):
        from_yaml("no/such/config.yaml")


def test_bad_value():
    """Un número ilegible se informa por campo."""
    with pytest.raises(ConfigError) as info:
        load_config(environ={"KG2TOOL_PER_PATTERN": "many"})
    assert info.value.messages[0].startswith("per_pattern")


def test_validation_messages():
    """Un mensaje por campo inválido."""
    cfg = PipelineConfig(patterns=("1p", "9x"), per_pattern=0, review_prob=2.0,
                         format="csv", split=1.0)
    messages = cfg.validate()
    fields = {m.split(":")[0] for m in messages}
    assert fields == {"patterns", "seed", "per_pattern", "review_prob", "format", "split"}
    with pytest.raises(ConfigError):
        cfg.check()


def test_seed_only_required_when_asked():
    """verify y stats no necesitan semilla."""
    assert PipelineConfig().validate(require_seed=False) == []
    assert PipelineConfig(seed=0).validate() == []


def test_pool_size_and_manifest():
    """El pool efectivo nunca es menor que per_pattern."""
    cfg = PipelineConfig(seed=1, per_pattern=8, pool_size=3)
    assert cfg.effective_pool == 8
    manifest = cfg.to_manifest()
    assert manifest["pool_size"] == 8 and manifest["seed"] == 1
    assert "out" not in manifest and "workers" not in manifest
