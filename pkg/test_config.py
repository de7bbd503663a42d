"""
🧪 ALIGNED SAE LAB - TESTES DE CONFIGURAÇÃO E LOGS
=================================================
RunConfig (pydantic), overrides, configs de exemplo e o logger estruturado
"""

import json

import pytest

from config import Config, RunConfig, apply_overrides, load_run_config, parse_run_config
from exceptions import ConfigError
from logging_system import LogCategory, LogLevel, StructuredLogger, configure_logging, load_logging_config


def test_shipped_configs_load():
    toy = load_run_config(Config.CONFIG_DIR / "toy_model.json")
    assert (toy.n, toy.m, toy.encoder_mode, toy.use_biases, toy.lam) == (2, 1, "standard", False, 0.0)
    desk = load_run_config(Config.CONFIG_DIR / "desk_sweep.json")
    cfg = desk.to_train_config(encoder_mode="standard", seed=3)
    assert cfg.variant.encoder_mode == "standard"
    assert cfg.seed == 3
    assert cfg.validate() is cfg


def test_sweep_skips_tied_unless_requested():
    assert parse_run_config({"n": 4, "m": 8}).include_tied is False
    assert load_run_config(Config.CONFIG_DIR / "desk_sweep.json").include_tied is True


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError) as info:
        parse_run_config({"n": 4, "m": 8, "learning_rate": 0.1}, path="x.json")
    assert "learning_rate" in str(info.value)
    assert info.value.path == "x.json"


def test_range_checks():
    with pytest.raises(ConfigError):
        parse_run_config({"n": 4, "m": 8, "lam": -0.5})
    with pytest.raises(ConfigError):
        parse_run_config({"n": 4, "m": 8, "activation": "topk"})
    with pytest.raises(ConfigError):
        parse_run_config({"n": 4, "m": 8, "activation": "topk", "k": 9})
    assert parse_run_config({"n": 4, "m": 8, "activation": "topk", "k": 8}).k == 8


def test_overrides_are_parsed_as_json():
    data = apply_overrides({"n": 4, "m": 8}, ["lam=0.07", "encoder_mode=tied", "lambdas=[0.1, 0.2]"])
    assert data["lam"] == 0.07
    assert data["encoder_mode"] == "tied"
    assert data["lambdas"] == [0.1, 0.2]
    with pytest.raises(ConfigError):
        apply_overrides({}, ["lam"])
    with pytest.raises(ConfigError):
        apply_overrides({}, ["nonsense=1"])


def test_dump_is_idempotent(tmp_path):
    run = parse_run_config({"n": 4, "m": 8, "seeds": [1, 2], "name": "ç"})
    path = tmp_path / "run.json"
    path.write_text(run.dump(), encoding="utf-8")
    again = load_run_config(path)
    assert again == run
    assert again.dump() == run.dump()


def test_json_syntax_error_reports_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "n": 4,\n  "m": 8,,\n}\n', encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        load_run_config(path)
    assert info.value.line == 3
    assert str(path) in str(info.value)

    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.json")


def test_run_config_assignment_is_validated():
    run = RunConfig(n=4, m=8)
    with pytest.raises(ValueError):
        run.batch_size = 0


# ==========================================
# LOGS
# ==========================================

def test_logging_config_merges_over_defaults(tmp_path):
    path = tmp_path / "logging.json"
    path.write_text(json.dumps({"buffer_size": 5, "file": {"level": "INFO"}}), encoding="utf-8")
    settings = load_logging_config(path)
    assert settings["buffer_size"] == 5
    assert settings["file"]["level"] == "INFO"
    assert settings["file"]["filename"] == "sae_lab.log"

    path.write_text("{oops", encoding="utf-8")
    assert load_logging_config(path)["buffer_size"] == 1000


@pytest.fixture
def restore_logging():
    yield
    configure_logging()


def test_structured_logger_buffer_and_search(tmp_path, restore_logging):
    settings = load_logging_config(tmp_path / "absent.json")
    settings["buffer_size"] = 3
    structured = StructuredLogger(level="WARNING", log_dir=tmp_path / "logs", settings=settings)
    structured.log(LogLevel.INFO, LogCategory.TRAIN, "step 10", step=10)
    structured.log(LogLevel.WARNING, LogCategory.DATA, "dados estranhos")
    structured.log(LogLevel.ERROR, LogCategory.CHECKPOINT, "arquivo truncado")
    structured.log(LogLevel.INFO, LogCategory.TRAIN, "step 20", step=20)

    # buffer guarda só as últimas 3 entradas, em qualquer nível
    entries = structured.search_logs()
    assert [entry.message for entry in entries] == ["dados estranhos", "arquivo truncado", "step 20"]
    assert structured.search_logs(category="TRAIN")[0].extra_data["step"] == 20
    assert len(structured.search_logs(level="ERROR")) == 1
    assert structured.get_log_stats().total_entries == 4
    assert (tmp_path / "logs" / "sae_lab.log").exists()
