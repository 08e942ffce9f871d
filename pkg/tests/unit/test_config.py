"""config.toml loading and environment overrides."""

from __future__ import annotations

import logging

import pytest

from leotrace.config import Config, get_config, reload_config, set_config, setup_logging


@pytest.fixture(autouse=True)
def _restore_global_config():
    previous = get_config()
    yield
    set_config(previous)
    root = logging.getLogger()
    for handler in [h for h in root.handlers if isinstance(h, logging.FileHandler)]:
        root.removeHandler(handler)
        handler.close()


def test_defaults_without_file(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("LEOTRACE_CONFIG_PATH", raising=False)
    config = Config(tmp_path / "missing.toml")
    assert config.log_level == "INFO"
    assert config.log_file is None
    assert str(config.out_dir) == "out"
    assert config.utilization_window_s == pytest.approx(0.010)
    assert config.position_cache_s == pytest.approx(0.001)
    assert config.get("relay.listen_a") == "127.0.0.1:47000"
    assert config.get("relay.nothing", 5) == 5
    assert config.get("relay.listen_a.deeper", "x") == "x"


def test_values_from_file(tmp_path):
    path = tmp_path / "config.toml"
    path.write_text(
        '[logging]\nlevel = "DEBUG"\n\n[output]\nout_dir = "results"\n\n'
        "[simulation]\nutilization_window_ms = 20\n\n[relay]\ngranularity_ms = 2\n",
        encoding="utf-8",
    )
    config = reload_config(path)
    assert get_config() is config
    assert config.log_level == "DEBUG"
    assert str(config.out_dir) == "results"
    assert config.utilization_window_s == pytest.approx(0.020)
    assert config.relay_granularity_s == pytest.approx(0.002)
    # keys absent from the file fall back to property defaults
    assert config.position_cache_s == pytest.approx(0.001)


def test_broken_file_falls_back_to_defaults(tmp_path):
    path = tmp_path / "config.toml"
    path.write_text("[logging\nlevel = ", encoding="utf-8")
    config = Config(path)
    assert config.get("relay.target_b") == "127.0.0.1:47002"


def test_environment_overrides(tmp_path, monkeypatch):
    path = tmp_path / "config.toml"
    path.write_text('[logging]\nlevel = "INFO"\n', encoding="utf-8")
    monkeypatch.setenv("LEOTRACE_LOG_LEVEL", "WARNING")
    monkeypatch.setenv("LEOTRACE_OUT_DIR", str(tmp_path / "elsewhere"))
    config = Config(path)
    assert config.log_level == "WARNING"
    assert config.out_dir == tmp_path / "elsewhere"


def test_config_path_from_environment(tmp_path, monkeypatch):
    path = tmp_path / "custom.toml"
    path.write_text('[output]\nout_dir = "from-env"\n', encoding="utf-8")
    monkeypatch.setenv("LEOTRACE_CONFIG_PATH", str(path))
    assert str(Config().out_dir) == "from-env"


def test_setup_logging_writes_to_file(tmp_path):
    path = tmp_path / "config.toml"
    log_file = tmp_path / "run.log"
    path.write_text(f'[logging]\nlevel = "DEBUG"\nlog_file = "{log_file.as_posix()}"\n', encoding="utf-8")
    setup_logging(Config(path))
    logging.getLogger("leotrace.test").debug("hello from the test")
    for handler in logging.getLogger().handlers:
        handler.flush()
    assert "hello from the test" in log_file.read_text(encoding="utf-8")
    setup_logging(Config(path), level="WARNING")
    assert logging.getLogger().level == logging.WARNING
