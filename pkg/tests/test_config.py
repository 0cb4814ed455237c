"""
Unit Tests for Configuration Module

Tests process settings and the flat key=value run configuration.
"""

import pytest

from app.config import (
    MODEL_KEYS,
    TRAINING_KEYS,
    RunConfig,
    Settings,
    build_run_config,
    known_keys,
    load_run_config,
    parse_config_text,
)
from app.exceptions import ConfigError


class TestSettings:
    """Test Settings configuration"""

    def test_settings_loads_successfully(self):
        """Test that Settings can be instantiated"""
        settings = Settings()

        # Verify core attributes exist
        assert hasattr(settings, "PROJECT_NAME")
        assert hasattr(settings, "DEBUG")
        assert hasattr(settings, "LOG_DIR")
        assert hasattr(settings, "SLOW_STAGE_THRESHOLD_MS")

    def test_project_name_is_non_empty(self):
        """Test that PROJECT_NAME is set"""
        settings = Settings()

        assert settings.PROJECT_NAME
        assert len(settings.PROJECT_NAME) > 0

    def test_debug_is_boolean(self):
        """Test that DEBUG is a boolean"""
        settings = Settings()

        assert isinstance(settings.DEBUG, bool)

    def test_log_path_joins_dir_and_file(self):
        """Test that log_path combines LOG_DIR and LOG_FILE"""
        settings = Settings(LOG_DIR="runs/logs", LOG_FILE="train.log")

        assert settings.log_path().as_posix() == "runs/logs/train.log"

    def test_environment_override(self, monkeypatch):
        """Test that environment variables override defaults"""
        monkeypatch.setenv("DEFAULT_SEED", "99")

        assert Settings().DEFAULT_SEED == 99


class TestParseConfigText:
    """Test parse_config_text"""

    def test_parses_pairs_comments_and_blanks(self):
        """Test key=value lines with comments and blank lines"""
        values = parse_config_text("# run\nd_model = 32\n\nlearning_rate=0.01\n")

        assert values == {"d_model": "32", "learning_rate": "0.01"}

    def test_unknown_key_names_key_and_line(self):
        """Test that a typo fails with the key and line number"""
        with pytest.raises(ConfigError) as exc_info:
            parse_config_text("epochs=3\nlearnig_rate=0.1\n", "run.cfg")

        assert "learnig_rate" in str(exc_info.value)
        assert "run.cfg:2" in str(exc_info.value)

    @pytest.mark.parametrize("text", ["epochs 3", "=3", "epochs=1\nepochs=2"])
    def test_malformed_lines(self, text):
        """Test missing '=', empty keys and duplicates"""
        with pytest.raises(ConfigError):
            parse_config_text(text)

    def test_value_may_contain_equals(self):
        """Test that only the first '=' splits"""
        assert parse_config_text("data_dir=a=b")["data_dir"] == "a=b"


class TestBuildRunConfig:
    """Test build_run_config and RunConfig"""

    def test_routes_keys_to_schemas(self):
        """Test that model, training and run keys land in their sections"""
        run = build_run_config({"d_model": "32", "head_count": "4", "epochs": "7", "data_dir": "data"})

        assert run.model.d_model == 32
        assert run.training.epochs == 7
        assert run.data_dir == "data"

    def test_boolean_strings(self):
        """Test that true/false strings parse as booleans"""
        assert build_run_config({"share_encoders": "false"}).model.share_encoders is False

    def test_invalid_value_is_config_error(self):
        """Test that schema violations become ConfigError"""
        with pytest.raises(ConfigError, match="d_model"):
            build_run_config({"d_model": "30", "head_count": "4"})
        with pytest.raises(ConfigError):
            build_run_config({"dropout_rate": "1.5"})

    def test_key_sets_are_disjoint(self):
        """Test that no key belongs to two schemas"""
        assert not (MODEL_KEYS & TRAINING_KEYS)
        assert {"seed", "epochs", "out_dir"} <= known_keys()

    def test_text_round_trip(self, tmp_path):
        """Test that to_text reads back to an equal RunConfig"""
        run = build_run_config({"d_model": "16", "head_count": "2", "patience": "0", "out_dir": "runs/a"})
        path = tmp_path / "run_config.txt"
        path.write_text(run.to_text(), encoding="utf-8")

        assert load_run_config(path) == run

    def test_defaults(self):
        """Test that an empty configuration validates"""
        run = RunConfig()

        assert run.model.share_encoders is True
        assert run.training.learning_rate == 1e-3
        assert run.embeddings is None


class TestLoadRunConfig:
    """Test load_run_config"""

    def test_flags_win_over_file(self, tmp_path):
        """Test that overrides replace file values and None is skipped"""
        path = tmp_path / "run.cfg"
        path.write_text("epochs=3\nbatch_size=8\n", encoding="utf-8")
        run = load_run_config(path, {"epochs": 5, "batch_size": None})

        assert run.training.epochs == 5
        assert run.training.batch_size == 8

    def test_missing_file(self, tmp_path):
        """Test that a missing config file is a ConfigError"""
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "absent.cfg")

    def test_unknown_override(self):
        """Test that an unknown override key is rejected"""
        with pytest.raises(ConfigError, match="colour"):
            load_run_config(None, {"colour": "blue"})


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
