"""Application Configuration"""

import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError
from pydantic_settings import BaseSettings

from app.exceptions import ConfigError
from app.schemas.grading import ModelConfig, TrainingConfig

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Process settings loaded from environment variables."""

    PROJECT_NAME: str = "Multiway ASAG"
    DEBUG: bool = False

    # Logging
    LOG_DIR: str = "logs"
    LOG_FILE: str = "training.log"

    # Stages slower than this are warned on the performance logger
    SLOW_STAGE_THRESHOLD_MS: float = 60_000.0

    DEFAULT_SEED: int = 13

    class Config:
        env_file = ".env"
        case_sensitive = True

    def log_path(self) -> Path:
        return Path(self.LOG_DIR) / self.LOG_FILE


# Create settings instance
settings = Settings()


# ----------------------------------------------------------------------
# Run configuration (flat key=value files)
# ----------------------------------------------------------------------


class RunConfig(BaseModel):
    """
    Everything one CLI run needs: architecture, optimizer settings and data paths.

    The on-disk form is flat: model and training keys share one namespace,
    so a key is routed by whichever schema declares it.
    """

    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    model: ModelConfig = Field(default_factory=ModelConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    data_dir: Optional[str] = Field(None, description="Directory holding train.tsv / valid.tsv / test.tsv")
    out_dir: Optional[str] = Field(None, description="Directory receiving checkpoints and metrics")
    embeddings: Optional[str] = Field(None, description="Optional pre-trained word-vector text file")

    def to_text(self) -> str:
        """Flat key=value rendering, sorted by key, that load_run_config reads back."""
        values: Dict[str, Any] = {}
        values.update(self.model.model_dump())
        values.update(self.training.model_dump())
        for key in RUN_KEYS:
            value = getattr(self, key)
            if value is not None:
                values[key] = value
        return "".join(f"{key}={_render(values[key])}\n" for key in sorted(values))


RUN_KEYS = ("data_dir", "out_dir", "embeddings")
MODEL_KEYS = frozenset(ModelConfig.model_fields)
TRAINING_KEYS = frozenset(TrainingConfig.model_fields)


def _render(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def known_keys() -> frozenset:
    return MODEL_KEYS | TRAINING_KEYS | frozenset(RUN_KEYS)


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """
    Parse flat key=value lines; blank lines and lines starting with # are ignored.

    Raises:
        ConfigError: On a line without '=', an empty or unknown key, or a repeated key
    """
    values: Dict[str, str] = {}
    allowed = known_keys()
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_number}: expected key=value, got '{line}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{line_number}: empty key")
        if key not in allowed:
            raise ConfigError(f"{source}:{line_number}: unknown config key '{key}'")
        if key in values:
            raise ConfigError(f"{source}:{line_number}: duplicate config key '{key}'")
        values[key] = value
    return values


def build_run_config(values: Mapping[str, Any]) -> RunConfig:
    """
    Route flat values to their schemas and validate them.

    Raises:
        ConfigError: On an unknown key or a value that fails validation
    """
    model_values: Dict[str, Any] = {}
    training_values: Dict[str, Any] = {}
    run_values: Dict[str, Any] = {}
    for key, value in values.items():
        if key in MODEL_KEYS:
            model_values[key] = value
        elif key in TRAINING_KEYS:
            training_values[key] = value
        elif key in RUN_KEYS:
            run_values[key] = value
        else:
            raise ConfigError(f"unknown config key '{key}'")

    try:
        return RunConfig(
            model=ModelConfig(**model_values),
            training=TrainingConfig(**training_values),
            **run_values,
        )
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {_describe(exc)}") from exc


def _describe(exc: ValidationError) -> str:
    parts = []
    for error in exc.errors():
        location = ".".join(str(item) for item in error["loc"]) or "config"
        parts.append(f"{location}: {error['msg']}")
    return "; ".join(parts)


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """
    Load a run configuration file and apply command-line overrides.

    Args:
        path: Optional key=value file
        overrides: Flag values; None entries mean "flag not given" and are skipped

    Returns:
        Validated RunConfig (flags win over file values)

    Raises:
        ConfigError: If the file is missing, malformed, or any value is invalid
    """
    values: Dict[str, Any] = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"config file not found: {config_path}")
        values.update(parse_config_text(config_path.read_text(encoding="utf-8"), str(config_path)))
        logger.debug(f"Loaded {len(values)} config keys from {config_path}")

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in known_keys():
            raise ConfigError(f"unknown config key '{key}'")
        values[key] = value

    return build_run_config(values)
