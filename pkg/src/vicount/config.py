"""
Configuration management for vicount
"""

import math
import os
from typing import Any, Callable, Dict, Optional, Tuple, Union

from .exceptions import ConfigurationError


def _parse_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in ("true", "1", "yes", "on")


# name -> (parser, default). Every key can also come from VICOUNT_<NAME>.
_FIELDS: Dict[str, Tuple[Callable[[Any], Any], Any]] = {
    # sampling interval
    "tau": (float, 30.0),
    "tau_unit": (str, "frames"),
    "fps": (float, 10.0),
    # transport solver
    "sigma": (float, 0.02),
    "sinkhorn_iters": (int, 500),
    "log_domain": (_parse_bool, True),
    # proposals
    "noise_level": (float, 2.0),
    "density_sigma": (float, 4.0),
    "density_window": (int, 15),
    "nms_radius": (int, 4),
    "min_peak_ratio": (float, 0.1),
    "match_radius": (float, 4.0),
    # descriptors and association
    "descriptor_dim": (int, 256),
    "c_init": (float, 0.0),
    "dust_score": (float, 0.5),
    "hungarian_threshold": (float, 0.0),
    "descriptor_mode": (str, "gt-descriptors"),
    "point_mode": (str, "gt-points"),
    "flow_source": (str, "transport"),
    # training
    "optimizer": (str, "adam"),
    "learning_rate": (float, 5e-5),
    "c_learning_rate": (float, 1e-2),
    "momentum": (float, 0.0),
    "epochs": (int, 3),
    "lr_decay": (float, 0.95),
    "use_hard_negatives": (_parse_bool, True),
    "proposal_source": (str, "gt+pred"),
    "train_interval_seconds": (str, "2,8"),
    # runtime
    "seed": (int, 0),
    "max_workers": (int, 1),
}

_CHOICES = {
    "tau_unit": ("frames", "seconds"),
    "descriptor_mode": ("gt-descriptors", "trained-encoder"),
    "point_mode": ("gt-points", "proposals"),
    "flow_source": ("transport", "hungarian", "oracle"),
    "optimizer": ("adam", "sgd"),
    "proposal_source": ("gt", "gt+pred"),
}


class RunConfig:
    """Configuration of counting, training and evaluation runs"""

    def __init__(self, **kwargs):
        """
        Initialize configuration

        Each key is taken from kwargs, then from the VICOUNT_<KEY> environment
        variable, then from its default. Unknown keys are rejected.
        """
        unknown = set(kwargs) - set(_FIELDS)
        if unknown:
            raise ConfigurationError(
                f"Unknown configuration keys: {', '.join(sorted(unknown))}. "
                f"Valid keys are: {', '.join(sorted(_FIELDS))}.")

        for name, (parser, default) in _FIELDS.items():
            raw = kwargs.get(name)
            if raw is None:
                raw = os.getenv(f"VICOUNT_{name.upper()}", default)
            try:
                setattr(self, name, parser(raw))
            except (TypeError, ValueError) as e:
                raise ConfigurationError(
                    f"Invalid value for '{name}': {raw!r} ({e}).") from e

        self._validate()

    def _validate(self):
        """Validate configuration values"""
        for name, choices in _CHOICES.items():
            value = getattr(self, name)
            if value not in choices:
                raise ConfigurationError(
                    f"{name} must be one of {', '.join(choices)}, got '{value}'. "
                    f"The modes of one group are mutually exclusive; pick exactly one.")

        for name in ("tau", "fps", "sigma", "density_sigma", "match_radius"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(
                    f"{name} must be positive, got {getattr(self, name)}.")

        for name in ("sinkhorn_iters", "nms_radius", "descriptor_dim", "max_workers", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigurationError(
                    f"{name} must be at least 1, got {getattr(self, name)}.")

        if self.density_window < 3 or self.density_window % 2 == 0:
            raise ConfigurationError(
                f"density_window must be odd and at least 3, got {self.density_window}.")

        if self.noise_level < 0:
            raise ConfigurationError(
                f"noise_level must be non-negative, got {self.noise_level}.")

        for name in ("learning_rate", "c_learning_rate", "momentum", "min_peak_ratio"):
            if getattr(self, name) < 0:
                raise ConfigurationError(
                    f"{name} must be non-negative, got {getattr(self, name)}.")

        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigurationError(
                f"lr_decay must lie in (0, 1], got {self.lr_decay}.")

        low, high = self.train_interval_range_seconds
        if low <= 0 or high < low:
            raise ConfigurationError(
                f"train_interval_seconds must be 'low,high' with 0 < low <= high, "
                f"got '{self.train_interval_seconds}'.")

        if self.tau_frames < 1:
            raise ConfigurationError(
                f"tau of {self.tau} {self.tau_unit} is shorter than one frame at {self.fps} fps.")

    @property
    def tau_frames(self) -> int:
        """Sampling interval in frames; seconds are converted with floor rounding"""
        if self.tau_unit == "seconds":
            return int(math.floor(self.tau * self.fps))
        return int(math.floor(self.tau))

    @property
    def train_interval_range_seconds(self) -> Tuple[float, float]:
        parts = [p for p in str(self.train_interval_seconds).split(",") if p.strip()]
        if len(parts) != 2:
            return (0.0, -1.0)
        return (float(parts[0]), float(parts[1]))

    @property
    def train_interval_range_frames(self) -> Tuple[int, int]:
        low, high = self.train_interval_range_seconds
        return (max(1, int(math.floor(low * self.fps))), max(1, int(math.floor(high * self.fps))))

    def to_dict(self) -> Dict[str, Any]:
        """Convert configuration to dictionary"""
        return {name: getattr(self, name) for name in _FIELDS}

    def replace(self, **overrides) -> "RunConfig":
        """Copy with some keys overridden"""
        values = self.to_dict()
        values.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig(**values)

    @classmethod
    def from_dict(cls, config_dict: Dict[str, Any]) -> "RunConfig":
        """Create configuration from dictionary"""
        return cls(**config_dict)

    @classmethod
    def from_env(cls) -> "RunConfig":
        """Create configuration from environment variables"""
        return cls()


def load_config(config_source: Optional[Union[Dict[str, Any], str, RunConfig]] = None) -> RunConfig:
    """
    Load configuration from various sources

    Args:
        config_source: Configuration source - can be:
            - Dict[str, Any]: Configuration dictionary
            - str: Path to configuration file (JSON, YAML or key=value lines)
            - RunConfig: Existing RunConfig instance
            - None: Load from environment variables

    Returns:
        RunConfig instance
    """
    if config_source is None:
        return RunConfig.from_env()
    elif isinstance(config_source, RunConfig):
        return config_source
    elif isinstance(config_source, dict):
        return RunConfig.from_dict(config_source)
    elif isinstance(config_source, (str, os.PathLike)):
        return RunConfig.from_dict(read_config_file(os.fspath(config_source)))
    else:
        raise TypeError(
            f"Unsupported config source type: {type(config_source).__name__}. "
            f"Expected one of: dict, str (file path), RunConfig instance, or None (environment variables).")


def read_config_file(file_path: str) -> Dict[str, Any]:
    """Read a configuration file into a plain dictionary"""
    import json
    import yaml

    if not os.path.exists(file_path):
        raise FileNotFoundError(
            f"Configuration file not found: {file_path}. "
            f"Please ensure the file exists and the path is correct.")

    with open(file_path, 'r') as f:
        if file_path.endswith('.json'):
            config_dict = json.load(f)
        elif file_path.endswith(('.yml', '.yaml')):
            config_dict = yaml.safe_load(f) or {}
        else:
            config_dict = _parse_key_value_lines(f.read(), file_path)

    if not isinstance(config_dict, dict):
        raise ConfigurationError(
            f"Configuration file {file_path} must contain a mapping of keys to values.")
    return config_dict


def _parse_key_value_lines(text: str, file_path: str) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split('#', 1)[0].strip()
        if not stripped:
            continue
        if '=' not in stripped:
            raise ConfigurationError(
                f"{file_path}:{lineno}: expected 'key=value', got '{line.strip()}'.")
        key, value = stripped.split('=', 1)
        values[key.strip()] = value.strip()
    return values
