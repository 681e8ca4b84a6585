"""Shipped hyperparameter presets.

Each ``<detectors>.<convention>.cfg`` file holds a cross-validated ALFA
configuration; ``thresholds.cfg`` holds the confidence threshold used by
each method.
"""

from __future__ import annotations

from importlib import resources

from ..errors import ConfigError
from ..fusion import Convention, FusionConfig

PRESET_NAMES = (
    "ssd_denet.map_s",
    "ssd_denet.map",
    "frcnn_ssd_denet.map_s",
    "frcnn_ssd_denet.map",
)


def preset_text(name: str) -> str:
    if name not in PRESET_NAMES and name != "thresholds":
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    return resources.files(__name__).joinpath(f"{name}.cfg").read_text(encoding="utf-8")


def thresholds() -> dict[str, float]:
    from ..io import parse_config_text

    return {k: float(v) for k, v in parse_config_text(preset_text("thresholds"), "thresholds.cfg").items()}


def load_preset(name: str, method: str = "alfa", **overrides) -> FusionConfig:
    """Preset config with ``theta`` taken from the method's threshold."""
    from ..io import parse_config_text

    values: dict[str, object] = dict(parse_config_text(preset_text(name), f"{name}.cfg"))
    table = thresholds()
    key = method.replace("-", "_")
    if key not in table:
        raise ConfigError(f"unknown method {method!r}; choose from {', '.join(table)}")
    values["theta"] = table[key]
    values.update(overrides)
    return FusionConfig.from_mapping(values)


def default_preset_name(n_detectors: int, convention: Convention | str = Convention.MAP_S) -> str:
    family = "ssd_denet" if n_detectors <= 2 else "frcnn_ssd_denet"
    return f"{family}.{Convention(convention).value}"


def default_config(
    n_detectors: int, convention: Convention | str = Convention.MAP_S, method: str = "alfa"
) -> FusionConfig:
    """Best shipped preset for the detector count and evaluation convention."""
    return load_preset(default_preset_name(n_detectors, convention), method, n_detectors=n_detectors)
