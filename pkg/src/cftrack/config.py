"""Single dataclass holding every pipeline hyperparameter, serializable to
and from a JSON config file."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class PipelineConfig:
    # model structure and clustering
    n_experts: int = 10
    depth: int = 2
    init_trials: int = 1000
    # training schedule; learning rates are calibrated for the built-in
    # extractor's activation scale at its default geometry, keeping the
    # expert:base ratio at 10:1
    batch_size: int = 10
    base_lr: float = 3e-6
    base_epochs: int = 10
    expert_lr: float = 3e-5
    expert_epochs: int = 30
    corrupt_fraction: float = 0.10
    exchange_fraction: float = 0.10
    selector_batch: int = 100
    selector_lr: float = 0.01
    selector_epochs: int = 200
    selector_hidden: int = 1024
    # first-frame adaptation
    lambda_theta: float = 1e3
    adapt_lr: float = 1e-7
    adapt_epochs: int = 30
    n_keep: int = 25
    # correlation filter and fusion
    sigma_g: float = 0.05
    cf_lambda: float = 1.0
    gamma: float = 0.025
    lambda_s: float = 50.0
    # occlusion re-detection
    lambda_re: float = 0.7
    n_redetect: int = 50
    redetect_enabled: bool = True
    update_during_occlusion: bool = True
    # geometry and feature source
    scale_step: float = 1.015
    roi_factor: float = 2.5
    input_size: int = 224
    cell_size: int = 4
    feature_channels: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.n_experts < 1 or self.depth < 1:
            raise ConfigError("n_experts and depth must be >= 1")
        if not 0.0 <= self.corrupt_fraction <= 1.0:
            raise ConfigError("corrupt_fraction outside [0, 1]")
        if not 0.0 <= self.exchange_fraction <= 1.0:
            raise ConfigError("exchange_fraction outside [0, 1]")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma outside (0, 1]")
        if self.scale_step <= 0 or self.roi_factor <= 0:
            raise ConfigError("scale_step and roi_factor must be positive")
        if self.sigma_g <= 0 or self.lambda_s <= 0 or self.cf_lambda < 0:
            raise ConfigError("bad filter parameters")


def render_config(cfg: PipelineConfig) -> str:
    return json.dumps(dataclasses.asdict(cfg), indent=2, sort_keys=True) + "\n"


def parse_config(text: str) -> PipelineConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    fields = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(raw) - fields
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return PipelineConfig(**raw)


def load_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def save_config(cfg: PipelineConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_config(cfg))


def apply_overrides(cfg: PipelineConfig, pairs: list[str]) -> PipelineConfig:
    """Apply KEY=VALUE overrides, coercing values to the field's type."""
    updates = {}
    types = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}
    current = dataclasses.asdict(cfg)
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not KEY=VALUE")
        key, value = pair.split("=", 1)
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        kind = type(current[key])
        if kind is bool:
            if value.lower() not in ("true", "false", "0", "1"):
                raise ConfigError(f"bad boolean {value!r} for {key}")
            updates[key] = value.lower() in ("true", "1")
        else:
            updates[key] = kind(value)
    return dataclasses.replace(cfg, **updates)
