"""Experiment configuration: strict YAML schema, canonical hashing.

Unknown keys are rejected with their location; the config hash is computed
over the canonical (sorted-key JSON) resolved form, so key order in the
file never changes the hash.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import yaml


class ConfigError(ValueError):
    """A config file is malformed; the message names the offending key."""


def _tuples_to_lists(obj):
    if isinstance(obj, dict):
        return {k: _tuples_to_lists(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_tuples_to_lists(v) for v in obj]
    return obj


def _from_dict(cls, d: dict, where: str):
    if d is None:
        d = {}
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(d).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in d:
        norm = key.replace("-", "_")
        if norm not in names:
            raise ConfigError(f"{where}.{key}: unknown key")
    kwargs = {k.replace("-", "_"): v for k, v in d.items()}
    # convert lists to tuples where the dataclass default is a tuple
    for f in dataclasses.fields(cls):
        if f.name in kwargs and isinstance(kwargs[f.name], list):
            default = getattr(cls, f.name, None)
            if isinstance(default, tuple) or (
                f.default is not dataclasses.MISSING and isinstance(f.default, tuple)
            ):
                kwargs[f.name] = tuple(kwargs[f.name])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class SynthConfig:
    height: int = 64
    width: int = 96
    n_frames: int = 160
    split_ratio: float = 0.8
    min_figures: int = 1
    max_figures: int = 2
    figure_scale_min: float = 8.0
    figure_scale_max: float = 14.0
    two_cameras: bool = False


@dataclass(frozen=True)
class DatasetConfig:
    manifest: Optional[str] = None
    synth: SynthConfig = field(default_factory=SynthConfig)


@dataclass(frozen=True)
class ModelConfig:
    width_multiplier: float = 1.0
    input_height: int = 64
    input_width: int = 96
    adversarial_weight: float = 1.0


@dataclass(frozen=True)
class DetectorConfig:
    train_adapter: str = "toy-conv"
    eval_adapters: tuple[str, ...] = ("toy-conv",)
    pseudo_gt_threshold: float = 0.5
    weights_dir: Optional[str] = None
    toy_anchor: tuple[float, float] = (11.0, 36.0)
    toy_epochs: int = 60


@dataclass(frozen=True)
class ScheduleConfig:
    total_epochs: int = 30
    lr_obf_initial: float = 1e-2
    lr_deobf_initial: float = 1e-3
    milestone_period: int = 10
    obf_decay_factor: float = 100.0
    deobf_decay_factor: float = 10.0
    weight_decay: float = 1e-4
    batch_size: int = 16
    alternation: str = "per-batch"


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    det_score_threshold: float = 0.05
    ssim_window: int = 7
    nmi_bins: int = 100
    blur_kernel: tuple[int, int] = (3, 3)
    noise_factor: float = 0.02
    quantize_levels: int = 15
    sweep_alphas: tuple[float, ...] = (1.0, 0.5, 0.25)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return _tuples_to_lists(dataclasses.asdict(self))

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        if d is None:
            d = {}
        if not isinstance(d, dict):
            raise ConfigError("top level: expected a mapping")
        known = {"seed", "output_dir", "dataset", "model", "detector", "schedule", "eval"}
        for key in d:
            if key.replace("-", "_") not in known:
                raise ConfigError(f"{key}: unknown key")
        dataset_d = dict(d.get("dataset") or {})
        synth_d = dataset_d.pop("synth", None)
        dataset = _from_dict(DatasetConfig, dataset_d, "dataset")
        dataset = dataclasses.replace(
            dataset, synth=_from_dict(SynthConfig, synth_d, "dataset.synth")
        )
        return ExperimentConfig(
            seed=d.get("seed", 0),
            output_dir=d.get("output_dir", "runs"),
            dataset=dataset,
            model=_from_dict(ModelConfig, d.get("model"), "model"),
            detector=_from_dict(DetectorConfig, d.get("detector"), "detector"),
            schedule=_from_dict(ScheduleConfig, d.get("schedule"), "schedule"),
            eval=_from_dict(EvalConfig, d.get("eval"), "eval"),
        )

    @staticmethod
    def load(path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
        return ExperimentConfig.from_dict(data)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=True)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()


def apply_overrides(config: ExperimentConfig, overrides: dict[str, object]) -> ExperimentConfig:
    """Apply dotted-path overrides (e.g. {'schedule.total_epochs': 5})."""
    data = config.to_dict()
    for dotted, value in overrides.items():
        parts = [p.replace("-", "_") for p in dotted.split(".")]
        node = data
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"override {dotted}: unknown section {part!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"override {dotted}: unknown key {parts[-1]!r}")
        node[parts[-1]] = value
    return ExperimentConfig.from_dict(data)
