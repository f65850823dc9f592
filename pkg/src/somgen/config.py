"""One JSON run configuration covering data generation, the model, and training.

Any leaf can be overridden from the environment as ``SOMGEN_<SECTION>_<KEY>``,
e.g. ``SOMGEN_TRAIN_LR=3e-4`` or ``SOMGEN_BACKBONE_N_LAYERS=4``. Values are
parsed as JSON when possible and used as plain strings otherwise.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .backbone import BackboneConfig
from .dataset import DEFAULT_LAYOUTS, ConditionTag, SceneLayout
from .decode import DecoderConfig
from .embed import MODALITIES, EmbedConfig
from .errors import ConfigError
from .model import ModelConfig
from .scene import _FAMILIES, SCENARIOS
from .trainer import TrainConfig, TransferPlan

ENV_PREFIX = "SOMGEN_"

DEFAULT_CONDITIONS = [
    ConditionTag("crossroad", 50.0, 28e9),
    ConditionTag("crossroad", 70.0, 28e9),
    ConditionTag("crossroad", 70.0, 1.6e9),
    ConditionTag("widelane", 200.0, 28e9),
]


@dataclass
class SceneSection:
    layouts: dict = field(default_factory=lambda: {k: dataclasses.asdict(v) for k, v in DEFAULT_LAYOUTS.items()})

    def layout_objects(self):
        return {k: SceneLayout(**v) for k, v in self.layouts.items()}


@dataclass
class PropagationSection:
    rx_height: float = 1.5
    diffraction: bool = True


@dataclass
class DatasetSection:
    conditions: list = field(default_factory=lambda: [c.key for c in DEFAULT_CONDITIONS])
    snapshots_per_condition: int = 250
    seed: int = 0
    resolution: int = 64
    grid_size: int = 32

    def condition_tags(self):
        return [ConditionTag.parse(c) if isinstance(c, str) else ConditionTag.from_dict(c) for c in self.conditions]


@dataclass
class ModelSection:
    modalities: list = field(default_factory=lambda: list(MODALITIES))
    freeze: bool = True
    seed: int = 0


@dataclass
class ExperimentSection:
    train_conditions: list | None = None  # None = every condition in the dataset
    transfer: dict = field(default_factory=lambda: dataclasses.asdict(
        TransferPlan(source=["crossroad/50m/28GHz"], target="widelane/200m/28GHz")
    ))
    render_examples: int = 0


@dataclass
class PathsSection:
    out_dir: str = "runs"


@dataclass
class RunConfig:
    scene: SceneSection = field(default_factory=SceneSection)
    propagation: PropagationSection = field(default_factory=PropagationSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    decode: DecoderConfig = field(default_factory=DecoderConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            embed=self.embed,
            backbone=self.backbone,
            decode=self.decode,
            modalities=tuple(self.model.modalities),
            freeze=self.model.freeze,
        )

    def transfer_plan(self) -> TransferPlan:
        return TransferPlan(**self.experiment.transfer)

    def validate(self) -> "RunConfig":
        """Reject cross-module inconsistencies before any work starts."""
        ds = self.dataset
        if ds.resolution != self.embed.resolution:
            raise ConfigError(f"dataset resolution {ds.resolution} != embed resolution {self.embed.resolution}")
        if ds.snapshots_per_condition < 5:
            raise ConfigError("snapshots_per_condition must be >= 5")
        if ds.grid_size < 1:
            raise ConfigError("grid_size must be >= 1")
        layouts = self.scene.layout_objects()
        for cond in ds.condition_tags():
            if cond.scenario not in SCENARIOS:
                raise ConfigError(f"unknown scenario in condition {cond.key}")
            lay = layouts.get(cond.scenario)
            if lay is None:
                raise ConfigError(f"no scene layout for {cond.scenario}")
            if lay.width_cells < 16 or lay.cell_size <= 0:
                raise ConfigError(f"bad layout for {cond.scenario}: {lay}")
            side = lay.width_cells * lay.cell_size
            if cond.altitude_m > side / 4:
                raise ConfigError(f"{cond.key}: altitude needs a scene side >= {4 * cond.altitude_m} m, have {side} m")
            top = _FAMILIES[cond.scenario]["height_range"][1]
            if cond.altitude_m <= top:
                raise ConfigError(f"{cond.key}: altitude must clear {top} m buildings")
            if cond.frequency_hz <= 0:
                raise ConfigError(f"{cond.key}: frequency must be positive")
        if self.propagation.rx_height < 0:
            raise ConfigError("rx_height must be >= 0")
        self.model_config().validate()
        self.train.validate()
        self.transfer_plan().validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        base = cls()
        kwargs = {}
        for f in dataclasses.fields(cls):
            section_type = type(getattr(base, f.name))
            values = d.get(f.name, {})
            if not isinstance(values, dict):
                raise ConfigError(f"section {f.name!r} must be an object")
            known = {sf.name for sf in dataclasses.fields(section_type)}
            unknown = set(values) - known
            if unknown:
                raise ConfigError(f"unknown keys in {f.name}: {sorted(unknown)}")
            kwargs[f.name] = dataclasses.replace(getattr(base, f.name), **values)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        return cls(**kwargs)


def desk_profile() -> RunConfig:
    return RunConfig()


def paper_profile() -> RunConfig:
    """Full-width hyperparameters: E=768, 6 layers, batch 128, 200 epochs."""
    cfg = RunConfig()
    cfg.embed = dataclasses.replace(cfg.embed, embed_dim=768)
    cfg.backbone = dataclasses.replace(cfg.backbone, embed_dim=768, n_layers=6, n_heads=12)
    cfg.decode = dataclasses.replace(cfg.decode, embed_dim=768)
    cfg.train = dataclasses.replace(cfg.train, batch_size=128, lr=1e-4, epochs=200)
    return cfg


PROFILES = {"desk": desk_profile, "paper": paper_profile}


def _parse_env_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_env_overrides(d: dict, environ=None) -> dict:
    environ = os.environ if environ is None else environ
    d = json.loads(json.dumps(d))
    sections = sorted(d, key=len, reverse=True)
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX) :].lower()
        for section in sections:
            if rest.startswith(section + "_"):
                key = rest[len(section) + 1 :]
                if key not in d[section]:
                    raise ConfigError(f"{name}: no key {key!r} in section {section!r}")
                d[section][key] = _parse_env_value(raw)
                break
        else:
            raise ConfigError(f"{name}: unknown config section")
    return d


def load_config(path=None, profile: str = "desk", environ=None) -> RunConfig:
    """Profile defaults, then the JSON file, then environment overrides."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    d = PROFILES[profile]().to_dict()
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config root must be an object")
        for section, values in user.items():
            if section not in d:
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(values, dict):
                raise ConfigError(f"section {section!r} must be an object")
            d[section].update(values)
    d = apply_env_overrides(d, environ)
    try:
        return RunConfig.from_dict(d).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
