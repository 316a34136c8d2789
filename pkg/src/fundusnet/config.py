"""Run configuration: a TOML file with nested sections, validated strictly
(unknown keys are hard errors so typos cannot silently change a run).

The fully resolved configuration is serialized verbatim into every
checkpoint, training log, and report; its canonical-JSON hash is the
compatibility key for resume.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .augment import AugPolicy
from .errors import ConfigError
from .model import BlockSpec, ModelConfig, make_table
from .optim import STEP_FUNCTIONS, Schedule


@dataclass
class RunSection:
    seed: int = 0
    deterministic: bool = False
    task: str = "multiclass"  # multiclass | binary
    batch_size: int = 32
    epochs: int = 1000
    eval_every: int = 10
    out_dir: str = "runs/run"


@dataclass
class DataSection:
    manifest: str = ""
    root: str = ""
    image_size: int = 224
    val_fraction: float = 0.2
    normalize: str = "dataset"  # dataset | none
    binarize_referable: bool = False


@dataclass
class ModelSection:
    block_kind: str = "ilrb"
    table: str = "mbv2"
    blocks: list = field(default_factory=list)  # explicit table, overrides `table`
    stem_channels: int = 32
    width_multiplier: float = 1.0
    head_channels: int = 1280
    activation: str = "relu6"
    se: bool = True
    se_reduction: int = 12
    dropout_position: int = 3  # 0 disables in-block dropout
    dropout_rate: float = 0.2
    dropout_mode: str = "spatial"
    head_dropout_rate: float = 0.2


@dataclass
class OptimizerSection:
    name: str = "adamp"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    delta: float = 0.1
    wd_ratio: float = 0.1
    nesterov: bool = False
    momentum: float = 0.9


@dataclass
class ScheduleSection:
    warmup_epochs: int = 20
    min_lr: float = 0.0


@dataclass
class AugmentSection:
    recipe: str = "I"
    crop_size: int = 0      # 0 -> data.image_size
    resize_to: int = 0      # 0 -> recipe default
    hflip_prob: float = -1.0        # negative -> recipe default
    brightness_jitter: float = -1.0
    ra_num_ops: int = -1
    ra_magnitude: float = -1.0
    ra_magnitude_std: float = -1.0
    erase_prob: float = -1.0
    mix_prob: float = -1.0
    mix_switch_prob: float = -1.0
    mixup_alpha: float = -1.0
    cutmix_alpha: float = -1.0


_BLOCK_KEYS = {"expansion", "out_channels", "repeats", "stride", "se",
               "dropout_position", "dropout_rate"}


def _coerce(section_name: str, key: str, value, target_type):
    if target_type is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if target_type is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"[{section_name}] {key}: expected a boolean, got {value!r}")
        return value
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"[{section_name}] {key}: expected an integer, got {value!r}")
        return value
    if target_type is str and not isinstance(value, str):
        raise ConfigError(f"[{section_name}] {key}: expected a string, got {value!r}")
    if target_type is float and not isinstance(value, float):
        raise ConfigError(f"[{section_name}] {key}: expected a number, got {value!r}")
    return value


def _fill_section(cls, section_name: str, raw: dict):
    fields = {f.name: f.type for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(fields)
    if unknown:
        raise ConfigError(f"[{section_name}] unknown key(s): {', '.join(sorted(unknown))}")
    kwargs = {}
    for key, value in raw.items():
        if key == "blocks":
            kwargs[key] = _parse_blocks(value)
            continue
        ftype = {"int": int, "float": float, "str": str, "bool": bool}.get(
            str(fields[key]).replace("builtins.", "").split("|")[0].strip())
        if ftype is not None:
            value = _coerce(section_name, key, value, ftype)
        kwargs[key] = value
    return cls(**kwargs)


def _parse_blocks(entries) -> list:
    if not isinstance(entries, list):
        raise ConfigError("[model] blocks must be an array of tables")
    blocks = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ConfigError(f"[model] blocks[{i}] must be a table")
        unknown = set(entry) - _BLOCK_KEYS
        if unknown:
            raise ConfigError(f"[model] blocks[{i}] unknown key(s): {', '.join(sorted(unknown))}")
        blocks.append(dict(entry))
    return blocks


_SECTIONS = {
    "run": RunSection,
    "data": DataSection,
    "model": ModelSection,
    "optimizer": OptimizerSection,
    "schedule": ScheduleSection,
    "augment": AugmentSection,
}


@dataclass
class RunConfig:
    run: RunSection
    data: DataSection
    model: ModelSection
    optimizer: OptimizerSection
    schedule: ScheduleSection
    augment: AugmentSection

    # -- construction ------------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        unknown = set(raw) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
        sections = {name: _fill_section(c, name, raw.get(name, {}))
                    for name, c in _SECTIONS.items()}
        config = cls(**sections)
        config.validate()
        return config

    @classmethod
    def from_toml(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        with open(path, "rb") as fh:
            try:
                raw = tomllib.load(fh)
            except tomllib.TOMLDecodeError as err:
                raise ConfigError(f"{path}: {err}") from None
        return cls.from_dict(raw)

    def validate(self):
        if self.run.task not in ("multiclass", "binary"):
            raise ConfigError(f"unknown task {self.run.task!r}")
        if self.run.batch_size < 1 or self.run.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.run.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.optimizer.name not in STEP_FUNCTIONS:
            raise ConfigError(f"unknown optimizer {self.optimizer.name!r}")
        if not 0 <= self.schedule.warmup_epochs <= self.run.epochs:
            raise ConfigError("warmup must fit inside the epoch budget")
        if not 0.0 <= self.data.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in [0, 1)")
        if self.data.normalize not in ("dataset", "none"):
            raise ConfigError(f"unknown normalize mode {self.data.normalize!r}")
        # instantiating the derived objects validates the rest
        self.make_aug_policy()
        self.make_model_config(num_classes=2)

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in _SECTIONS}

    # -- derived objects ---------------------------------------------------

    def make_model_config(self, num_classes: int) -> ModelConfig:
        m = self.model
        position = m.dropout_position if m.dropout_position != 0 else None
        if m.blocks:
            table = [BlockSpec(
                expansion=int(b.get("expansion", 6)),
                out_channels=int(b["out_channels"]),
                repeats=int(b.get("repeats", 1)),
                first_stride=int(b.get("stride", 1)),
                se=bool(b.get("se", m.se)),
                dropout_position=(int(b["dropout_position"]) or None)
                if "dropout_position" in b else position,
                dropout_rate=float(b.get("dropout_rate", m.dropout_rate)),
            ) for b in m.blocks]
        else:
            table = make_table(m.table, dropout_position=position,
                               dropout_rate=m.dropout_rate, se=m.se)
        cfg = ModelConfig(
            num_classes=num_classes,
            block_table=table,
            stem_channels=m.stem_channels,
            width_multiplier=m.width_multiplier,
            head_channels=m.head_channels,
            activation=m.activation,
            block_kind=m.block_kind,
            se_reduction=m.se_reduction,
            dropout_mode=m.dropout_mode,
            head_dropout_rate=m.head_dropout_rate,
        )
        cfg.validate()
        return cfg

    def make_aug_policy(self) -> AugPolicy:
        a = self.augment
        crop = a.crop_size if a.crop_size > 0 else self.data.image_size
        resize = a.resize_to if a.resize_to > 0 else None
        policy = AugPolicy.for_recipe(a.recipe, crop_size=crop, resize_to=resize)
        overrides = {
            "hflip_prob": a.hflip_prob,
            "brightness_jitter": a.brightness_jitter,
            "ra_num_ops": a.ra_num_ops,
            "ra_magnitude": a.ra_magnitude,
            "ra_magnitude_std": a.ra_magnitude_std,
            "erase_prob": a.erase_prob,
            "mix_prob": a.mix_prob,
            "mix_switch_prob": a.mix_switch_prob,
            "mixup_alpha": a.mixup_alpha,
            "cutmix_alpha": a.cutmix_alpha,
        }
        for key, value in overrides.items():
            if value >= 0:
                setattr(policy, key, type(getattr(policy, key))(value))
        policy.validate()
        return policy

    def make_schedule(self) -> Schedule:
        return Schedule(base_lr=self.optimizer.lr,
                        warmup_epochs=self.schedule.warmup_epochs,
                        total_epochs=self.run.epochs,
                        min_lr=self.schedule.min_lr)

    def optimizer_kwargs(self) -> dict:
        o = self.optimizer
        return dict(lr=o.lr, beta1=o.beta1, beta2=o.beta2, eps=o.eps,
                    weight_decay=o.weight_decay, delta=o.delta,
                    wd_ratio=o.wd_ratio, nesterov=o.nesterov, momentum=o.momentum)
