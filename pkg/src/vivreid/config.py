"""Experiment configuration: layered YAML files, ablation presets and dotted overrides."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import yaml

from .backbone import BackboneConfig
from .data import SyntheticVideoDataset
from .model import FRM_CHOICES, ModelConfig
from .training import TrainConfig

# ablation-table rows, in table order: name -> (asam, adm, frm_stig)
ABLATIONS = {
    "baseline": (False, False, "off"),
    "asam": (True, False, "off"),
    "adm": (False, True, "off"),
    "frm-stig": (False, False, "full"),
    "asam-adm": (True, True, "off"),
    "fr-e-ti": (True, True, "fr_e_ti_only"),
    "frm-stig-no-spa": (True, True, "no_spa"),
    "full": (True, True, "full"),
}
ROW_LABELS = {
    "baseline": "Baseline",
    "asam": "Baseline+ASAM",
    "adm": "Baseline+ADM",
    "frm-stig": "Baseline+FRM-STIG",
    "asam-adm": "Baseline+ASAM+ADM",
    "fr-e-ti": "Baseline+ASAM+ADM+FR-E-TI",
    "frm-stig-no-spa": "Baseline+ASAM+ADM+FRM-STIG*",
    "full": "Baseline+ASAM+ADM+FRM-STIG",
}


class ConfigError(ValueError):
    pass


@dataclass
class SyntheticConfig:
    num_ids: int = 10
    seed: int = 0
    eval_identities: str = "seen"
    num_test_ids: int | None = None
    eval_seqs_per_id: int = 2


@dataclass
class DataConfig:
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    T: int = 6
    height: int = 48
    width: int = 24


@dataclass
class ModulesConfig:
    asam: bool = True
    adm: bool = True
    frm_stig: str = "full"


@dataclass
class ModelSection:
    preset: str = "tiny"
    num_parts: int = 6
    attention_reduction: int = 2


@dataclass
class EvalConfig:
    exclude_same_camera: bool = False


@dataclass
class ExperimentConfig:
    ablation: str | None = "full"
    seed: int = 0
    out: str | None = None
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelSection = field(default_factory=ModelSection)
    modules: ModulesConfig = field(default_factory=ModulesConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return asdict(self)


def _norm(key: str) -> str:
    return key.replace("-", "_")


def _build(cls, data: dict, prefix: str = ""):
    known = {f.name: f for f in fields(cls)}
    unknown = [prefix + k for k in data if _norm(k) not in known]
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    kwargs = {}
    defaults = cls()
    for k, v in data.items():
        name = _norm(k)
        current = getattr(defaults, name)
        if is_dataclass(current):
            if not isinstance(v, dict):
                raise ConfigError(f"{prefix}{name} must be a mapping")
            v = _build(type(current), v, f"{prefix}{name}.")
        kwargs[name] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid values under {prefix or 'root'}: {exc}") from exc


def from_dict(data: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data)
    validate(cfg)
    return cfg


def merge(base: dict, update: dict) -> dict:
    out = dict(base)
    for k, v in update.items():
        k = _norm(k)
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def set_dotted(data: dict, dotted: str, value: Any) -> dict:
    keys = [_norm(k) for k in dotted.split(".")]
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot descend into non-mapping key {dotted!r}")
    node[keys[-1]] = value
    return data


def parse_value(text: str) -> Any:
    return yaml.safe_load(text)


def apply_ablation(data: dict, name: str) -> dict:
    if name not in ABLATIONS:
        raise ConfigError(f"unknown ablation {name!r}; choose from {list(ABLATIONS)}")
    asam, adm, frm = ABLATIONS[name]
    data = merge(data, {"ablation": name, "modules": {"asam": asam, "adm": adm, "frm_stig": frm}})
    return data


def ablation_for(modules: ModulesConfig) -> str | None:
    for name, switches in ABLATIONS.items():
        if switches == (modules.asam, modules.adm, modules.frm_stig):
            return name
    return None


def validate(cfg: ExperimentConfig):
    m = cfg.modules
    if m.frm_stig not in FRM_CHOICES:
        raise ConfigError(f"modules.frm_stig must be one of {FRM_CHOICES}, got {m.frm_stig!r}")
    name = ablation_for(m)
    if name is None:
        raise ConfigError(
            "switch combination matches no ablation row: "
            f"modules.asam={m.asam}, modules.adm={m.adm}, modules.frm_stig={m.frm_stig!r}")
    if cfg.ablation is not None and cfg.ablation != name:
        raise ConfigError(f"ablation={cfg.ablation!r} disagrees with module switches "
                          f"(modules.asam, modules.adm, modules.frm_stig), which describe {name!r}")
    cfg.ablation = name
    if cfg.train.P > cfg.data.synthetic.num_ids:
        raise ConfigError(f"train.P={cfg.train.P} exceeds data.synthetic.num_ids={cfg.data.synthetic.num_ids}")


def resolve(config_paths=(), ablation: str | None = None, seed: int | None = None, out: str | None = None,
            overrides: list[tuple[str, str]] = ()) -> ExperimentConfig:
    """defaults < config files (in order) < --ablation < --seed/--out < dotted overrides."""
    data = ExperimentConfig().to_dict()
    for path in config_paths:
        layer = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(layer, dict):
            raise ConfigError(f"{path} must hold a mapping")
        if layer.get("ablation"):
            data = apply_ablation(data, layer["ablation"])
        data = merge(data, {k: v for k, v in layer.items() if k != "ablation"})
    if ablation is not None:
        data = apply_ablation(data, ablation)
    if seed is not None:
        data["seed"] = seed
    if out is not None:
        data["out"] = out
    for key, text in overrides:
        data = set_dotted(data, key, parse_value(text))
    # the row name is always re-derived from the final switches
    data["ablation"] = None
    return from_dict(data)


def dump(cfg: ExperimentConfig, path: str | Path):
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))


def load(path: str | Path) -> ExperimentConfig:
    return from_dict(yaml.safe_load(Path(path).read_text()))


def model_config(cfg: ExperimentConfig, num_classes: int) -> ModelConfig:
    backbone = BackboneConfig.from_preset(cfg.model.preset, input_size=(cfg.data.height, cfg.data.width))
    return ModelConfig(
        num_classes=num_classes,
        backbone=backbone,
        num_parts=cfg.model.num_parts,
        attention_reduction=cfg.model.attention_reduction,
        asam=cfg.modules.asam,
        adm=cfg.modules.adm,
        frm_stig=cfg.modules.frm_stig,
    )


def build_dataset(cfg: ExperimentConfig) -> SyntheticVideoDataset:
    s = cfg.data.synthetic
    return SyntheticVideoDataset(
        num_ids=s.num_ids,
        seed=s.seed,
        T=cfg.data.T,
        height=cfg.data.height,
        width=cfg.data.width,
        eval_identities=s.eval_identities,
        num_test_ids=s.num_test_ids,
        eval_seqs_per_id=s.eval_seqs_per_id,
    )
