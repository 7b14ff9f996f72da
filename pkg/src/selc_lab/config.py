"""Experiment configuration: a single YAML tree, validated on load.

Relative paths inside a config (IDX/CSV datasets, noise mapping files,
the output directory) resolve against the directory containing the config
file, so a config plus its data folder can move as a unit. Loading an
already-resolved config is a fixed point: load -> save -> load gives an
equal object.
"""

import os
from dataclasses import asdict, dataclass, field

import yaml

from .errors import ParameterError
from .mlp import ACTIVATIONS

DATASET_KINDS = ("blobs", "idx", "csv")
NOISE_KINDS = ("none", "symmetric", "asymmetric")
METHOD_NAMES = ("ce", "bootstrap", "selc", "option1", "selc_plus")
AUTO = "auto"


@dataclass
class DatasetSpecConfig:
    kind: str = "blobs"
    # blobs
    n: int = 4000
    dim: int = 16
    num_classes: int = 4
    cluster_std: float = 1.0
    seed: int = 0
    test_n: int | None = None
    # idx
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    # csv
    train_csv: str | None = None
    test_csv: str | None = None


@dataclass
class NoiseSpecConfig:
    kind: str = "symmetric"
    eta: float = 0.4
    exclude_true_class: bool = False
    mapping_file: str | None = None


@dataclass
class ModelSpecConfig:
    hidden_dims: list = field(default_factory=lambda: [64, 64])
    activation: str = "tanh"


@dataclass
class OptimizerSpecConfig:
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 0.001
    milestones: list = field(default_factory=list)
    decay_factor: float = 10.0
    batch_size: int = 128
    epochs: int = 60


@dataclass
class MethodSpecConfig:
    name: str = "ce"
    beta: float = 0.8
    # alpha may be a single value or a list (sweep -> one subrun per value)
    alpha: object = 0.9
    activation_epoch: object = AUTO
    detector_patience: int = 10
    metric_choice: str = "m1"
    smooth: bool = False
    mixup_beta_param: float = 1.0
    plus_epochs: int | None = None


@dataclass
class ExperimentConfig:
    dataset: DatasetSpecConfig
    noise: NoiseSpecConfig
    model: ModelSpecConfig
    optimizer: OptimizerSpecConfig
    method: MethodSpecConfig
    trials: list
    out_dir: str


def alpha_values(method: MethodSpecConfig) -> list:
    """The method's alpha(s) as a list; single values become one-element lists."""
    if isinstance(method.alpha, (list, tuple)):
        return [float(a) for a in method.alpha]
    return [float(method.alpha)]


def _require(cond, message):
    if not cond:
        raise ParameterError(message)


def validate_config(cfg: ExperimentConfig) -> None:
    ds, noise, model, opt, method = cfg.dataset, cfg.noise, cfg.model, cfg.optimizer, cfg.method
    _require(ds.kind in DATASET_KINDS, f"dataset.kind must be one of {DATASET_KINDS}, got {ds.kind!r}")
    if ds.kind == "blobs":
        _require(ds.num_classes >= 2, f"dataset.num_classes must be >= 2, got {ds.num_classes}")
        _require(ds.n >= ds.num_classes, f"dataset.n must be >= num_classes, got {ds.n}")
        _require(ds.dim >= 1, f"dataset.dim must be >= 1, got {ds.dim}")
        _require(ds.cluster_std > 0, f"dataset.cluster_std must be positive, got {ds.cluster_std}")
    elif ds.kind == "idx":
        for name in ("train_images", "train_labels", "test_images", "test_labels"):
            path = getattr(ds, name)
            _require(path is not None, f"dataset.{name} is required for kind 'idx'")
            _require(os.path.exists(path), f"dataset.{name}: no such file: {path}")
    else:
        for name in ("train_csv", "test_csv"):
            path = getattr(ds, name)
            _require(path is not None, f"dataset.{name} is required for kind 'csv'")
            _require(os.path.exists(path), f"dataset.{name}: no such file: {path}")

    _require(noise.kind in NOISE_KINDS, f"noise.kind must be one of {NOISE_KINDS}, got {noise.kind!r}")
    if noise.kind != "none":
        _require(0.0 <= noise.eta < 1.0, f"noise.eta must be in [0, 1), got {noise.eta}")
    if noise.kind == "asymmetric":
        _require(noise.mapping_file is not None, "noise.mapping_file is required for asymmetric noise")
        _require(os.path.exists(noise.mapping_file),
                 f"noise.mapping_file: no such file: {noise.mapping_file}")

    _require(len(model.hidden_dims) >= 1, "model.hidden_dims must list at least one layer width")
    _require(all(int(h) >= 1 for h in model.hidden_dims),
             f"model.hidden_dims must be positive, got {model.hidden_dims}")
    _require(model.activation in ACTIVATIONS,
             f"model.activation must be one of {ACTIVATIONS}, got {model.activation!r}")

    _require(opt.lr > 0, f"optimizer.lr must be positive, got {opt.lr}")
    _require(0.0 <= opt.momentum < 1.0, f"optimizer.momentum must be in [0, 1), got {opt.momentum}")
    _require(opt.weight_decay >= 0, f"optimizer.weight_decay must be >= 0, got {opt.weight_decay}")
    _require(opt.decay_factor > 1.0, f"optimizer.decay_factor must exceed 1, got {opt.decay_factor}")
    _require(opt.batch_size >= 1, f"optimizer.batch_size must be >= 1, got {opt.batch_size}")
    _require(opt.epochs >= 1, f"optimizer.epochs must be >= 1, got {opt.epochs}")
    ms = list(opt.milestones)
    _require(all(int(m) >= 0 for m in ms), f"optimizer.milestones must be >= 0, got {ms}")
    _require(ms == sorted(ms) and len(set(ms)) == len(ms),
             f"optimizer.milestones must be strictly increasing, got {ms}")

    _require(method.name in METHOD_NAMES,
             f"method.name must be one of {METHOD_NAMES}, got {method.name!r}")
    if method.name == "bootstrap":
        _require(0.0 <= method.beta <= 1.0, f"method.beta must be in [0, 1], got {method.beta}")
    if method.name in ("selc", "option1", "selc_plus"):
        for a in alpha_values(method):
            _require(0.0 <= a < 1.0, f"method.alpha values must be in [0, 1), got {a}")
        ae = method.activation_epoch
        if ae != AUTO:
            _require(isinstance(ae, int) and not isinstance(ae, bool) and ae >= 0,
                     f"method.activation_epoch must be 'auto' or an int >= 0, got {ae!r}")
        _require(method.detector_patience >= 1,
                 f"method.detector_patience must be >= 1, got {method.detector_patience}")
        _require(method.metric_choice in ("m1", "m2", "m3"),
                 f"method.metric_choice must be m1, m2 or m3, got {method.metric_choice!r}")
    if method.name == "selc_plus":
        _require(method.mixup_beta_param > 0,
                 f"method.mixup_beta_param must be positive, got {method.mixup_beta_param}")
        if method.plus_epochs is not None:
            _require(method.plus_epochs >= 1,
                     f"method.plus_epochs must be >= 1, got {method.plus_epochs}")

    _require(isinstance(cfg.trials, list) and len(cfg.trials) >= 0, "trials must be a list")
    _require(all(isinstance(t, int) and not isinstance(t, bool) for t in cfg.trials),
             f"trials must be integer seeds, got {cfg.trials}")
    _require(len(set(cfg.trials)) == len(cfg.trials), f"trial seeds must be unique, got {cfg.trials}")
    _require(isinstance(cfg.out_dir, str) and cfg.out_dir != "", "out_dir must be a nonempty string")


_PATH_FIELDS = (
    ("dataset", "train_images"), ("dataset", "train_labels"),
    ("dataset", "test_images"), ("dataset", "test_labels"),
    ("dataset", "train_csv"), ("dataset", "test_csv"),
    ("noise", "mapping_file"),
)


def _resolve_paths(cfg: ExperimentConfig, base_dir: str) -> None:
    for section, name in _PATH_FIELDS:
        value = getattr(getattr(cfg, section), name)
        if value is not None and not os.path.isabs(value):
            setattr(getattr(cfg, section), name, os.path.normpath(os.path.join(base_dir, value)))
    # check before resolving: "" would otherwise normalize into base_dir itself
    if not isinstance(cfg.out_dir, str) or cfg.out_dir == "":
        raise ParameterError("out_dir must be a nonempty string")
    if not os.path.isabs(cfg.out_dir):
        cfg.out_dir = os.path.normpath(os.path.join(base_dir, cfg.out_dir))


def _build_section(cls, data, section):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ParameterError(f"config section {section!r} must be a mapping")
    unknown = set(data) - set(cls.__dataclass_fields__)
    if unknown:
        raise ParameterError(f"unknown keys in config section {section!r}: {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict, base_dir: str = ".") -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ParameterError("config root must be a mapping")
    unknown = set(data) - {"dataset", "noise", "model", "optimizer", "method", "trials", "out_dir"}
    if unknown:
        raise ParameterError(f"unknown top-level config keys: {sorted(unknown)}")
    cfg = ExperimentConfig(
        dataset=_build_section(DatasetSpecConfig, data.get("dataset"), "dataset"),
        noise=_build_section(NoiseSpecConfig, data.get("noise"), "noise"),
        model=_build_section(ModelSpecConfig, data.get("model"), "model"),
        optimizer=_build_section(OptimizerSpecConfig, data.get("optimizer"), "optimizer"),
        method=_build_section(MethodSpecConfig, data.get("method"), "method"),
        trials=data.get("trials", [0]),
        out_dir=data.get("out_dir", "out"),
    )
    _resolve_paths(cfg, base_dir)
    validate_config(cfg)
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {
        "dataset": asdict(cfg.dataset),
        "noise": asdict(cfg.noise),
        "model": asdict(cfg.model),
        "optimizer": asdict(cfg.optimizer),
        "method": asdict(cfg.method),
        "trials": list(cfg.trials),
        "out_dir": cfg.out_dir,
    }


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ParameterError(f"{path}: not valid YAML: {exc}") from exc
    if data is None:
        raise ParameterError(f"{path}: empty config")
    try:
        return config_from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))
    except TypeError as exc:
        # dataclass kwargs mismatch surfaces as TypeError
        raise ParameterError(f"{path}: {exc}") from exc


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", newline="") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False, default_flow_style=False)
