"""Experiment configuration: JSON in, validated dataclasses out."""

import json
from dataclasses import asdict, dataclass, field, fields

from .trainer import TrainConfig

VARIANTS = ("baseline", "antialias", "fixed_blur")
AFS = ("relu", "c_relu", "aa_relu")
EVAL_PROTOCOLS = ("diagonal", "rescale", "double_rescale", "fp", "ce")
ATTACKS = ("first_order", "grid_search", "worst_of_k")


class ConfigError(ValueError):
    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class DatasetConfig:
    name: str = "mnist"
    dir: str = "data/mnist"
    train_n: int = 10000
    test_n: int = 2000


@dataclass
class ModelConfig:
    variant: str = "baseline"
    af: str = "relu"
    kernel_size: int = 3
    alpha_init: float = 6.0
    use_strided_conv: bool = False
    gap_head: bool = False
    fixed_kernel: str = "bin3"


@dataclass
class EvalConfig:
    protocols: list = field(default_factory=lambda: ["diagonal", "rescale", "double_rescale"])
    fp_kinds: list = field(default_factory=lambda: ["translate", "rotate", "tilt", "scale"])
    fp_frames: int = 31
    fp_images: int = 200
    corruptions: list = field(default_factory=lambda: ["gauss_noise", "shot_noise", "impulse_noise", "speckle_noise"])
    severities: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    attacks: dict = field(default_factory=lambda: {"grid_search": {"radius": 5}})
    attack_images: int = 500
    spectra_images: int = 500


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str = "runs/default"
    seed: int = 0

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _section(cls, raw, prefix):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(prefix, "expected an object")
    known = {f.name: f for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{prefix}.{key}", "unknown field")
    kwargs = {}
    for key, value in raw.items():
        default = getattr(cls(), key) if cls is not TrainConfig else getattr(TrainConfig(), key)
        if isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigError(f"{prefix}.{key}", f"expected a boolean, got {value!r}")
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{prefix}.{key}", f"expected a number, got {value!r}")
            if isinstance(default, int) and not isinstance(default, bool) and not float(value).is_integer():
                raise ConfigError(f"{prefix}.{key}", f"expected an integer, got {value!r}")
            value = type(default)(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(prefix, str(exc)) from None


def _choice(value, options, name):
    if value not in options:
        raise ConfigError(name, f"expected one of {list(options)}, got {value!r}")


def parse_config(raw):
    """Build an :class:`ExperimentConfig` from a dict, validating enums."""
    if not isinstance(raw, dict):
        raise ConfigError("config", "expected a JSON object")
    for key in raw:
        if key not in {f.name for f in fields(ExperimentConfig)}:
            raise ConfigError(key, "unknown field")
    cfg = ExperimentConfig(
        dataset=_section(DatasetConfig, raw.get("dataset"), "dataset"),
        model=_section(ModelConfig, raw.get("model"), "model"),
        train=_section(TrainConfig, raw.get("train"), "train"),
        eval=_section(EvalConfig, raw.get("eval"), "eval"),
        output_dir=str(raw.get("output_dir", "runs/default")),
        seed=int(raw.get("seed", 0)),
    )
    _choice(cfg.dataset.name, ("mnist", "cifar10"), "dataset.name")
    _choice(cfg.model.variant, VARIANTS, "model.variant")
    _choice(cfg.model.af, AFS, "model.af")
    _choice(cfg.model.kernel_size, (3, 5, 7), "model.kernel_size")
    _choice(cfg.model.fixed_kernel, ("bin3", "bin5"), "model.fixed_kernel")
    if cfg.model.alpha_init < 0.5:
        raise ConfigError("model.alpha_init", "must be >= 0.5")
    for p in cfg.eval.protocols:
        _choice(p, EVAL_PROTOCOLS, "eval.protocols")
    for name in cfg.eval.attacks:
        _choice(name, ATTACKS, "eval.attacks")
    for s in cfg.eval.severities:
        _choice(s, (1, 2, 3, 4, 5), "eval.severities")
    if cfg.eval.fp_frames < 2:
        raise ConfigError("eval.fp_frames", "must be >= 2")
    return cfg


def load_config(path):
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from None
    return parse_config(raw)
