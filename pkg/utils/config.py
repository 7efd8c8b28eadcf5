"""
Run configuration: one JSON file with optional `model`, `train`, `data` and
`ablation` sections. Missing sections take defaults; unknown keys are errors.
"""
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from .data import SynthSpec
from .errors import ConfigError
from .file_handlers import read_json_file
from .losses import LOSSES
from .model import FusionConfig

BATCH_PRESETS = {"monuseg": 4, "glas": 4, "pannuke": 16}

ABLATION_ARMS = ("none", "down_only", "up_only", "both", "pool_conv", "reorganize_groupconv")


def _reject_unknown(cls: type, data: Dict[str, Any], section: str) -> None:
    unknown = set(data) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"Unknown {section} config keys: {sorted(unknown)}")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    optimizer: str = "adam"
    lr: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    momentum: float = 0.9
    T_0: float = 10.0
    T_mult: float = 1.0
    eta_min: float = 1e-5
    loss: str = "combined"
    focal_gamma: float = 2.0
    seed: int = 0
    augmentation: bool = True
    eval_batch_size: int = 8
    checkpoint_name: str = "best.funw"
    metrics_name: str = "metrics.csv"

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.epochs < 1 or self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("epochs and batch sizes must be positive")
        if self.lr <= 0 or self.eps <= 0 or self.T_0 <= 0:
            raise ConfigError("lr, eps and T_0 must be positive")
        if self.T_mult < 1:
            raise ConfigError(f"T_mult must be ≥ 1, got {self.T_mult}")
        if not 0 <= self.eta_min <= self.lr:
            raise ConfigError(f"eta_min must lie in [0, lr], got {self.eta_min}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"Unknown optimizer '{self.optimizer}'. Available: ['adam', 'sgd']")
        if self.loss not in LOSSES:
            raise ConfigError(f"Unknown loss '{self.loss}'. Available: {list(LOSSES)}")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigError(f"betas must be two numbers in [0, 1), got {self.betas}")

    @classmethod
    def preset(cls, dataset: str, **overrides: Any) -> "TrainConfig":
        """Batch size per dataset family: 4 for MoNuSeg/GlaS, 16 for PanNuke."""
        if dataset not in BATCH_PRESETS:
            raise ConfigError(f"Unknown batch preset '{dataset}'. Available: {list(BATCH_PRESETS)}")
        return cls(**{"batch_size": BATCH_PRESETS[dataset], **overrides})

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        _reject_unknown(cls, data, "train")
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["betas"] = list(self.betas)
        return data


@dataclass
class DataConfig:
    n_train: int = 200
    n_val: int = 50
    n_test: int = 50
    dataset_dir: Optional[str] = None
    synth: SynthSpec = field(default_factory=SynthSpec)

    def __post_init__(self):
        if self.n_train < 1 or self.n_val < 1 or self.n_test < 0:
            raise ConfigError("need n_train ≥ 1, n_val ≥ 1 and n_test ≥ 0")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DataConfig":
        counts = {k: data[k] for k in ("n_train", "n_val", "n_test", "dataset_dir") if k in data}
        rest = {k: v for k, v in data.items() if k not in counts}
        return cls(**counts, synth=SynthSpec.from_dict(rest))

    def to_dict(self) -> Dict[str, Any]:
        return {"n_train": self.n_train, "n_val": self.n_val, "n_test": self.n_test,
                "dataset_dir": self.dataset_dir, **self.synth.to_dict()}


@dataclass
class AblationConfig:
    seeds: int = 5
    arms: List[str] = field(default_factory=lambda: list(ABLATION_ARMS))

    def __post_init__(self):
        if self.seeds < 1:
            raise ConfigError(f"ablation needs at least one seed, got {self.seeds}")
        bad = [a for a in self.arms if a not in ABLATION_ARMS]
        if bad:
            raise ConfigError(f"Unknown ablation arms {bad}. Available: {list(ABLATION_ARMS)}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AblationConfig":
        _reject_unknown(cls, data, "ablation")
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class RunConfig:
    model: FusionConfig = field(default_factory=lambda: FusionConfig.preset("desk"))
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def __post_init__(self):
        synth = self.data.synth
        pairs = (("side", synth.side, self.model.input_side),
                 ("in_channels", synth.in_channels, self.model.in_channels),
                 ("n_classes", synth.n_classes, self.model.n_classes))
        for name, data_value, model_value in pairs:
            if data_value != model_value:
                raise ConfigError(f"data {name}={data_value} does not match model {name}={model_value}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        unknown = set(data) - {"model", "train", "data", "ablation"}
        if unknown:
            raise ConfigError(f"Unknown config sections: {sorted(unknown)}")
        model = data.get("model", {})
        preset = model.get("preset", "desk")
        model = {k: v for k, v in model.items() if k != "preset"}
        _reject_unknown(FusionConfig, model, "model")
        return cls(
            model=FusionConfig.preset(preset, **model),
            train=TrainConfig.from_dict(data.get("train", {})),
            data=DataConfig.from_dict(data.get("data", {})),
            ablation=AblationConfig.from_dict(data.get("ablation", {})),
        )

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None) -> "RunConfig":
        """Defaults when `path` is None, otherwise the parsed file."""
        return cls() if path is None else cls.from_dict(read_json_file(path))

    def with_seed(self, seed: int) -> "RunConfig":
        """The same run with the training and data seeds replaced."""
        synth = SynthSpec.from_dict({**self.synth_dict(), "seed": seed})
        return RunConfig(
            model=self.model,
            train=TrainConfig.from_dict({**self.train.to_dict(), "seed": seed}),
            data=DataConfig(self.data.n_train, self.data.n_val, self.data.n_test, self.data.dataset_dir, synth),
            ablation=self.ablation,
        )

    def synth_dict(self) -> Dict[str, Any]:
        return self.data.synth.to_dict()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "data": self.data.to_dict(),
            "ablation": self.ablation.to_dict(),
        }
