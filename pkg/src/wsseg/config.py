"""Run configuration stored as a sectioned ``key = value`` text file."""
from __future__ import annotations

import configparser
import os
from dataclasses import asdict, dataclass, fields

from .model import ModelConfig
from .pseudo_label import CrfConfig
from .vit import ViTConfig

SEED_ENV = "WSSEG_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    # [model]
    image_size: int = 48
    patch_size: int = 8
    embed_dim: int = 32
    num_heads: int = 2
    num_blocks: int = 2
    mlp_ratio: int = 4
    dropout_rate: float = 0.0
    layer_scale: float = 0.01
    num_classes: int = 3
    token_dim: int = 8
    hidden_dim: int = 20
    head_hidden: int = 32
    use_class_token: bool = True
    use_bilstm: bool = True
    pooling: str = "topk"
    k: int = 4
    # [train]
    seed: int = 0
    batch_size: int = 8
    epochs: int = 200
    optimizer: str = "adam"
    warm_lr: float = 1e-3
    warm_epochs: int = 50
    main_lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    target_accuracy: float = 0.0
    # [data]
    data_root: str = ""
    train_split: str = "train"
    val_split: str = "val"
    # [infer]
    infer_size: int = 0
    bg_threshold: float = 0.45
    crf: bool = True
    # [crf]
    crf_iterations: int = 10
    crf_spatial_std: float = 3.0
    crf_bilateral_spatial_std: float = 32.0
    crf_bilateral_color_std: float = 0.25
    crf_spatial_weight: float = 3.0
    crf_bilateral_weight: float = 5.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.optimizer != "adam":
            raise ConfigError(f"optimizer must be 'adam', got {self.optimizer!r}")
        if self.pooling not in ("topk", "avg", "max"):
            raise ConfigError(f"pooling must be topk, avg or max, got {self.pooling!r}")
        if self.image_size % self.patch_size:
            raise ConfigError("image_size must be divisible by patch_size")
        if self.infer_size and self.infer_size % self.patch_size:
            raise ConfigError("infer_size must be divisible by patch_size")
        if self.embed_dim % self.num_heads:
            raise ConfigError("embed_dim must be divisible by num_heads")
        s = (self.image_size // self.patch_size) ** 2
        if not 1 <= self.k <= s:
            raise ConfigError(f"k must be in [1, {s}]")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if not 0 < self.bg_threshold < 1:
            raise ConfigError("bg_threshold must be in (0, 1)")

    # -- derived configs ------------------------------------------------
    def model_config(self):
        vit = ViTConfig(self.image_size, self.patch_size, self.embed_dim, self.num_heads,
                        self.num_blocks, self.mlp_ratio, self.dropout_rate, self.layer_scale)
        return ModelConfig(vit, self.num_classes,
                           self.token_dim if self.use_class_token else 0,
                           self.hidden_dim, self.head_hidden, self.use_class_token,
                           self.use_bilstm, self.pooling, self.k)

    def crf_config(self):
        return CrfConfig(self.crf_iterations, self.crf_spatial_std,
                         self.crf_bilateral_spatial_std, self.crf_bilateral_color_std,
                         self.crf_spatial_weight, self.crf_bilateral_weight)

    def replace(self, **changes):
        d = asdict(self)
        unknown = set(changes) - set(d)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        d.update(changes)
        return Config(**d)

    # -- text form --------------------------------------------------------
    def to_text(self):
        parser = configparser.ConfigParser()
        for section, keys in SECTIONS.items():
            parser[section] = {k: _fmt(getattr(self, k)) for k in keys}
        lines = []
        for section in parser.sections():
            lines.append(f"[{section}]")
            lines += [f"{k} = {v}" for k, v in parser[section].items()]
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text, env=True):
        parser = configparser.ConfigParser()
        try:
            parser.read_string(text)
        except configparser.Error as err:
            raise ConfigError(f"malformed config: {err}") from None
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]")
            for key, raw in parser[section].items():
                if key not in SECTIONS[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                values[key] = _parse(raw, types[key], key)
        cfg = cls(**values)
        return cfg.with_env() if env else cfg

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path, env=True):
        with open(path) as fh:
            return cls.from_text(fh.read(), env=env)

    def with_env(self):
        raw = os.environ.get(SEED_ENV)
        if raw is None or raw == "":
            return self
        try:
            return self.replace(seed=int(raw))
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


SECTIONS = {
    "model": ["image_size", "patch_size", "embed_dim", "num_heads", "num_blocks", "mlp_ratio",
              "dropout_rate", "layer_scale", "num_classes", "token_dim", "hidden_dim", "head_hidden",
              "use_class_token", "use_bilstm", "pooling", "k"],
    "train": ["seed", "batch_size", "epochs", "optimizer", "warm_lr", "warm_epochs", "main_lr",
              "beta1", "beta2", "adam_eps", "target_accuracy"],
    "data": ["data_root", "train_split", "val_split"],
    "infer": ["infer_size", "bg_threshold", "crf"],
    "crf": ["crf_iterations", "crf_spatial_std", "crf_bilateral_spatial_std",
            "crf_bilateral_color_std", "crf_spatial_weight", "crf_bilateral_weight"],
}


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse(raw, typ, key):
    typ = typ if isinstance(typ, str) else typ.__name__
    raw = raw.strip()
    try:
        if typ == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r} (expected {typ})") from None
