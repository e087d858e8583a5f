"""Sectioned ``key = value`` run configuration with command-line overrides."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import SyntheticConfig
from .model import Hyperparams


class ConfigError(ValueError):
    pass


SECTIONS = {
    "data": ("interactions", "splits", "truth", "split_mode", "min_len", "output_dir"),
    "synthetic": ("K_s", "K_n", "items_per_topic", "train_users", "valid_users", "test_users", "seq_len", "pi",
                  "rho_train", "rho_test"),
    "model": ("d", "d_hat", "c", "T", "lam", "negatives", "lr", "lr_w", "w_steps", "sigma", "sigma_floor", "batch",
              "w_lo", "w_hi", "decorrelate"),
    "train": ("seed", "eval_every", "patience", "max_epochs", "threads"),
}


@dataclass
class Config:
    # data
    interactions: str = ""
    splits: str = ""
    truth: str = ""
    split_mode: str = "file"
    min_len: int = 5
    output_dir: str = "out"
    # synthetic
    K_s: int = 4
    K_n: int = 4
    items_per_topic: int = 50
    train_users: int = 2000
    valid_users: int = 250
    test_users: int = 500
    seq_len: int = 20
    pi: float = 0.6
    rho_train: float = 0.9
    rho_test: float = 0.0
    # model
    d: int = 64
    d_hat: int | None = None
    c: int = 2
    T: int = 20
    lam: float = 1.0
    negatives: int = 10
    lr: float = 1e-3
    lr_w: float = Hyperparams.lr_w
    w_steps: int = 1
    sigma: float | None = None
    sigma_floor: float = 1e-8
    batch: int = 128
    w_lo: float = 0.0
    w_hi: float = 1.0
    decorrelate: bool = True
    # train
    seed: int = 0
    eval_every: int | None = None
    patience: int | None = 3
    max_epochs: int = 50
    threads: int | None = None

    explicit: set = field(default_factory=set, repr=False, compare=False)

    def validate(self) -> "Config":
        if self.split_mode not in ("ood", "random", "file"):
            raise ConfigError(f"split_mode must be ood, random or file, got {self.split_mode!r}")
        for name in ("min_len", "max_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.eval_every is not None and self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be >= 1")
        try:
            self.synthetic()
            self.hyperparams(vocab=max(self.negatives + 1, 2))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def path(self, name: str, default: str) -> Path:
        value = getattr(self, name)
        return Path(value) if value else Path(self.output_dir) / default

    def synthetic(self) -> SyntheticConfig:
        return SyntheticConfig(**{k: getattr(self, k) for k in SECTIONS["synthetic"]}, seed=self.seed)

    def hyperparams(self, vocab: int) -> Hyperparams:
        return Hyperparams(vocab=vocab, **{k: getattr(self, k) for k in SECTIONS["model"]})

    def items(self):
        for section, keys in SECTIONS.items():
            for k in keys:
                yield section, k, getattr(self, k)


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    optional = "None" in kind
    if optional and raw.lower() in ("", "none", "median", "inf"):
        return None
    try:
        if kind.startswith("bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_config(path=None, overrides: dict[str, str] | None = None) -> Config:
    cfg = Config()
    if path:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, raw in parser.items(section):
                if key not in SECTIONS[section]:
                    raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
                setattr(cfg, key, parse_value(key, raw))
                cfg.explicit.add(key)
    for key, raw in (overrides or {}).items():
        if key not in _FIELD_TYPES or key == "explicit":
            raise ConfigError(f"unknown option {key!r}")
        setattr(cfg, key, parse_value(key, raw))
        cfg.explicit.add(key)
    return cfg.validate()


def dump_config(cfg: Config) -> str:
    lines = []
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {format_value(getattr(cfg, k))}" for k in keys)
        lines.append("")
    return "\n".join(lines)
