"""Flat ``key = value`` run configuration with strict parsing."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .model import ModelConfig
from .odecore import OdeConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data
    T: int = 24
    tau: int = 24
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    train_stride: int = 1
    interval_level: float = 0.9
    calibrate_intervals: bool = True
    # graph
    length_scale: float = 25.0
    cutoff: float = 40.0
    speed_ref: float = 10.0
    mixing_gain: float = 0.0
    # model
    hidden: int = 64
    gat_dim: int = 4
    latent_dim: int = 4
    K: int = 2
    modes: int = 8
    n_traj: int = 3
    phi_hidden: int = 32
    fusion_hidden: int = 16
    dropout: float = 0.1
    filter_type: str = "diff_adv"
    advection_mode: str = "learned"
    field_spectral: bool = True
    aleatoric: bool = True
    evidential: bool = False
    decoder_skip: bool = True
    D_init: float = 0.1
    # solver
    rtol: float = 1e-5
    atol: float = 1e-5
    max_steps: int = 2000
    # optimization
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    lr_decay: float = 0.5
    decay_every: int = 20
    grad_clip_norm: float = 5.0
    max_epochs: int = 50
    patience: int = 10
    lambda_phys: float = 1e-2
    lambda_unc: float = 1e-3
    lambda_reg: float = 1e-2
    seed: int = 0

    def _pick(self, cls):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})

    def model_config(self):
        return self._pick(ModelConfig)

    def train_config(self):
        return self._pick(TrainConfig)

    def ode_config(self):
        return OdeConfig(rtol=self.rtol, atol=self.atol, max_steps=self.max_steps)

    @property
    def fractions(self):
        return (self.train_fraction, self.val_fraction,
                1.0 - self.train_fraction - self.val_fraction)


def _positive(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _unit_open(x):
    return 0 < x < 1


CONSTRAINTS = {
    "T": (_positive, "must be >= 1"),
    "tau": (_positive, "must be >= 1"),
    "train_fraction": (_unit_open, "must lie in (0, 1)"),
    "val_fraction": (_unit_open, "must lie in (0, 1)"),
    "train_stride": (_positive, "must be >= 1"),
    "interval_level": (_unit_open, "must lie in (0, 1)"),
    "length_scale": (_positive, "must be positive"),
    "cutoff": (_positive, "must be positive"),
    "speed_ref": (_positive, "must be positive"),
    "mixing_gain": (_nonneg, "must be nonnegative"),
    "hidden": (_positive, "must be >= 1"),
    "gat_dim": (_positive, "must be >= 1"),
    "latent_dim": (_positive, "must be >= 1"),
    "K": (_positive, "must be >= 1"),
    "modes": (_positive, "must be >= 1"),
    "n_traj": (_positive, "must be >= 1"),
    "phi_hidden": (_positive, "must be >= 1"),
    "fusion_hidden": (_positive, "must be >= 1"),
    "dropout": (lambda x: 0 <= x < 1, "must lie in [0, 1)"),
    "filter_type": (lambda x: x in ("diff", "adv", "diff_adv"), "must be diff, adv or diff_adv"),
    "advection_mode": (lambda x: x in ("learned", "theory"), "must be learned or theory"),
    "D_init": (_positive, "must be positive"),
    "rtol": (_positive, "must be positive"),
    "atol": (_positive, "must be positive"),
    "max_steps": (_positive, "must be >= 1"),
    "lr": (_positive, "must be positive"),
    "beta1": (lambda x: 0 <= x < 1, "must lie in [0, 1)"),
    "beta2": (lambda x: 0 <= x < 1, "must lie in [0, 1)"),
    "eps": (_positive, "must be positive"),
    "batch_size": (_positive, "must be >= 1"),
    "lr_decay": (_positive, "must be positive"),
    "decay_every": (_positive, "must be >= 1"),
    "grad_clip_norm": (_positive, "must be positive"),
    "max_epochs": (_nonneg, "must be >= 0"),
    "patience": (_positive, "must be >= 1"),
    "lambda_phys": (_nonneg, "must be nonnegative"),
    "lambda_unc": (_nonneg, "must be nonnegative"),
    "lambda_reg": (_nonneg, "must be nonnegative"),
    "seed": (_nonneg, "must be a nonnegative integer"),
}

_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key, text, lineno):
    kind = _TYPES[key]
    where = f"line {lineno}: key {key!r}"
    if kind == "bool":
        low = text.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ConfigError(f"{where}: expected true/false, got {text!r}")
    if kind == "int":
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{where}: expected an integer, got {text!r}") from None
    if kind == "float":
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{where}: expected a number, got {text!r}") from None
    return text


def parse_config_text(text):
    values = {}
    lines = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: key {key!r} given twice")
        values[key] = _convert(key, val, lineno)
        lines[key] = lineno
    for key, v in values.items():
        ok, msg = CONSTRAINTS.get(key, (lambda _: True, ""))
        if not ok(v):
            raise ConfigError(f"line {lines[key]}: key {key!r} {msg} (got {v!r})")
    cfg = RunConfig(**values)
    if cfg.train_fraction + cfg.val_fraction >= 1.0:
        raise ConfigError("train_fraction + val_fraction must leave room for a test split")
    return cfg


def parse_config(path):
    """Read a config file; missing keys take their defaults."""
    with open(path) as fh:
        return parse_config_text(fh.read())


def serialize_config(cfg):
    out = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        out.append(f"{f.name} = {v}")
    return "\n".join(out) + "\n"


def override(cfg, **kwargs):
    """Replace fields, validating each new value like a parsed one."""
    for key, v in kwargs.items():
        if key not in _TYPES:
            raise ConfigError(f"unknown key {key!r}")
        ok, msg = CONSTRAINTS.get(key, (lambda _: True, ""))
        if not ok(v):
            raise ConfigError(f"key {key!r} {msg} (got {v!r})")
    return dataclasses.replace(cfg, **kwargs)
