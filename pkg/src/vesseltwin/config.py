"""Flat run configuration shared by every subcommand.

A run is described by one JSON object whose keys are the fields of
:class:`RunConfig`. Unknown keys are rejected. Every field is also a command
line flag (``--lr``, ``--averaged-window-edges`` ...), and flags win over file values.
The effective configuration is written next to the outputs so a run can be
repeated exactly.

Seed derivation from ``seed``:

* synthetic twin i of the pretraining corpus: ``seed + i``
* labeled fine-tuning twins: ``seed + 1_000_000 + i``; evaluation twins ``seed + 2_000_000 + i``
* phantom donors: ``seed + 3_000_000 + j``
* label flow rate of a twin: ``default_rng([seed, 4243, twin seed])``
* encoder initialisation: ``seed``; epoch e ordering: ``default_rng([seed, e])``
"""
from __future__ import annotations

import argparse
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .a3m import DEFAULT_RANGES
from .geometry import MMHG
from .hemo1d import HemoConstants
from .nnet.model import EncoderConfig
from .nnet.train import FinetuneConfig, OptimConfig
from .physloss import LossConfig

FINETUNE_SEED_OFFSET = 1_000_000
EVAL_SEED_OFFSET = 2_000_000
PHANTOM_SEED_OFFSET = 3_000_000
LABEL_STREAM = 4243


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # paths
    out: str = "run"
    donors: list = field(default_factory=list)
    twins: list = field(default_factory=list)
    checkpoint: str = ""
    labels: str = ""
    predictions: str = ""
    # randomness and parallelism
    seed: int = 0
    jobs: int = 1
    # corpus generation
    count: int = 200
    donor_phantoms: int = 10
    target_n: int = 100
    target_k: int = 16
    bend_amplitude: list = field(default_factory=lambda: list(DEFAULT_RANGES["bend_amplitude"]))
    bend_frequency: list = field(default_factory=lambda: list(DEFAULT_RANGES["bend_frequency"]))
    smoothing_sigma: list = field(default_factory=lambda: list(DEFAULT_RANGES["smoothing_sigma"]))
    radius_noise_sigma: list = field(default_factory=lambda: list(DEFAULT_RANGES["radius_noise_sigma"]))
    # 1D physics
    q: float = 1.5
    p_in_mmhg: float = 100.0
    rho: float = 1.05
    mu: float = 0.035
    zeta: float = 4.31
    kt: float = 1.52
    # labels
    ffr_threshold: float = 0.8
    label_q: list = field(default_factory=lambda: [0.5, 3.0])
    # physics loss
    epsilon: float = 1e-6
    k_end: int = 5
    window: int = 50
    stride: int = 25
    w_residual: float = 1.0
    w_global: float = 1.0
    w_local: float = 1.0
    averaged_window_edges: bool = False
    printed_friction_sign: bool = False
    # encoder
    d: int = 16
    layers_per_block: int = 4
    pool_ratio: float = 0.5
    k_ca: int = 8
    pressure_scale_mmhg: float = 100.0
    flow_scale: float = 1.5
    flow_output: str = "bounded"
    flow_log_range: float = math.log(2.0)
    head_init_scale: float = 0.01
    pooling: str = "mean"
    # pretraining
    lr: float = 1e-3
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 4
    clip_norm: float = 1.0
    # fine-tuning and evaluation
    finetune_count: int = 40
    eval_count: int = 40
    ft_lr: float = 0.05
    ft_momentum: float = 0.9
    ft_epochs: int = 500
    threshold: float = 0.5

    def validate(self) -> None:
        """Raise ConfigError on the first out-of-range value."""
        checks = [
            (self.jobs >= 1, "jobs must be >= 1"),
            (self.count >= 0, "count must be >= 0"),
            (self.donor_phantoms >= 0, "donor_phantoms must be >= 0"),
            (self.target_n >= 2, "target_n must be >= 2"),
            (self.target_k >= 3, "target_k must be >= 3"),
            (self.q >= 0, "q must be >= 0"),
            (self.p_in_mmhg > 0, "p_in_mmhg must be > 0"),
            (min(self.rho, self.mu, self.kt) > 0, "rho, mu and kt must be > 0"),
            (self.zeta > -2, "zeta must be > -2"),
            (0 < self.ffr_threshold < 1, "ffr_threshold must be in (0, 1)"),
            (self.finetune_count >= 0 and self.eval_count >= 0, "finetune_count and eval_count must be >= 0"),
            (self.epochs >= 0 and self.ft_epochs >= 0, "epochs must be >= 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.lr >= 0 and self.ft_lr >= 0, "learning rates must be >= 0"),
            (0 <= self.momentum < 1 and 0 <= self.ft_momentum < 1, "momentum must be in [0, 1)"),
            (self.clip_norm >= 0, "clip_norm must be >= 0 (0 disables clipping)"),
            (0 < self.threshold < 1, "threshold must be in (0, 1)"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        for name in ("bend_amplitude", "bend_frequency", "smoothing_sigma",
                     "radius_noise_sigma", "label_q"):
            r = getattr(self, name)
            if len(r) != 2 or r[0] > r[1]:
                raise ConfigError(f"{name} must be a [low, high] pair with low <= high")
        try:
            self.encoder()
            self.loss().check(self.target_n)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.label_q[0] < 0:
            raise ConfigError("label_q must be >= 0")

    # conversions --------------------------------------------------------------

    def constants(self) -> HemoConstants:
        return HemoConstants(rho=self.rho, mu=self.mu, zeta=self.zeta, kt=self.kt)

    def loss(self) -> LossConfig:
        return LossConfig(
            epsilon=self.epsilon,
            k_end=self.k_end,
            window=self.window,
            stride=self.stride,
            weights=(self.w_residual, self.w_global, self.w_local),
            averaged_window_edges=self.averaged_window_edges,
            printed_friction_sign=self.printed_friction_sign,
            constants=self.constants(),
        )

    def encoder(self) -> EncoderConfig:
        return EncoderConfig(
            d=self.d,
            layers_per_block=self.layers_per_block,
            pool_ratio=self.pool_ratio,
            k_ca=self.k_ca,
            n_centerline=self.target_n,
            seed=self.seed,
            pressure_scale=self.pressure_scale_mmhg * MMHG,
            flow_scale=self.flow_scale,
            flow_output=self.flow_output,
            flow_log_range=self.flow_log_range,
            head_init_scale=self.head_init_scale,
            pooling=self.pooling,
        )

    def optim(self) -> OptimConfig:
        return OptimConfig(lr=self.lr, momentum=self.momentum, epochs=self.epochs, batch_size=self.batch_size,
                           clip_norm=self.clip_norm or None, seed=self.seed)

    def finetune(self) -> FinetuneConfig:
        return FinetuneConfig(lr=self.ft_lr, momentum=self.ft_momentum, epochs=self.ft_epochs, seed=self.seed)

    def ranges(self) -> dict:
        return {name: tuple(getattr(self, name)) for name in DEFAULT_RANGES}

    def to_dict(self) -> dict:
        return asdict(self)


FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name: str, value):
    default = getattr(RunConfig(), name)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{name} must be a list")
        if name in ("donors", "twins"):
            return [str(v) for v in value]
        try:
            return [float(v) for v in value]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{name} must be a list of numbers") from exc
    try:
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ConfigError(f"{name} must be an integer")
            return int(value)
        return type(default)(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: cannot use {value!r}") from exc


def from_dict(d: dict, base: RunConfig | None = None) -> RunConfig:
    unknown = sorted(set(d) - set(FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = (base or RunConfig()).to_dict()
    for k, v in d.items():
        values[k] = _coerce(k, v)
    return RunConfig(**values)


def load(path) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: JSON parse error: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return from_dict(d)


def save(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def add_arguments(parser: argparse.ArgumentParser) -> None:
    """One override flag per config field; unset flags stay None."""
    parser.add_argument("--config", help="JSON config file; flags override its values")
    defaults = RunConfig()
    for name in FIELDS:
        flag = "--" + name.replace("_", "-")
        default = getattr(defaults, name)
        if isinstance(default, bool):
            parser.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction, default=None)
        elif isinstance(default, list):
            kind = str if name in ("donors", "twins") else float
            parser.add_argument(flag, dest=name, nargs="*", type=kind, default=None, metavar=name.upper())
        else:
            parser.add_argument(flag, dest=name, type=type(default), default=None, help=f"default {default!r}")


def resolve(args: argparse.Namespace) -> RunConfig:
    cfg = load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {k: getattr(args, k) for k in FIELDS if getattr(args, k, None) is not None}
    cfg = from_dict(overrides, cfg)
    cfg.validate()
    return cfg
