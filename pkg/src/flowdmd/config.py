"""Declarative experiment configuration files.

Flat key=value lines grouped into [experiment], [network], [optimizer], and
[output] sections. Unknown sections or keys are rejected so typos fail fast.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .systems import SYSTEMS
from .training import FlowDmdConfig

_SECTION_KEYS = {
    "experiment": {"system", "n_samples", "seed", "alpha", "rank",
                   "horizon", "nx", "dt", "t_end"},
    "network": {"kind", "depth", "hidden", "activation"},
    "optimizer": {"lr", "max_epochs", "early_stop", "scheduler_factor",
                  "scheduler_patience", "min_lr"},
    "output": {"dir"},
}

_STATE_DIMS = {"fixed_point": 2, "burgers": 30, "allen_cahn": 20}


@dataclass
class ExperimentConfig:
    """One experiment: data source, network shape, losses, optimizer, output."""

    system: str
    n_samples: int = 100
    seed: int = 0
    alpha: float = 1.0
    rank: int = 3
    kind: str = "residual"
    depth: int = 3
    hidden: tuple = (20,)
    activation: str = "relu"
    lr: float = 1e-3
    max_epochs: int = 1500
    early_stop: int = 200
    scheduler_factor: float = 0.5
    scheduler_patience: int = 10
    min_lr: float = 1e-6
    out_dir: str = "runs/out"
    horizon: int = 60          # fixed-point trajectory length
    nx: int | None = None      # grid override for the PDE systems
    dt: float | None = None
    t_end: float | None = None

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ConfigError(f"unknown system {self.system!r}; choose from {SYSTEMS}")
        if self.n_samples < 5:
            raise ConfigError(f"need at least 5 samples, got {self.n_samples}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        self.hidden = tuple(int(h) for h in self.hidden)

    @property
    def state_dim(self) -> int:
        if self.system == "fixed_point":
            return 2
        return int(self.nx) if self.nx is not None else _STATE_DIMS[self.system]

    def system_kwargs(self) -> dict:
        if self.system == "fixed_point":
            return {"steps": self.horizon}
        out = {}
        if self.nx is not None:
            out["nx"] = int(self.nx)
        if self.dt is not None:
            out["dt"] = float(self.dt)
        if self.t_end is not None:
            out["t_end"] = float(self.t_end)
        return out

    def flow_config(self) -> FlowDmdConfig:
        return FlowDmdConfig(
            m=self.state_dim,
            depth=self.depth,
            kind=self.kind,
            hidden=self.hidden,
            alpha=self.alpha,
            rank=self.rank,
            lr=self.lr,
            max_epochs=self.max_epochs,
            early_stop=self.early_stop,
            scheduler_factor=self.scheduler_factor,
            scheduler_patience=self.scheduler_patience,
            min_lr=self.min_lr,
            seed=self.seed,
            activation=self.activation,
        )

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        kwargs = dict(data)
        if "hidden" in kwargs:
            kwargs["hidden"] = tuple(kwargs["hidden"])
        return cls(**kwargs)


# Benchmark defaults: three affine blocks on the planar map, residual stacks
# on both PDE systems, rank and widths matched to the reference runs.
_DEFAULTS = {
    "fixed_point": dict(
        system="fixed_point", n_samples=120, rank=2, kind="affine",
        depth=3, hidden=(8,), max_epochs=3000, out_dir="runs/fixed_point",
    ),
    "burgers": dict(
        system="burgers", n_samples=100, rank=3, kind="residual",
        depth=3, hidden=(40,), max_epochs=1500, out_dir="runs/burgers",
    ),
    "allen_cahn": dict(
        system="allen_cahn", n_samples=100, rank=3, kind="residual",
        depth=3, hidden=(20,), max_epochs=1500, out_dir="runs/allen_cahn",
    ),
}


def default_config(system: str, **overrides) -> ExperimentConfig:
    """Benchmark configuration for a named system, with overrides applied."""
    if system not in _DEFAULTS:
        raise ConfigError(f"unknown system {system!r}; choose from {SYSTEMS}")
    kwargs = dict(_DEFAULTS[system])
    kwargs.update(overrides)
    return ExperimentConfig(**kwargs)


_INT_KEYS = {"n_samples", "seed", "rank", "depth", "max_epochs", "early_stop",
             "scheduler_patience", "horizon", "nx"}
_FLOAT_KEYS = {"alpha", "lr", "scheduler_factor", "min_lr", "dt", "t_end"}


def _convert(key: str, raw: str):
    try:
        if key == "hidden":
            return tuple(int(p) for p in raw.replace(",", " ").split())
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
    except ValueError:
        raise ConfigError(f"cannot parse value {raw!r} for key {key!r}") from None
    return raw


def load_config(path) -> ExperimentConfig:
    """Parse and validate a config file; unknown sections or keys fail."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as err:
        raise ConfigError(f"{path}: {err}") from None
    kwargs = {}
    for section in parser.sections():
        if section not in _SECTION_KEYS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SECTION_KEYS[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            target = "out_dir" if (section, key) == ("output", "dir") else key
            kwargs[target] = _convert(target, raw)
    if "system" not in kwargs:
        raise ConfigError(f"{path}: missing required key 'system' in [experiment]")
    system = kwargs.pop("system")
    return default_config(system, **kwargs)


def write_config(config: ExperimentConfig, path) -> None:
    """Emit a config file that parses back to the same configuration."""
    lines = [
        "[experiment]",
        f"system = {config.system}",
        f"n_samples = {config.n_samples}",
        f"seed = {config.seed}",
        f"alpha = {config.alpha!r}",
        f"rank = {config.rank}",
    ]
    if config.system == "fixed_point":
        lines.append(f"horizon = {config.horizon}")
    for key in ("nx", "dt", "t_end"):
        value = getattr(config, key)
        if value is not None:
            lines.append(f"{key} = {value!r}")
    lines += [
        "",
        "[network]",
        f"kind = {config.kind}",
        f"depth = {config.depth}",
        "hidden = " + ",".join(str(h) for h in config.hidden),
        f"activation = {config.activation}",
        "",
        "[optimizer]",
        f"lr = {config.lr!r}",
        f"max_epochs = {config.max_epochs}",
        f"early_stop = {config.early_stop}",
        f"scheduler_factor = {config.scheduler_factor!r}",
        f"scheduler_patience = {config.scheduler_patience}",
        f"min_lr = {config.min_lr!r}",
        "",
        "[output]",
        f"dir = {config.out_dir}",
        "",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines))
