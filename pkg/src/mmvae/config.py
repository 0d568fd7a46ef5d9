"""Run configuration: defaults < TOML file < command-line flags."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import tomli

from .arm import ArmConfig
from .errors import ConfigError
from .io import config_hash
from .model import TrainConfig

OUT_DIR_ENV = "MMVAE_OUT_DIR"
PROFILES = ("desk", "paper")


def default_out_dir():
    return os.environ.get(OUT_DIR_ENV, "runs")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    rows: int = 7380
    split_ratio: float = 0.8
    profile: str = "desk"
    model: str = "mmvae"
    train_seed: int | None = None
    steps: int | None = None
    batch_size: int | None = None
    lr: float | None = None
    beta: float = 0.0
    nll_beta: float | None = None
    out_dir: str = field(default_factory=default_out_dir)
    arm: ArmConfig = field(default_factory=ArmConfig)

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"profile must be one of {PROFILES}, got {self.profile!r}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError("split_ratio must be in (0, 1)")
        if self.rows < 2:
            raise ConfigError("rows must be >= 2")

    def training(self) -> TrainConfig:
        seed = self.seed if self.train_seed is None else self.train_seed
        base = TrainConfig.paper_scale(seed) if self.profile == "paper" else TrainConfig(seed=seed)
        overrides = {k: getattr(self, k) for k in ("steps", "batch_size", "lr", "nll_beta")
                     if getattr(self, k) is not None}
        return replace(base, beta=self.beta, **overrides)

    def to_dict(self):
        d = asdict(self)
        d["arm"] = self.arm.to_dict()
        return d

    def data_dict(self):
        """The subset of the config that determines the trace and the split."""
        return {"seed": self.seed, "rows": self.rows, "split_ratio": self.split_ratio,
                "arm": self.arm.to_dict()}

    def data_hash(self):
        return config_hash(self.data_dict())

    def hash(self):
        d = self.to_dict()
        d.pop("out_dir")
        return config_hash(d)


_SCALARS = {f.name for f in fields(RunConfig)} - {"arm"}


def load_config(path=None, overrides=None):
    """Build a :class:`RunConfig` from an optional TOML file and flag overrides.

    Top-level keys map to RunConfig fields; an ``[arm]`` table maps to
    :class:`ArmConfig` fields.  ``overrides`` values of ``None`` are ignored.
    """
    data = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(path)
        with open(path, "rb") as fh:
            try:
                data = tomli.load(fh)
            except tomli.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
    arm_data = data.pop("arm", {})
    unknown = set(data) - _SCALARS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None and k in _SCALARS})
    try:
        arm = ArmConfig.from_dict({**ArmConfig().to_dict(), **arm_data})
    except TypeError as exc:
        raise ConfigError(f"bad [arm] table: {exc}") from None
    return RunConfig(arm=arm, **data)
