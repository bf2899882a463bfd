"""Experiment configuration: a flat dataclass loaded from nested YAML.

Example file layout (see ``configs/``)::

    plant: two-tank
    model: {kind: narx-nn, na: 3, nb: 3, n1: 8, n2: 6}
    strategy: ideal
    experiment: {N_i: 80, N: 1000, N_test: 2000, N_e: 50}
    acquisition: {delta: 100}
    constraints: {enabled: true, rho: 1.0e12}
    ekf: {P0: 1.0e-2, Q_theta: 1.0e-10, R: 1.0e-2}
    seed: 0
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .acquisition import KERNELS, STRATEGIES
from .errors import ConfigError
from .models import MODEL_KINDS

_SECTIONS = {
    "model": {"kind": "model", "na": "na", "nb": "nb", "n1": "n1", "n2": "n2", "n_x": "n_x",
              "n1x": "n1x", "n2x": "n2x", "n1y": "n1y"},
    "experiment": {"N_i": "N_i", "N": "N", "N_test": "N_test", "L": "L", "N_e": "N_e",
                   "N_b": "N_b", "m": "m", "K_qbc": "K_qbc", "eval_every": "eval_every",
                   "refine": "refine", "qbc_randomized": "qbc_randomized",
                   "l2_theta": "l2_theta", "l2_x0": "l2_x0"},
    "acquisition": {"delta": "delta", "alpha_state": "alpha_state", "kernel": "kernel",
                    "budget": "budget"},
    "constraints": {"enabled": "constraints", "rho": "rho", "penalty": "penalty",
                    "beta_cap": "beta_cap", "alpha_quantile": "alpha_quantile"},
    "ekf": {"P0": "P0", "P0_x": "P0_x", "P0_theta": "P0_theta", "Q_theta": "Q_theta",
            "Q_x": "Q_x", "R": "R"},
}


@dataclass
class ExperimentConfig:
    plant: str = "two-tank"
    plant_file: str | None = None
    model: str = "narx-nn"
    na: int = 3
    nb: int = 3
    n1: int = 8
    n2: int = 6
    n_x: int = 2
    n1x: int = 8
    n2x: int = 4
    n1y: int = 5
    strategy: str = "ideal"
    N_i: int = 80
    N: int = 1000
    N_test: int | None = None
    L: int = 1
    N_e: int = 50
    N_b: int = 1000
    m: int = 10
    K_qbc: int = 5
    qbc_randomized: bool = False
    eval_every: int = 1
    refine: bool = True
    l2_theta: float = 1e-4
    l2_x0: float = 1e-4
    delta: float = 100.0
    alpha_state: float = 1.0
    kernel: str = "inverse-square"
    budget: int = 100_000
    constraints: bool = False
    rho: float = 1e12
    penalty: str = "plain"
    beta_cap: float = 1.0 / 3.0
    alpha_quantile: float = 0.9
    P0: float = 1e-2
    P0_x: float = 4e-2
    P0_theta: float = 2e-1
    Q_theta: float = 1e-10
    Q_x: float = 1e-8
    R: float = 1e-2
    seed: int = 0
    runs: int = 30
    test_seed: int = 7919
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.model!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.kernel not in KERNELS:
            raise ConfigError(f"unknown kernel {self.kernel!r}")
        if self.penalty not in ("plain", "shrunk"):
            raise ConfigError("penalty must be 'plain' or 'shrunk'")
        if not 0 < self.N_i <= self.N:
            raise ConfigError(f"need 0 < N_i <= N (got N_i={self.N_i}, N={self.N})")
        if self.N_i < max(self.na, self.nb) + 2:
            raise ConfigError("N_i too small for the lag orders")
        for name in ("L", "m", "N_e", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.N_b < 0 or self.delta < 0 or self.rho < 0 or self.alpha_state <= 0:
            raise ConfigError("N_b, delta and rho must be >= 0, alpha_state > 0")
        if self.strategy == "qbc" and self.K_qbc < 2:
            raise ConfigError("QBC needs K_qbc >= 2")

    @property
    def state_space(self) -> bool:
        return self.model in ("rnn-ss", "linear-ss")

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        flat = {}
        for sec, keys in _SECTIONS.items():
            sub = d.pop(sec, None)
            if sub is None:
                continue
            if sec == "model" and isinstance(sub, str):
                flat["model"] = sub
                continue
            if not isinstance(sub, dict):
                raise ConfigError(f"section {sec!r} must be a mapping")
            for k, v in sub.items():
                if k not in keys:
                    raise ConfigError(f"unknown key {sec}.{k}")
                flat[keys[k]] = v
        names = {f.name: f for f in fields(cls)}
        for k, v in d.items():
            if k not in names:
                raise ConfigError(f"unknown key {k!r}")
            flat[k] = v
        return cls(**{k: _coerce(names[k], v) for k, v in flat.items()})


def _coerce(f, v):
    # YAML 1.1 reads "1e-2" as a string
    t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
    try:
        if v is None:
            return None
        if t.startswith("float"):
            return float(v)
        if t.startswith("int"):
            fv = float(v)
            if fv != int(fv):
                raise ValueError
            return int(fv)
        if t == "bool":
            if not isinstance(v, bool):
                raise ValueError
            return v
    except (TypeError, ValueError):
        raise ConfigError(f"bad value {v!r} for {f.name} ({t})") from None
    return v


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        d = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    pf = d.get("plant_file")
    if pf and not Path(pf).is_absolute():
        d["plant_file"] = str(path.parent / pf)
    return ExperimentConfig.from_dict(d)
