"""Experiment configuration: one TOML file with sections per pipeline stage.

Sections and keys mirror the dataclasses below; every field has a default,
so a config file only lists what it overrides. Numeric constraints are
checked at load time and violations raise ConfigError (CLI exit code 2).
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dspp import ObservationScheme
from .inference import ModelConfig, TrainConfig
from .queueing import Erlang, Exponential, ServiceDist
from .sde import CirPaperDiffusion, CirDrift, DriftSpec, FixedSqrtDiffusion, TimeGrid


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TruthConfig:
    kind: str = "cir"  # "cir" | "ode"
    kappa: float = 0.3
    beta: float = 80.0
    eta: float = 1.0
    alpha: float | None = None  # set -> diffusion eta * beta**alpha * sqrt(z)
    z0: float = 5.0

    def drift_spec(self) -> DriftSpec:
        drift = CirDrift(self.kappa, self.beta)
        if self.kind == "ode":
            return DriftSpec(drift, FixedSqrtDiffusion(0.0))
        if self.kind != "cir":
            raise ConfigError(f"truth.kind must be 'cir' or 'ode', got {self.kind!r}")
        if self.alpha is not None:
            return DriftSpec(drift, CirPaperDiffusion(self.eta, self.beta, self.alpha))
        return DriftSpec(drift, FixedSqrtDiffusion(self.eta))


@dataclass(frozen=True)
class GridConfig:
    horizon: float = 4.0
    steps: int = 60

    def grid(self) -> TimeGrid:
        return TimeGrid(self.horizon, self.steps)


@dataclass(frozen=True)
class SchemeConfig:
    epochs: tuple[float, ...] = (2.0, 4.0)

    def scheme(self) -> ObservationScheme:
        return ObservationScheme(self.epochs)


@dataclass(frozen=True)
class NetConfig:
    hidden_layers: int = 3
    hidden_width: int = 10
    diffusion: str = "fixed"
    eta: float = 1.0
    z0: float = 5.0
    z_scale: float = 30.0
    z_loc: float = 40.0
    t_scale: float = 6.0
    t_loc: float = 2.0
    drift_scale: float = 25.0
    sigma_scale: float = 1.0
    sigma_shift: float = 0.0
    count_scale: float = 100.0
    context: str = "terminal"

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            hidden_layers=self.hidden_layers,
            hidden_width=self.hidden_width,
            diffusion=self.diffusion,
            eta=self.eta,
            z0=self.z0,
            z_scale=self.z_scale,
            t_scale=self.t_scale,
            z_loc=self.z_loc,
            t_loc=self.t_loc,
            drift_scale=self.drift_scale,
            sigma_scale=self.sigma_scale,
            sigma_shift=self.sigma_shift,
            count_scale=self.count_scale,
            context_mode=self.context,
        )


@dataclass(frozen=True)
class DatasetConfig:
    n: int = 200
    seed: int = 101


@dataclass(frozen=True)
class TrainBlock:
    inner_paths: int = 5
    minibatch: int = 10
    epochs: int = 35
    lr_theta: float = 0.01
    lr_beta: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 202
    init_seed: int = 7

    def train_config(self, grid: TimeGrid) -> TrainConfig:
        return TrainConfig(
            n_inner=self.inner_paths,
            minibatch=self.minibatch,
            epochs=self.epochs,
            lr_theta=self.lr_theta,
            lr_beta=self.lr_beta,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
            grid=grid,
            seed=self.seed,
        )


@dataclass(frozen=True)
class BaselineConfig:
    pieces: int = 2


@dataclass(frozen=True)
class RunthroughConfig:
    service: str = "exponential"
    mu: float = 2.0
    erlang_shape: int = 3
    erlang_rate: float = 6.0
    replications: int = 500
    seed: int = 808
    probes: tuple[float, ...] | None = None  # default (T/2, T)
    dlm_mode: str = "self_generated"

    def service_dist(self) -> ServiceDist:
        if self.service == "exponential":
            return Exponential(self.mu)
        if self.service == "erlang":
            return Erlang(self.erlang_shape, self.erlang_rate)
        raise ConfigError(f"runthrough.service must be 'exponential' or 'erlang', got {self.service!r}")


@dataclass(frozen=True)
class ReportConfig:
    posterior_paths: int = 30
    seed: int = 404
    test_n: int = 200
    test_seed: int = 303
    eta_sweep: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    eta_replications: int = 4000
    d_sweep: tuple[int, ...] = (2, 50)
    count_replications: int = 500


@dataclass(frozen=True)
class ExperimentConfig:
    truth: TruthConfig = TruthConfig()
    grid: GridConfig = GridConfig()
    scheme: SchemeConfig = SchemeConfig()
    model: NetConfig = NetConfig()
    dataset: DatasetConfig = DatasetConfig()
    train: TrainBlock = TrainBlock()
    baseline: BaselineConfig = BaselineConfig()
    runthrough: RunthroughConfig = RunthroughConfig()
    report: ReportConfig = ReportConfig()
    output_dir: str = "out"

    def validate(self) -> "ExperimentConfig":
        try:
            self.truth.drift_spec()
            self.grid.grid()
            scheme = self.scheme.scheme()
            self.model.model_config()
            self.runthrough.service_dist()
            self.train.train_config(self.grid.grid())
            scheme.interval_index(self.grid.grid())
        except (ValueError, TypeError) as e:
            raise ConfigError(str(e)) from e
        if self.dataset.n < 1:
            raise ConfigError(f"dataset.n must be >= 1, got {self.dataset.n}")
        if self.train.minibatch > self.dataset.n:
            raise ConfigError(
                f"train.minibatch ({self.train.minibatch}) exceeds dataset.n ({self.dataset.n})"
            )
        if self.baseline.pieces < 1:
            raise ConfigError(f"baseline.pieces must be >= 1, got {self.baseline.pieces}")
        if self.runthrough.replications < 2:
            raise ConfigError("runthrough.replications must be >= 2")
        return self


def _build(cls, data: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown key {where}.{key}")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"in section [{where}]: {e}") from e


_SECTIONS = {
    "truth": ("truth", TruthConfig),
    "grid": ("grid", GridConfig),
    "scheme": ("scheme", SchemeConfig),
    "model": ("model", NetConfig),
    "dataset": ("dataset", DatasetConfig),
    "train": ("train", TrainBlock),
    "baseline": ("baseline", BaselineConfig),
    "runthrough": ("runthrough", RunthroughConfig),
    "report": ("report", ReportConfig),
}


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML: {e}") from e
    kwargs = {}
    for section, content in raw.items():
        if section == "output":
            if not isinstance(content, dict) or set(content) - {"dir"}:
                raise ConfigError("[output] supports only the 'dir' key")
            kwargs["output_dir"] = content.get("dir", "out")
            continue
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        attr, cls = _SECTIONS[section]
        if not isinstance(content, dict):
            raise ConfigError(f"section [{section}] must be a table")
        kwargs[attr] = _build(cls, content, section)
    return ExperimentConfig(**kwargs).validate()


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_config(f.read())
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e


def config_summary(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)
