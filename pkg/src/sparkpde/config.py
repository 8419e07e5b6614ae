"""Experiment configuration: strict schema, documented defaults, YAML loading.

Config files are YAML with four sections (dataset, pretrain, dynamics,
augment) plus top-level seed/out_dir. Parsing is strict: unknown keys are
rejected with their dotted path, wrong types are rejected, and every field
has the default listed in ``describe_config``.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from typing import Any, Optional

import yaml

from .errors import ConfigError

GENERATORS = ("navier_stokes", "reaction_diffusion")


@dataclass
class GridSection:
    height: int = 32
    width: int = 32
    connectivity: int = 4
    periodic: bool = True
    normalization: str = "row"


@dataclass
class OodSection:
    mode: str = "explicit"  # explicit | threshold
    out_values: list = field(default_factory=list)
    threshold: float = 0.0
    direction: str = "below"


@dataclass
class DatasetSection:
    generator: str = "navier_stokes"
    grid: GridSection = field(default_factory=GridSection)
    params: list = field(default_factory=lambda: [1e-2, 3e-3, 1e-3, 3e-4])
    ood: OodSection = field(default_factory=OodSection)
    episodes_per_param: int = 4
    t_total: int = 24
    dt: float = 2e-3
    record_every: int = 25
    ic_modes: int = 4
    ic_amplitude: float = 1.0
    forcing_amplitude: float = 0.0
    feed: float = 0.04
    kill: float = 0.06
    reaction_strength: float = 1.0


@dataclass
class PretrainSection:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 2e-3
    lr_decay: str = "cosine"
    mu: float = 0.25
    gamma: float = 1.0
    codebook_size: int = 64
    d_latent: int = 32
    hidden: int = 64
    attention_hidden: int = 32
    gnn_layers: int = 2
    k_max: int = 8
    activation: str = "gelu"
    param_transform: str = "log10"
    reseed_dead_codes: bool = False


@dataclass
class DynamicsSection:
    t0: int = 10
    horizon: int = 10
    lambda_reg: float = 1e-6
    solver: str = "rk4"
    substeps: int = 4
    ode_layers: int = 2
    k_max: int = 8
    decoder_hidden: int = 64
    epochs: int = 20
    lr: float = 3e-3
    lr_decay: str = "cosine"
    batch_size: int = 8
    val_fraction: float = 0.15
    window_stride: int = 1
    activation: str = "gelu"
    attention_activation: str = "identity"
    spectral_adjacency: str = "spectral"
    layer_output: str = "sum"
    eval_stride: int = 0  # 0: use the horizon


@dataclass
class AugmentSection:
    mode: str = "interpolate"
    k: int = 3
    tau: Optional[float] = None  # None: calibrated from training latents
    start_epoch: int = -1  # -1: 20% of dynamics epochs
    ramp_epochs: int = -1  # -1: 30% of dynamics epochs
    max_ratio: float = 0.5


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/experiment"
    dataset: DatasetSection = field(default_factory=DatasetSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    dynamics: DynamicsSection = field(default_factory=DynamicsSection)
    augment: AugmentSection = field(default_factory=AugmentSection)


FIELD_DOCS = {
    "seed": "root seed; all randomness derives from it through named substreams",
    "out_dir": "default output directory (overridden by --out)",
    "dataset.generator": "trajectory generator: navier_stokes | reaction_diffusion",
    "dataset.grid.height": "grid rows H",
    "dataset.grid.width": "grid columns W",
    "dataset.grid.connectivity": "graph stencil: 4 or 8 neighbors",
    "dataset.grid.periodic": "periodic wrapping (required by the spectral solvers)",
    "dataset.grid.normalization": "adjacency normalization: row | sym | none",
    "dataset.params": "physical parameter values (scalars, or [D_u, D_v] pairs)",
    "dataset.ood.mode": "out-of-domain rule: explicit | threshold",
    "dataset.ood.out_values": "parameter values held out as out-of-domain",
    "dataset.ood.threshold": "threshold for the threshold rule",
    "dataset.ood.direction": "out-of-domain side of the threshold: below | above",
    "dataset.episodes_per_param": "episodes generated per parameter value",
    "dataset.t_total": "recorded frames per episode",
    "dataset.dt": "solver time step",
    "dataset.record_every": "solver steps between recorded frames",
    "dataset.ic_modes": "initial-condition band limit (max |k|)",
    "dataset.ic_amplitude": "initial-condition standard deviation",
    "dataset.forcing_amplitude": "sinusoidal forcing amplitude (0 = unforced)",
    "dataset.feed": "reaction feed rate (reaction_diffusion)",
    "dataset.kill": "reaction kill rate (reaction_diffusion)",
    "dataset.reaction_strength": "scales reaction terms (0 = pure diffusion)",
    "pretrain.epochs": "pretraining epochs",
    "pretrain.batch_size": "frames per pretraining batch",
    "pretrain.lr": "Adam learning rate",
    "pretrain.lr_decay": "learning-rate schedule: none | cosine",
    "pretrain.mu": "commitment loss weight",
    "pretrain.gamma": "codebook loss weight",
    "pretrain.codebook_size": "state dictionary entries M",
    "pretrain.d_latent": "latent width D",
    "pretrain.hidden": "GNN/decoder hidden width",
    "pretrain.attention_hidden": "channel-attention MLP hidden width",
    "pretrain.gnn_layers": "GNN encoder depth L",
    "pretrain.k_max": "retained Fourier modes per axis in channel attention",
    "pretrain.activation": "model activation: gelu | tanh | identity",
    "pretrain.param_transform": "parameter embedding: log10 | identity",
    "pretrain.reseed_dead_codes": "reinitialize unused codebook entries each epoch",
    "dynamics.t0": "history length fed to the forecaster",
    "dynamics.horizon": "forecast steps",
    "dynamics.lambda_reg": "weight-decay coefficient on dynamics parameters",
    "dynamics.solver": "ODE solver: rk4 | euler",
    "dynamics.substeps": "solver steps per unit time",
    "dynamics.ode_layers": "Fourier graph ODE layers L",
    "dynamics.k_max": "retained Fourier modes per axis in the ODE",
    "dynamics.decoder_hidden": "forecast decoder hidden width",
    "dynamics.epochs": "training epochs",
    "dynamics.lr": "Adam learning rate",
    "dynamics.lr_decay": "learning-rate schedule: none | cosine",
    "dynamics.batch_size": "windows per batch",
    "dynamics.val_fraction": "fraction of windows held out for validation",
    "dynamics.window_stride": "stride between training windows",
    "dynamics.activation": "ODE/decoder activation: gelu | tanh | identity",
    "dynamics.attention_activation": "outer activation in history pooling: identity | tanh",
    "dynamics.spectral_adjacency": "adjacency placement: spectral (A*F(H)) | field (F(A*H))",
    "dynamics.layer_output": "derivative: sum of layer outputs | last layer only",
    "dynamics.eval_stride": "window stride at evaluation (0: horizon)",
    "augment.mode": "latent augmentation: snap | interpolate",
    "augment.k": "top-k codes blended by interpolation",
    "augment.tau": "interpolation temperature (null: calibrated from data)",
    "augment.start_epoch": "curriculum start epoch (-1: 20% of epochs)",
    "augment.ramp_epochs": "curriculum ramp length (-1: 30% of epochs)",
    "augment.max_ratio": "final fraction of augmented samples",
}

def _coerce(value: Any, target_type: type, path: str) -> Any:
    if target_type is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if target_type is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if target_type is bool and isinstance(value, bool):
        return value
    if target_type is str and isinstance(value, str):
        return value
    if target_type is list and isinstance(value, list):
        return value
    raise ConfigError(f"{path}: expected {target_type.__name__}, got {type(value).__name__}")


def _build_section(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        first = sorted(unknown)[0]
        where = f"{path}.{first}" if path else first
        raise ConfigError(f"{where}: unknown key")
    kwargs = {}
    for name in known:
        if name not in data:
            continue
        sub_path = f"{path}.{name}" if path else name
        value = data[name]
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build_section(hint, value, sub_path)
        elif typing.get_origin(hint) is typing.Union and type(None) in typing.get_args(hint):
            inner = next(t for t in typing.get_args(hint) if t is not type(None))
            kwargs[name] = None if value is None else _coerce(value, inner, sub_path)
        else:
            kwargs[name] = _coerce(value, hint, sub_path)
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    cfg = _build_section(ExperimentConfig, data, "")
    validate_config(cfg)
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}")
    return config_from_dict(data)


def validate_config(cfg: ExperimentConfig) -> None:
    ds = cfg.dataset
    if ds.generator not in GENERATORS:
        raise ConfigError(f"dataset.generator must be one of {GENERATORS}")
    if not ds.params:
        raise ConfigError("dataset.params must be non-empty")
    if ds.episodes_per_param < 1:
        raise ConfigError("dataset.episodes_per_param must be positive")
    if ds.t_total < cfg.dynamics.t0 + cfg.dynamics.horizon:
        raise ConfigError(
            f"dataset.t_total={ds.t_total} too short for t0+horizon="
            f"{cfg.dynamics.t0 + cfg.dynamics.horizon}"
        )
    if ds.ood.mode not in ("explicit", "threshold"):
        raise ConfigError("dataset.ood.mode must be explicit or threshold")
    if cfg.augment.mode not in ("snap", "interpolate"):
        raise ConfigError("augment.mode must be snap or interpolate")
    if cfg.augment.k < 1:
        raise ConfigError("augment.k must be at least 1")
    if not (0.0 <= cfg.augment.max_ratio <= 1.0):
        raise ConfigError("augment.max_ratio must lie in [0, 1]")
    if cfg.dynamics.solver not in ("rk4", "euler"):
        raise ConfigError("dynamics.solver must be rk4 or euler")


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def describe_config() -> str:
    """Every config key with its default, for --help."""
    lines = []

    def walk(cls, prefix: str, instance):
        for f in dataclasses.fields(cls):
            sub = f"{prefix}.{f.name}" if prefix else f.name
            value = getattr(instance, f.name)
            if dataclasses.is_dataclass(value):
                walk(type(value), sub, value)
            else:
                doc = FIELD_DOCS.get(sub, "")
                lines.append(f"  {sub} = {value!r}\n      {doc}")

    walk(ExperimentConfig, "", ExperimentConfig())
    return "\n".join(lines)


def resolved_curriculum(aug: AugmentSection, epochs: int) -> tuple[int, int, float]:
    """Materialize the percent-of-epochs curriculum defaults."""
    start = aug.start_epoch if aug.start_epoch >= 0 else int(round(0.2 * epochs))
    ramp = aug.ramp_epochs if aug.ramp_epochs >= 0 else max(1, int(round(0.3 * epochs)))
    return start, ramp, aug.max_ratio
