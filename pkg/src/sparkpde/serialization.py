"""Mapping between live models and checkpoint tensor tables."""

from __future__ import annotations

import numpy as np

from .config import ExperimentConfig, config_from_dict, config_to_dict
from .dynamics import DynamicsWeights, init_dynamics
from .encoder import EncoderStack, init_encoder_stack
from .errors import IncompatibilityError
from .grids import GridGraph
from .rng import substream
from .state_dictionary import Codebook, new_codebook

KIND_PRETRAIN = "pretrain"
KIND_DYNAMICS = "dynamics"


def checkpoint_config(cfg: ExperimentConfig, kind: str, meta: dict) -> dict:
    return {"kind": kind, "experiment": config_to_dict(cfg), "meta": meta}


def dataset_meta(ds) -> dict:
    return {
        "grid": ds.grid.describe(),
        "channel_names": list(ds.channel_names),
        "d_obs": ds.n_channels,
        "d_delta": int(ds.episodes[0].delta.size) if ds.episodes else 1,
    }


def _assign(params: dict, tensors: dict[str, np.ndarray], context: str) -> None:
    for name, tensor in params.items():
        if name not in tensors:
            raise IncompatibilityError(f"{context}: checkpoint is missing tensor {name!r}")
        arr = tensors[name]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise IncompatibilityError(
                f"{context}: tensor {name!r} has shape {tuple(arr.shape)}, "
                f"model expects {tuple(tensor.shape)}"
            )
        tensor.data = np.ascontiguousarray(arr, dtype=np.float64)


def pretrained_tensors(encoder: EncoderStack, codebook: Codebook) -> dict[str, np.ndarray]:
    out = {name: t.data.copy() for name, t in encoder.params().items()}
    out["codebook.embeddings"] = codebook.embeddings.data.copy()
    out["codebook.usage"] = codebook.usage.copy()
    return out


def build_encoder_from_config(cfg: ExperimentConfig, grid: GridGraph, meta: dict) -> EncoderStack:
    pre = cfg.pretrain
    return init_encoder_stack(
        substream(0, "rebuild/encoder"),
        d_obs=int(meta["d_obs"]),
        d_delta=int(meta["d_delta"]),
        d_latent=pre.d_latent,
        grid=grid,
        hidden=pre.hidden,
        attention_hidden=pre.attention_hidden,
        gnn_layers=pre.gnn_layers,
        k_max=pre.k_max,
        activation=pre.activation,
    )


def rebuild_pretrained(snapshot: dict, tensors: dict[str, np.ndarray]) -> tuple[
    ExperimentConfig, EncoderStack, Codebook, GridGraph
]:
    cfg = config_from_dict(snapshot["experiment"])
    meta = snapshot["meta"]
    grid = GridGraph(**meta["grid"])
    encoder = build_encoder_from_config(cfg, grid, meta)
    _assign(encoder.params(), tensors, "encoder")
    if "codebook.embeddings" not in tensors:
        raise IncompatibilityError("checkpoint has no codebook")
    codebook = new_codebook(tensors["codebook.embeddings"])
    if "codebook.usage" in tensors:
        codebook.usage = tensors["codebook.usage"].astype(np.int64).copy()
    return cfg, encoder, codebook, grid


def dynamics_tensors(weights: DynamicsWeights) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in weights.params().items()}


def rebuild_dynamics(
    snapshot: dict, tensors: dict[str, np.ndarray], grid: GridGraph, d_obs: int, d_latent: int
) -> DynamicsWeights:
    cfg = config_from_dict(snapshot["experiment"])
    dyn = cfg.dynamics
    weights = init_dynamics(
        substream(0, "rebuild/dynamics"),
        d_latent=d_latent,
        d_obs=d_obs,
        grid=grid,
        n_layers=dyn.ode_layers,
        k_max=dyn.k_max,
        decoder_hidden=dyn.decoder_hidden,
        activation=dyn.activation,
        attention_activation=dyn.attention_activation,
        spectral_adjacency=dyn.spectral_adjacency,
        layer_output=dyn.layer_output,
    )
    _assign(weights.params(), tensors, "dynamics")
    return weights


def check_dataset_compatibility(snapshot: dict, ds) -> None:
    """Refuse checkpoint/dataset pairs whose shapes cannot line up."""
    meta = snapshot["meta"]
    problems = []
    grid_desc = ds.grid.describe()
    for key in ("height", "width"):
        if meta["grid"][key] != grid_desc[key]:
            problems.append(
                f"grid.{key}: checkpoint {meta['grid'][key]} vs dataset {grid_desc[key]}"
            )
    if meta["d_obs"] != ds.n_channels:
        problems.append(f"channels: checkpoint {meta['d_obs']} vs dataset {ds.n_channels}")
    d_delta = int(ds.episodes[0].delta.size) if ds.episodes else 1
    if meta["d_delta"] != d_delta:
        problems.append(f"parameter dim: checkpoint {meta['d_delta']} vs dataset {d_delta}")
    if problems:
        raise IncompatibilityError("; ".join(problems))


def check_config_compatibility(snapshot: dict, cfg: ExperimentConfig) -> None:
    """Refuse configs that disagree with the pretrained architecture."""
    stored = config_from_dict(snapshot["experiment"])
    problems = []
    if stored.pretrain.d_latent != cfg.pretrain.d_latent:
        problems.append(
            f"d_latent: checkpoint {stored.pretrain.d_latent} vs config {cfg.pretrain.d_latent}"
        )
    if stored.pretrain.codebook_size != cfg.pretrain.codebook_size:
        problems.append(
            f"codebook_size: checkpoint {stored.pretrain.codebook_size} "
            f"vs config {cfg.pretrain.codebook_size}"
        )
    if problems:
        raise IncompatibilityError("; ".join(problems))
