"""Latent forecaster: temporal attention, Fourier-enhanced graph ODE, decoder.

A history of frozen-encoder latents is pooled into an initial state by a
node-wise temporal attention (scores against the tanh-transformed mean
state), evolved by a stack of ODE layers combining a spectral branch
(adjacency applied to Fourier coefficients, per-mode channel mixing over
retained modes) with a spatial graph branch, and decoded to observations by
a separate two-layer MLP. Integration is classical fixed-step RK4 (or Euler)
unrolled on the tape, so gradients are exact for the discretized system.
"""

from __future__ import annotations

import logging
import time
import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .augment import (
    AugmentConfig,
    augment_latents,
    augmentation_decisions,
    calibrate_tau,
    curriculum_ratio,
)
from .autodiff import AdamState, Tape, Tensor, adam_step, backward
from .datagen import EpisodeDataset
from .encoder import EncoderStack, MlpDecoderWeights, apply_activation, init_mlp_decoder
from .errors import ContractViolation, NumericError
from .grids import GridGraph, retained_mode_indices
from .rng import Xoshiro256StarStar, substream
from .state_dictionary import Codebook, scheduled_lr, transform_params

log = logging.getLogger("sparkpde")

SOLVERS = ("rk4", "euler")


@dataclass
class OdeLayer:
    wf_real: Tensor  # (K, D, D) spectral channel mixing per retained mode
    wf_imag: Tensor
    w: Tensor  # (D, D) spatial mixing
    b: Tensor  # (D,)


@dataclass
class DynamicsWeights:
    w_alpha: Tensor  # (D, D) temporal attention
    layers: list[OdeLayer]
    decoder: MlpDecoderWeights
    mode_idx: np.ndarray
    k_max: int
    activation: str = "gelu"
    attention_activation: str = "identity"
    spectral_adjacency: str = "spectral"  # literal A*F(H); "field" uses F(A*H)
    layer_output: str = "sum"  # "sum" of all layer outputs, or "last"

    def params(self) -> dict[str, Tensor]:
        out = {self.w_alpha.name: self.w_alpha}
        for layer in self.layers:
            for t in (layer.wf_real, layer.wf_imag, layer.w, layer.b):
                out[t.name] = t
        out.update(self.decoder.params())
        return out


def init_dynamics(
    gen: Xoshiro256StarStar,
    d_latent: int,
    d_obs: int,
    grid: GridGraph,
    n_layers: int = 2,
    k_max: int = 8,
    decoder_hidden: int = 64,
    activation: str = "gelu",
    attention_activation: str = "identity",
    spectral_adjacency: str = "spectral",
    layer_output: str = "sum",
) -> DynamicsWeights:
    if n_layers < 1:
        raise ContractViolation("dynamics needs at least one ODE layer")
    if spectral_adjacency not in ("spectral", "field"):
        raise ContractViolation("spectral_adjacency must be 'spectral' or 'field'")
    if layer_output not in ("sum", "last"):
        raise ContractViolation("layer_output must be 'sum' or 'last'")
    mode_idx = retained_mode_indices(grid.height, grid.width, k_max)
    k = len(mode_idx)
    spectral_std = 0.1 / np.sqrt(d_latent)
    spatial_std = 0.5 / np.sqrt(d_latent)
    layers = []
    for i in range(n_layers):
        layers.append(
            OdeLayer(
                wf_real=ad.parameter(
                    gen.normal_array((k, d_latent, d_latent)) * spectral_std,
                    f"dynamics.{i}.wf_real",
                ),
                wf_imag=ad.parameter(
                    gen.normal_array((k, d_latent, d_latent)) * spectral_std,
                    f"dynamics.{i}.wf_imag",
                ),
                w=ad.parameter(
                    gen.normal_array((d_latent, d_latent)) * spatial_std,
                    f"dynamics.{i}.w",
                ),
                b=ad.parameter(np.zeros(d_latent), f"dynamics.{i}.b"),
            )
        )
    decoder = init_mlp_decoder(
        gen, d_latent, decoder_hidden, d_obs, activation, prefix="dynamics.decoder"
    )
    return DynamicsWeights(
        w_alpha=ad.parameter(
            gen.normal_array((d_latent, d_latent)) * (1.0 / np.sqrt(d_latent)),
            "dynamics.w_alpha",
        ),
        layers=layers,
        decoder=decoder,
        mode_idx=mode_idx,
        k_max=k_max,
        activation=activation,
        attention_activation=attention_activation,
        spectral_adjacency=spectral_adjacency,
        layer_output=layer_output,
    )


def encode_history(h_seq: Tensor | np.ndarray, w: DynamicsWeights) -> Tensor:
    """Attention-pooled initial state from a latent history.

    h_seq: (T0, N, D) or (B, T0, N, D). Per node, scores are
    alpha_t = <h_t, tanh(mean_t(h) @ W_alpha)>; the pooled state is the
    time-mean of act(alpha_t * h_t).
    """
    h_seq = h_seq if isinstance(h_seq, Tensor) else Tensor(h_seq)
    batched = h_seq.ndim == 4
    hs = h_seq if batched else h_seq.reshape(1, *h_seq.shape)
    if hs.ndim != 4:
        raise ContractViolation("encode_history expects (T0, N, D) or (B, T0, N, D)")
    b, t0, n, d = hs.shape
    mean_state = ad.tensor_mean(hs, axis=1)  # (B, N, D)
    target = ad.tanh(ad.matmul(mean_state, w.w_alpha))  # (B, N, D)
    scores = ad.tensor_sum(hs * target.reshape(b, 1, n, d), axis=-1, keepdims=True)
    pooled = ad.tensor_mean(
        apply_activation(scores * hs, w.attention_activation), axis=1
    )
    if not np.all(np.isfinite(pooled.data)):
        raise NumericError("non-finite values in encoded history")
    return pooled if batched else pooled.reshape(n, d)


def ode_rhs(h: Tensor | np.ndarray, grid: GridGraph, w: DynamicsWeights) -> Tensor:
    """dH/dt per the layered spectral + spatial graph update.

    Per layer: Y = act(IFFT(trunc(A.F(H)) W_F) + A H W + b), feeding Y to the
    next layer; the returned derivative is the sum of all layer outputs (or
    the last, per ``layer_output``).
    """
    h = h if isinstance(h, Tensor) else Tensor(h)
    batched = h.ndim == 3
    h3 = h if batched else h.reshape(1, *h.shape)
    b, n, d = h3.shape
    hg, wg = grid.height, grid.width
    if n != grid.n_nodes:
        raise ContractViolation("node count does not match grid")

    def to_images(x: Tensor) -> Tensor:
        return ad.transpose(x.reshape(b, hg, wg, d), (0, 3, 1, 2))

    def to_nodes(x: Tensor) -> Tensor:
        return ad.transpose(x, (0, 2, 3, 1)).reshape(b, n, d)

    def apply_adjacency(x: Tensor) -> Tensor:
        flat = ad.transpose(x, (1, 0, 2)).reshape(n, b * d)
        out = ad.sparse_matmul(grid.adjacency, flat, grid.adjacency_t)
        return ad.transpose(out.reshape(n, b, d), (1, 0, 2))

    state = h3
    total: Tensor | None = None
    adj_rows, adj_rows_t = grid.adjacency_row_slice(w.mode_idx)
    for layer in w.layers:
        if w.spectral_adjacency == "spectral":
            spectral = to_nodes(
                ad.spectral_channel_mix(
                    to_images(state),
                    layer.wf_real,
                    layer.wf_imag,
                    w.mode_idx,
                    hg,
                    wg,
                    adjacency_rows=adj_rows,
                    adjacency_rows_t=adj_rows_t,
                )
            )
        else:
            spectral = to_nodes(
                ad.spectral_channel_mix(
                    to_images(apply_adjacency(state)),
                    layer.wf_real,
                    layer.wf_imag,
                    w.mode_idx,
                    hg,
                    wg,
                )
            )
        spatial = ad.matmul(apply_adjacency(state), layer.w)
        y = apply_activation(spectral + spatial + layer.b, w.activation)
        total = y if total is None else total + y
        state = y
    out = state if w.layer_output == "last" else total
    return out if batched else out.reshape(n, d)


def integrate(
    h0: Tensor | np.ndarray,
    rhs: Callable[[Tensor], Tensor],
    times: list[float],
    solver: str = "rk4",
    substeps: int = 4,
) -> Tensor:
    """Fixed-step integration through the requested times, fully on the tape.

    ``substeps`` counts steps per unit time; each interval gets at least one
    step. Returns the trajectory stacked along a new leading time axis.
    """
    if solver not in SOLVERS:
        raise ContractViolation(f"solver must be one of {SOLVERS}")
    if substeps < 1:
        raise ContractViolation("substeps must be at least 1")
    prev_t = 0.0
    for t in times:
        if t <= prev_t:
            raise ContractViolation("times must be strictly increasing and positive")
        prev_t = t

    state = h0 if isinstance(h0, Tensor) else Tensor(h0)
    outputs = []
    prev_t = 0.0
    for t in times:
        span = t - prev_t
        n_steps = max(1, int(round(substeps * span)))
        dt = span / n_steps
        for _ in range(n_steps):
            if solver == "euler":
                state = state + dt * rhs(state)
            else:
                k1 = rhs(state)
                k2 = rhs(state + (0.5 * dt) * k1)
                k3 = rhs(state + (0.5 * dt) * k2)
                k4 = rhs(state + dt * k3)
                state = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(state.data)):
            finite = np.abs(state.data[np.isfinite(state.data)])
            raise NumericError(
                f"integration diverged at t={t:g} "
                f"(max finite |H| = {np.max(finite, initial=0.0):g})"
            )
        outputs.append(state.reshape(1, *state.shape))
        prev_t = t
    return ad.concat(outputs, axis=0)


def decode(h_t: Tensor | np.ndarray, w: DynamicsWeights) -> Tensor:
    """Observation-space decoding with the dynamics head (shared contract
    with the reconstruction decoder, separate weights)."""
    from .encoder import reconstruct

    return reconstruct(h_t, w.decoder)


# -- training -------------------------------------------------------------------


@dataclass
class DynTrainConfig:
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
    seed: int = 0

    def __post_init__(self):
        if self.t0 < 1 or self.horizon < 1:
            raise ContractViolation("t0 and horizon must be at least 1")
        if self.lambda_reg < 0:
            raise ContractViolation("lambda_reg must be non-negative")


@dataclass
class EpochRow:
    epoch: int
    train_mse: float
    val_mse: float
    aug_ratio: float
    wallclock: float


@dataclass
class DynTrainResult:
    weights: DynamicsWeights
    history: list[EpochRow]
    augment_calls: int
    tau: float | None
    frozen_checksum: int


def frozen_checksum(encoder: EncoderStack, codebook: Codebook) -> int:
    """CRC32 over all frozen tensor payloads, in name order."""
    crc = 0
    tensors = {**encoder.params(), **codebook.params()}
    for name in sorted(tensors):
        crc = zlib.crc32(tensors[name].data.tobytes(), crc)
    return crc & 0xFFFFFFFF


def episode_latents(
    ds: EpisodeDataset,
    encoder: EncoderStack,
    episode_idx: int,
    param_transform: str,
) -> np.ndarray:
    """Frozen-encoder latents for every frame of one episode."""
    ep = ds.episodes[episode_idx]
    x = ds.normalize(ep.x)
    delta = np.tile(transform_params(ep.delta, param_transform), (x.shape[0], 1))
    return encoder.encode(x, delta, ds.grid).data


def dynamics_loss(
    y_hat: Tensor, y: Tensor, weights: DynamicsWeights, lambda_reg: float
) -> tuple[Tensor, float]:
    """Forecast loss: per-node-step squared L2 error plus weight decay."""
    err = ad.tensor_mean(ad.tensor_sum(ad.square(y_hat - y), axis=-1))
    mse_value = err.item()
    if lambda_reg > 0:
        reg = None
        for p in weights.params().values():
            term = ad.tensor_sum(ad.square(p))
            reg = term if reg is None else reg + term
        err = err + lambda_reg * reg
    return err, mse_value


def _windows(ds: EpisodeDataset, cfg: DynTrainConfig, split: str) -> list[tuple[int, int]]:
    spans = []
    needed = cfg.t0 + cfg.horizon
    for e_idx, ep in enumerate(ds.episodes):
        if ep.split != split:
            continue
        if ep.t_total < needed:
            raise ContractViolation(
                f"episode {e_idx} has {ep.t_total} frames; needs >= {needed}"
            )
        for start in range(0, ep.t_total - needed + 1, cfg.window_stride):
            spans.append((e_idx, start))
    return spans


def _forecast_batch(
    latents: dict[int, np.ndarray],
    ds: EpisodeDataset,
    batch: list[tuple[int, int]],
    weights: DynamicsWeights,
    cfg: DynTrainConfig,
    augmented: np.ndarray | None = None,
    aug_fn=None,
) -> tuple[Tensor, Tensor]:
    """Assemble one batch and run the forecaster; returns (y_hat, y)."""
    t0, horizon = cfg.t0, cfg.horizon
    hist = np.stack([latents[e][s : s + t0] for e, s in batch])
    future = np.stack(
        [ds.normalize(ds.episodes[e].x[s + t0 : s + t0 + horizon]) for e, s in batch]
    )
    if augmented is not None and augmented.any():
        hist = hist.copy()
        for i in np.flatnonzero(augmented):
            hist[i] = aug_fn(hist[i])
    h0 = encode_history(Tensor(hist), weights)
    grid = ds.grid
    trajectory = integrate(
        h0,
        lambda s: ode_rhs(s, grid, weights),
        times=[float(j) for j in range(1, horizon + 1)],
        solver=cfg.solver,
        substeps=cfg.substeps,
    )  # (T, B, N, D)
    y_hat = decode(trajectory, weights)
    y = Tensor(np.swapaxes(future, 0, 1).copy())  # (T, B, N, d)
    return y_hat, y


def train_dynamics(
    ds: EpisodeDataset,
    encoder: EncoderStack,
    codebook: Codebook,
    cfg: DynTrainConfig,
    aug: AugmentConfig | None = None,
    param_transform: str = "log10",
) -> DynTrainResult:
    """Train the forecaster on in-domain windows with optional augmentation.

    The encoder and codebook stay frozen (verified by checksum). Augmentation
    replaces whole history windows with their codebook-guided versions at the
    curriculum ratio; it never touches validation windows.
    """
    start_time = time.perf_counter()
    checksum_before = frozen_checksum(encoder, codebook)
    if ds.stats is None:
        ds.compute_normalization()

    d_latent = codebook.dim
    init_gen = substream(cfg.seed, "dynamics/init")
    weights = init_dynamics(
        init_gen,
        d_latent=d_latent,
        d_obs=ds.n_channels,
        grid=ds.grid,
        n_layers=cfg.ode_layers,
        k_max=cfg.k_max,
        decoder_hidden=cfg.decoder_hidden,
        activation=cfg.activation,
        attention_activation=cfg.attention_activation,
        spectral_adjacency=cfg.spectral_adjacency,
        layer_output=cfg.layer_output,
    )

    in_episodes = [i for i, ep in enumerate(ds.episodes) if ep.split == "in"]
    if not in_episodes:
        raise ContractViolation("dataset has no in-domain episodes")
    latents = {
        i: episode_latents(ds, encoder, i, param_transform) for i in in_episodes
    }

    windows = _windows(ds, cfg, "in")
    order_gen = substream(cfg.seed, "dynamics/shuffle")
    order_gen.shuffle(windows)
    n_val = int(round(len(windows) * cfg.val_fraction))
    val_windows = windows[:n_val]
    train_windows = windows[n_val:]
    if not train_windows:
        raise ContractViolation("no training windows left after validation split")

    tau = None
    aug_fn = None
    aug_calls = 0
    if aug is not None:
        all_latents = np.concatenate([latents[i].reshape(-1, d_latent) for i in in_episodes])
        tau = aug.tau if aug.tau is not None else calibrate_tau(all_latents, codebook)

        def aug_fn(window, _tau=tau):
            nonlocal aug_calls
            aug_calls += 1
            return augment_latents(window, codebook, aug, _tau)

    params = weights.params()
    state = AdamState()
    decision_gen = substream(aug.seed if aug is not None else cfg.seed, "curriculum")
    history: list[EpochRow] = []

    for epoch in range(cfg.epochs):
        ratio = curriculum_ratio(epoch, aug) if aug is not None else 0.0
        lr = scheduled_lr(cfg.lr, epoch, cfg.epochs, cfg.lr_decay)
        order_gen.shuffle(train_windows)
        total, count = 0.0, 0
        for lo in range(0, len(train_windows), cfg.batch_size):
            batch = train_windows[lo : lo + cfg.batch_size]
            decisions = augmentation_decisions(decision_gen, len(batch), ratio)
            with Tape() as tape:
                y_hat, y = _forecast_batch(
                    latents, ds, batch, weights, cfg,
                    augmented=decisions if aug is not None else None,
                    aug_fn=aug_fn,
                )
                loss, mse_value = dynamics_loss(y_hat, y, weights, cfg.lambda_reg)
            if not np.isfinite(mse_value):
                raise NumericError(f"dynamics training diverged at epoch {epoch}")
            grads = backward(loss, tape, params=params.values())
            adam_step(params, grads, state, lr=lr)
            total += mse_value * len(batch)
            count += len(batch)
        train_mse = total / count

        val_mse = float("nan")
        if val_windows:
            v_total, v_count = 0.0, 0
            for lo in range(0, len(val_windows), cfg.batch_size):
                batch = val_windows[lo : lo + cfg.batch_size]
                y_hat, y = _forecast_batch(latents, ds, batch, weights, cfg)
                diff = y_hat.data - y.data
                v_total += float(np.mean(np.sum(diff * diff, axis=-1))) * len(batch)
                v_count += len(batch)
            val_mse = v_total / v_count

        history.append(
            EpochRow(
                epoch=epoch,
                train_mse=train_mse,
                val_mse=val_mse,
                aug_ratio=ratio,
                wallclock=time.perf_counter() - start_time,
            )
        )
        log.debug(
            "dynamics epoch %d train %.6f val %.6f aug %.2f",
            epoch, train_mse, val_mse, ratio,
        )

    if frozen_checksum(encoder, codebook) != checksum_before:
        raise ContractViolation("frozen encoder/codebook mutated during training")

    return DynTrainResult(
        weights=weights,
        history=history,
        augment_calls=aug_calls,
        tau=tau,
        frozen_checksum=checksum_before,
    )
