"""Forecast evaluation over dataset splits.

Metrics are computed in normalized observation space (the space the model is
trained in), with max_val for SSIM/PSNR taken from the evaluated split's
truth frames. Augmentation is never applied here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import EpisodeDataset
from .dynamics import DynTrainConfig, DynamicsWeights, _forecast_batch, episode_latents
from .encoder import EncoderStack
from .errors import ContractViolation
from .metrics import MetricReport, energy_spectrum, mse, psnr, ssim


@dataclass
class PredictionDump:
    windows: list[tuple[int, int]]
    predictions: np.ndarray  # (W, T, N, d), normalized space
    targets: np.ndarray  # (W, T, N, d)


def _eval_windows(ds: EpisodeDataset, cfg: DynTrainConfig, split: str, stride: int):
    spans = []
    needed = cfg.t0 + cfg.horizon
    for e_idx, ep in enumerate(ds.episodes):
        if ep.split != split:
            continue
        for start in range(0, ep.t_total - needed + 1, stride):
            spans.append((e_idx, start))
    return spans


def evaluate_split(
    ds: EpisodeDataset,
    encoder: EncoderStack,
    weights: DynamicsWeights,
    cfg: DynTrainConfig,
    split: str,
    param_transform: str = "log10",
    eval_stride: int = 0,
    batch_size: int = 8,
    with_spectra: bool = True,
) -> tuple[MetricReport, PredictionDump]:
    stride = eval_stride if eval_stride > 0 else cfg.horizon
    windows = _eval_windows(ds, cfg, split, stride)
    if not windows:
        raise ContractViolation(f"dataset has no '{split}' windows to evaluate")
    if ds.stats is None:
        ds.compute_normalization()

    episode_ids = sorted({e for e, _ in windows})
    latents = {e: episode_latents(ds, encoder, e, param_transform) for e in episode_ids}

    preds, targets = [], []
    for lo in range(0, len(windows), batch_size):
        batch = windows[lo : lo + batch_size]
        y_hat, y = _forecast_batch(latents, ds, batch, weights, cfg)
        preds.append(np.swapaxes(y_hat.data, 0, 1))  # (B, T, N, d)
        targets.append(np.swapaxes(y.data, 0, 1))
    predictions = np.concatenate(preds)
    truth = np.concatenate(targets)

    per_step = [mse(truth[:, t], predictions[:, t]) for t in range(cfg.horizon)]
    aggregate = mse(truth, predictions)

    h, w = ds.grid.height, ds.grid.width
    max_val = float(np.max(np.abs(truth)))
    max_val = max(max_val, 1e-12)
    ssim_vals, psnr_vals = [], []
    for wi in range(truth.shape[0]):
        for t in range(cfg.horizon):
            for c in range(ds.n_channels):
                t_img = truth[wi, t, :, c].reshape(h, w)
                p_img = predictions[wi, t, :, c].reshape(h, w)
                ssim_vals.append(ssim(t_img, p_img, max_val))
                psnr_vals.append(psnr(t_img, p_img, max_val))
    finite_psnr = [v for v in psnr_vals if np.isfinite(v)]
    psnr_value = float(np.mean(finite_psnr)) if finite_psnr else float("inf")

    spectrum_truth = spectrum_pred = None
    if with_spectra:
        acc_t = acc_p = None
        for wi in range(truth.shape[0]):
            ks, e_t = energy_spectrum(truth[wi, -1, :, 0].reshape(h, w))
            _, e_p = energy_spectrum(predictions[wi, -1, :, 0].reshape(h, w))
            acc_t = e_t if acc_t is None else acc_t + e_t
            acc_p = e_p if acc_p is None else acc_p + e_p
        spectrum_truth = (ks, acc_t / truth.shape[0])
        spectrum_pred = (ks, acc_p / truth.shape[0])

    report = MetricReport(
        per_step_mse=per_step,
        mse=aggregate,
        ssim=float(np.mean(ssim_vals)),
        psnr=psnr_value,
        max_val=max_val,
        spectrum_truth=spectrum_truth,
        spectrum_pred=spectrum_pred,
        extras={"windows": len(windows), "split": split},
    )
    dump = PredictionDump(windows=windows, predictions=predictions, targets=truth)
    return report, dump
