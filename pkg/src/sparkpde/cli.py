"""Command-line orchestration.

Commands: gen-data, pretrain, train, eval, inspect-codebook, sweep-k.
Common flags: --config PATH, --seed U64, --out DIR, --threads N.
Exit codes: 0 success, 2 configuration/usage error, 3 numeric failure,
4 checkpoint/dataset incompatibility. SPARK_LOG={error|info|debug} controls
logging. Every command is reproducible from (config, seed): re-runs produce
byte-identical dataset and checkpoint payloads (manifest timestamps aside).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import datetime
import logging
import os
import sys
import zlib
from pathlib import Path

import numpy as np

from . import __version__
from .augment import AugmentConfig, CurriculumConfig
from .checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from .config import (
    ExperimentConfig,
    describe_config,
    load_config,
    resolved_curriculum,
)
from .datagen import (
    SPLIT_IN,
    SPLIT_OUT,
    EpisodeDataset,
    load_dataset,
    make_ood_split,
    save_dataset,
    simulate_navier_stokes,
    simulate_reaction_diffusion,
)
from .dynamics import DynTrainConfig, train_dynamics
from .errors import (
    ConfigError,
    ContractViolation,
    FormatError,
    IncompatibilityError,
    NumericError,
)
from .evaluation import evaluate_split
from .grids import GridGraph
from .rng import derive_seed
from .serialization import (
    KIND_DYNAMICS,
    KIND_PRETRAIN,
    check_config_compatibility,
    check_dataset_compatibility,
    checkpoint_config,
    dataset_meta,
    dynamics_tensors,
    pretrained_tensors,
    rebuild_dynamics,
    rebuild_pretrained,
)
from .state_dictionary import PretrainConfig, codebook_perplexity, pretrain

log = logging.getLogger("sparkpde")

K_SWEEP_GRID = (1, 3, 5, 7, 9, 11)


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("SPARK_LOG", "error").lower(), logging.ERROR
    )
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(message)s")


def _fmt(value: float) -> str:
    return repr(float(value))


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _load_dataset(path: str) -> EpisodeDataset:
    if not path:
        raise ConfigError("--dataset is required")
    if not Path(path).exists():
        raise ConfigError(f"dataset not found: {path}")
    return load_dataset(path)


def _grid_from_config(cfg: ExperimentConfig) -> GridGraph:
    g = cfg.dataset.grid
    return GridGraph(
        g.height, g.width,
        connectivity=g.connectivity, periodic=g.periodic, normalization=g.normalization,
    )


def _attach_grid(ds: EpisodeDataset, grid: GridGraph) -> None:
    if (grid.height, grid.width) != (ds.grid.height, ds.grid.width):
        raise IncompatibilityError(
            f"grid {grid.height}x{grid.width} does not match dataset "
            f"{ds.grid.height}x{ds.grid.width}"
        )
    ds.grid = grid


def _out_dir(args, cfg: ExperimentConfig | None = None) -> Path:
    out = args.out or (cfg.out_dir if cfg else None)
    if not out:
        raise ConfigError("--out is required")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# -- gen-data ----------------------------------------------------------------------


def _simulate_episode(cfg: ExperimentConfig, grid: GridGraph, delta, split, seed):
    ds_cfg = cfg.dataset
    steps = (ds_cfg.t_total - 1) * ds_cfg.record_every
    if ds_cfg.generator == "navier_stokes":
        ep = simulate_navier_stokes(
            grid,
            nu=delta[0],
            ic_seed=seed,
            steps=steps,
            dt=ds_cfg.dt,
            forcing_amplitude=ds_cfg.forcing_amplitude,
            record_every=ds_cfg.record_every,
            ic_modes=ds_cfg.ic_modes,
            ic_amplitude=ds_cfg.ic_amplitude,
        )
    else:
        d_u = delta[0]
        d_v = delta[1] if len(delta) > 1 else delta[0]
        ep = simulate_reaction_diffusion(
            grid,
            d_u=d_u,
            d_v=d_v,
            feed=ds_cfg.feed,
            kill=ds_cfg.kill,
            ic_seed=seed,
            steps=steps,
            dt=ds_cfg.dt,
            record_every=ds_cfg.record_every,
            reaction_strength=ds_cfg.reaction_strength,
            ic_modes=ds_cfg.ic_modes,
        )
        ep.delta = np.array([d_u, d_v])
    ep.split = split
    return ep


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    ds_cfg = cfg.dataset
    grid = _grid_from_config(cfg)
    ood_rule = (
        {"out_values": ds_cfg.ood.out_values}
        if ds_cfg.ood.mode == "explicit"
        else {"threshold": ds_cfg.ood.threshold, "direction": ds_cfg.ood.direction}
    )
    in_params, out_params = make_ood_split(ds_cfg.params, ood_rule)

    jobs = []
    for split, params in ((SPLIT_IN, in_params), (SPLIT_OUT, out_params)):
        for delta in params:
            for rep in range(ds_cfg.episodes_per_param):
                stream = f"datagen/{delta!r}/{rep}"
                jobs.append((delta, split, derive_seed(cfg.seed, stream)))

    episodes = [None] * len(jobs)
    workers = max(1, args.threads)
    if workers == 1:
        for i, (delta, split, seed) in enumerate(jobs):
            episodes[i] = _simulate_episode(cfg, grid, delta, split, seed)
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(_simulate_episode, cfg, grid, delta, split, seed): i
                for i, (delta, split, seed) in enumerate(jobs)
            }
            for fut in concurrent.futures.as_completed(futures):
                episodes[futures[fut]] = fut.result()

    channel_names = (
        ["vorticity"] if ds_cfg.generator == "navier_stokes" else ["u", "v"]
    )
    ds = EpisodeDataset(grid=grid, channel_names=channel_names, episodes=episodes)
    ds.compute_normalization()

    out = _out_dir(args, cfg)
    data_path = out / "dataset.spds"
    save_dataset(ds, str(data_path))

    n_in = len(ds.split_episodes(SPLIT_IN))
    n_out = len(ds.split_episodes(SPLIT_OUT))
    crc = zlib.crc32(data_path.read_bytes()) & 0xFFFFFFFF
    manifest = [
        f"generator: {ds_cfg.generator}",
        f"grid: {grid.height}x{grid.width}",
        f"dt: {ds_cfg.dt!r}  record_every: {ds_cfg.record_every}  frames: {ds_cfg.t_total}",
        f"episodes: {len(episodes)} (in-domain {n_in}, out-domain {n_out})",
        f"in-domain parameters ({len(in_params)}): {[list(p) for p in in_params]}",
        f"out-domain parameters ({len(out_params)}): {[list(p) for p in out_params]}",
        f"root seed: {cfg.seed}",
        f"dataset crc32: {crc:#010x}",
        f"generated_at: {datetime.datetime.now().isoformat()}",
    ]
    (out / "manifest.txt").write_text("\n".join(manifest) + "\n", encoding="utf-8")
    print(f"wrote {data_path} ({len(episodes)} episodes, {n_in} in / {n_out} out)")
    return 0


# -- pretrain ----------------------------------------------------------------------


def _pretrain_config(cfg: ExperimentConfig) -> PretrainConfig:
    p = cfg.pretrain
    return PretrainConfig(
        epochs=p.epochs,
        batch_size=p.batch_size,
        lr=p.lr,
        lr_decay=p.lr_decay,
        mu=p.mu,
        gamma=p.gamma,
        codebook_size=p.codebook_size,
        d_latent=p.d_latent,
        hidden=p.hidden,
        attention_hidden=p.attention_hidden,
        gnn_layers=p.gnn_layers,
        k_max=p.k_max,
        activation=p.activation,
        param_transform=p.param_transform,
        reseed_dead_codes=p.reseed_dead_codes,
        seed=cfg.seed,
    )


def cmd_pretrain(args) -> int:
    cfg = _load_config(args)
    ds = _load_dataset(args.dataset)
    _attach_grid(ds, _grid_from_config(cfg))
    out = _out_dir(args, cfg)
    ckpt_path = out / "pretrain.ckpt"
    try:
        result = pretrain(ds, _pretrain_config(cfg))
    except NumericError as exc:
        (out / "pretrain.failed").write_text(str(exc) + "\n", encoding="utf-8")
        raise
    snapshot = checkpoint_config(cfg, KIND_PRETRAIN, dataset_meta(ds))
    save_checkpoint(
        ModelCheckpoint(
            config=snapshot,
            tensors=pretrained_tensors(result.encoder, result.codebook),
        ),
        str(ckpt_path),
    )
    _write_csv(
        out / "pretrain_loss.csv",
        ["epoch", "loss", "perplexity"],
        [
            [i, loss, perp]
            for i, (loss, perp) in enumerate(
                zip(result.loss_history, result.perplexity_history)
            )
        ],
    )
    print(
        f"wrote {ckpt_path} (final loss {result.loss_history[-1]:.6f}, "
        f"perplexity {result.perplexity_history[-1]:.1f}, "
        f"{result.wallclock:.1f}s)"
    )
    return 0


# -- train -------------------------------------------------------------------------


def _augment_config(cfg: ExperimentConfig, args) -> AugmentConfig | None:
    if getattr(args, "no_augment", False):
        return None
    a = cfg.augment
    mode = getattr(args, "aug_mode", None) or a.mode
    k = getattr(args, "aug_k", None) or a.k
    tau = getattr(args, "aug_tau", None)
    if tau is None:
        tau = a.tau
    epochs = cfg.dynamics.epochs
    if getattr(args, "curriculum", None):
        pieces = args.curriculum.split(",")
        if len(pieces) != 3:
            raise ConfigError("--curriculum expects E0,R,pmax")
        start, ramp, pmax = int(pieces[0]), int(pieces[1]), float(pieces[2])
    else:
        start, ramp, pmax = resolved_curriculum(a, epochs)
    return AugmentConfig(
        mode=mode,
        k=k,
        tau=tau,
        curriculum=CurriculumConfig(start_epoch=start, ramp_epochs=ramp, max_ratio=pmax),
        seed=derive_seed(cfg.seed, "augment"),
    )


def _dyn_config(cfg: ExperimentConfig) -> DynTrainConfig:
    d = cfg.dynamics
    return DynTrainConfig(
        t0=d.t0,
        horizon=d.horizon,
        lambda_reg=d.lambda_reg,
        solver=d.solver,
        substeps=d.substeps,
        ode_layers=d.ode_layers,
        k_max=d.k_max,
        decoder_hidden=d.decoder_hidden,
        epochs=d.epochs,
        lr=d.lr,
        lr_decay=d.lr_decay,
        batch_size=d.batch_size,
        val_fraction=d.val_fraction,
        window_stride=d.window_stride,
        activation=d.activation,
        attention_activation=d.attention_activation,
        spectral_adjacency=d.spectral_adjacency,
        layer_output=d.layer_output,
        seed=cfg.seed,
    )


def cmd_train(args) -> int:
    cfg = _load_config(args)
    ds = _load_dataset(args.dataset)
    if not args.checkpoint or not Path(args.checkpoint).exists():
        raise ConfigError(f"pretrain checkpoint not found: {args.checkpoint}")
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.config.get("kind") != KIND_PRETRAIN:
        raise IncompatibilityError("train expects a pretrain checkpoint")
    check_dataset_compatibility(ckpt.config, ds)
    check_config_compatibility(ckpt.config, cfg)
    _, encoder, codebook, grid = rebuild_pretrained(ckpt.config, ckpt.tensors)
    _attach_grid(ds, grid)

    dyn_cfg = _dyn_config(cfg)
    aug = _augment_config(cfg, args)
    result = train_dynamics(
        ds, encoder, codebook, dyn_cfg, aug=aug,
        param_transform=cfg.pretrain.param_transform,
    )

    out = _out_dir(args, cfg)
    meta = dataset_meta(ds)
    meta["d_latent"] = codebook.dim
    meta["augmented"] = aug is not None
    if aug is not None:
        meta["augment"] = {
            "mode": aug.mode, "k": aug.k, "tau": result.tau,
            "start_epoch": aug.curriculum.start_epoch,
            "ramp_epochs": aug.curriculum.ramp_epochs,
            "max_ratio": aug.curriculum.max_ratio,
        }
    snapshot = checkpoint_config(cfg, KIND_DYNAMICS, meta)
    tensors = dynamics_tensors(result.weights)
    frozen = pretrained_tensors(encoder, codebook)
    tensors.update(frozen)
    save_checkpoint(
        ModelCheckpoint(
            config=snapshot, tensors=tensors, frozen_names=sorted(frozen)
        ),
        str(out / "dynamics.ckpt"),
    )
    _write_csv(
        out / "metrics.csv",
        ["epoch", "train_mse", "val_mse", "aug_ratio", "wallclock"],
        [
            [row.epoch, row.train_mse, row.val_mse, row.aug_ratio, row.wallclock]
            for row in result.history
        ],
    )
    print(
        f"wrote {out / 'dynamics.ckpt'} "
        f"(final train {result.history[-1].train_mse:.6f}, "
        f"val {result.history[-1].val_mse:.6f}, aug calls {result.augment_calls})"
    )
    return 0


# -- eval --------------------------------------------------------------------------


def _load_dynamics_checkpoint(path: str):
    if not path or not Path(path).exists():
        raise ConfigError(f"checkpoint not found: {path}")
    ckpt = load_checkpoint(path)
    if ckpt.config.get("kind") != KIND_DYNAMICS:
        raise IncompatibilityError("eval expects a dynamics checkpoint")
    return ckpt


def cmd_eval(args) -> int:
    ckpt = _load_dynamics_checkpoint(args.checkpoint)
    ds = _load_dataset(args.dataset)
    check_dataset_compatibility(ckpt.config, ds)
    cfg, encoder, codebook, grid = rebuild_pretrained(ckpt.config, ckpt.tensors)
    _attach_grid(ds, grid)
    weights = rebuild_dynamics(
        ckpt.config, ckpt.tensors, grid, ds.n_channels, codebook.dim
    )
    split = {"in": SPLIT_IN, "out": SPLIT_OUT}[args.split]
    if not ds.split_episodes(split):
        raise ContractViolation(f"dataset has no '{split}' episodes")
    dyn_cfg = _dyn_config(cfg)
    report, dump = evaluate_split(
        ds, encoder, weights, dyn_cfg, split,
        param_transform=cfg.pretrain.param_transform,
        eval_stride=cfg.dynamics.eval_stride,
    )
    out = _out_dir(args, cfg)
    _write_csv(
        out / f"metrics_{args.split}.csv",
        ["metric", "value"],
        [[name, value] for name, value in report.rows()],
    )
    for tag, spectrum in (("truth", report.spectrum_truth), ("pred", report.spectrum_pred)):
        ks, energy = spectrum
        _write_csv(
            out / f"spectrum_{tag}_{args.split}.csv",
            ["k", "energy"],
            [[int(k), float(e)] for k, e in zip(ks, energy)],
        )
    if args.dump_predictions:
        np.savez(
            out / f"predictions_{args.split}.npz",
            predictions=dump.predictions,
            targets=dump.targets,
            windows=np.array(dump.windows, dtype=np.int64),
        )
    print(
        f"split={args.split} windows={report.extras['windows']} "
        f"mse={report.mse:.6f} ssim={report.ssim:.4f} psnr={report.psnr:.2f}"
    )
    return 0


# -- inspect-codebook -----------------------------------------------------------------


def cmd_inspect_codebook(args) -> int:
    if not args.checkpoint or not Path(args.checkpoint).exists():
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    ckpt = load_checkpoint(args.checkpoint)
    if "codebook.embeddings" not in ckpt.tensors:
        raise IncompatibilityError("checkpoint holds no codebook")
    entries = ckpt.tensors["codebook.embeddings"]
    usage = ckpt.tensors.get(
        "codebook.usage", np.zeros(entries.shape[0], dtype=np.int64)
    )
    m, d = entries.shape
    print(f"codebook: M={m} D={d}")
    if usage.sum() > 0:
        print(f"perplexity: {codebook_perplexity(usage):.3f}")
    else:
        print("perplexity: n/a (no recorded usage)")
    width = 40
    for i in range(m):
        bar = "#" * int(round(width * usage[i] / max(1, usage.max())))
        print(f"  {i:4d} {usage[i]:10d} {bar}")
    if args.csv:
        _write_csv(Path(args.csv), ["entry", "count"], [[i, int(usage[i])] for i in range(m)])
        print(f"wrote {args.csv}")
    return 0


# -- sweep-k ---------------------------------------------------------------------------


def cmd_sweep_k(args) -> int:
    cfg = _load_config(args)
    ds = _load_dataset(args.dataset)
    if not args.checkpoint or not Path(args.checkpoint).exists():
        raise ConfigError(f"pretrain checkpoint not found: {args.checkpoint}")
    ckpt = load_checkpoint(args.checkpoint)
    check_dataset_compatibility(ckpt.config, ds)
    out = _out_dir(args, cfg)
    rows = []
    for k in K_SWEEP_GRID:
        _, encoder, codebook, grid = rebuild_pretrained(ckpt.config, ckpt.tensors)
        _attach_grid(ds, grid)
        dyn_cfg = _dyn_config(cfg)
        epochs = cfg.dynamics.epochs
        start, ramp, pmax = resolved_curriculum(cfg.augment, epochs)
        aug = AugmentConfig(
            mode="interpolate",
            k=k,
            tau=cfg.augment.tau,
            curriculum=CurriculumConfig(
                start_epoch=start, ramp_epochs=ramp, max_ratio=pmax
            ),
            seed=derive_seed(cfg.seed, "augment"),
        )
        result = train_dynamics(
            ds, encoder, codebook, dyn_cfg, aug=aug,
            param_transform=cfg.pretrain.param_transform,
        )
        row = [k, result.history[-1].train_mse, result.history[-1].val_mse]
        for split in (SPLIT_IN, SPLIT_OUT):
            if ds.split_episodes(split):
                report, _ = evaluate_split(
                    ds, encoder, result.weights, dyn_cfg, split,
                    param_transform=cfg.pretrain.param_transform,
                    eval_stride=cfg.dynamics.eval_stride,
                    with_spectra=False,
                )
                row.append(report.mse)
            else:
                row.append(float("nan"))
        rows.append(row)
        print(f"k={k}: train {row[1]:.6f} val {row[2]:.6f} in {row[3]:.6f} out {row[4]:.6f}")
    _write_csv(
        out / "sweep_k.csv",
        ["k", "train_mse", "val_mse", "in_mse", "out_mse"],
        rows,
    )
    print(f"wrote {out / 'sweep_k.csv'}")
    return 0


# -- entry point -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparkpde",
        description=__doc__,
        epilog="configuration keys and defaults:\n" + describe_config(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"sparkpde {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=False, checkpoint=False, config=True):
        if config:
            p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the root seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker threads")
        if dataset:
            p.add_argument("--dataset", help="dataset file (.spds)")
        if checkpoint:
            p.add_argument("--checkpoint", help="checkpoint file (.ckpt)")

    p = sub.add_parser("gen-data", help="generate a synthetic episode dataset")
    common(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("pretrain", help="pretrain encoder and state dictionary")
    common(p, dataset=True)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("train", help="train the dynamics forecaster")
    common(p, dataset=True, checkpoint=True)
    p.add_argument("--no-augment", action="store_true", help="disable augmentation")
    p.add_argument("--aug-mode", choices=["snap", "interpolate"], default=None)
    p.add_argument("--aug-k", type=int, default=None)
    p.add_argument("--aug-tau", type=float, default=None)
    p.add_argument("--curriculum", default=None, metavar="E0,R,PMAX")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a dynamics checkpoint on a split")
    common(p, dataset=True, checkpoint=True, config=False)
    p.add_argument("--split", choices=["in", "out"], required=True)
    p.add_argument("--dump-predictions", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("inspect-codebook", help="print state dictionary statistics")
    common(p, checkpoint=True, config=False)
    p.add_argument("--csv", help="also write per-entry usage CSV here")
    p.set_defaults(fn=cmd_inspect_codebook)

    p = sub.add_parser("sweep-k", help="train/evaluate over the augmentation k grid")
    common(p, dataset=True, checkpoint=True)
    p.set_defaults(fn=cmd_sweep_k)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FormatError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except IncompatibilityError as exc:
        print(f"incompatible inputs: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
