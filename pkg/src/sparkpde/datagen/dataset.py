"""Episode containers, in/out-of-domain splits, and the binary dataset format.

File layout (all integers little-endian):

    magic               8 bytes  b"SPARKDS1"
    format version      u32
    grid height, width  u32, u32
    channel count d     u32
    episode count       u32
    channel names       per channel: u32 byte length + utf-8 bytes
    normalization stats per channel: f64 mean, f64 std
    episodes            per episode:
                          u32 delta length, f64 x delta
                          u8 split tag (0 = in-domain, 1 = out-domain)
                          u64 generator seed
                          u32 T_total
                          f64 x (T_total * N * d), row-major
    crc32               u32 over every preceding byte

Round trips are bit-exact; magic, version, truncation, and checksum failures
raise distinct errors without returning partial data.
"""

from __future__ import annotations

import struct
import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation, FormatError
from ..grids import GridGraph

MAGIC = b"SPARKDS1"
FORMAT_VERSION = 1
SPLIT_IN = "in"
SPLIT_OUT = "out"


@dataclass
class Episode:
    """One trajectory under one physical-parameter setting."""

    delta: np.ndarray  # (P,) physical parameters
    x: np.ndarray  # (T_total, N, d)
    seed: int
    split: str = SPLIT_IN
    generator_id: str = ""

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=np.float64).reshape(-1)
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim != 3:
            raise ContractViolation("episode trajectory must be (T, N, d)")
        if not np.all(np.isfinite(self.x)):
            raise ContractViolation("episode trajectory contains non-finite values")
        if self.split not in (SPLIT_IN, SPLIT_OUT):
            raise ContractViolation(f"unknown split tag {self.split!r}")

    @property
    def t_total(self) -> int:
        return self.x.shape[0]


@dataclass
class EpisodeDataset:
    grid: GridGraph
    channel_names: list[str]
    episodes: list[Episode] = field(default_factory=list)
    stats: tuple[np.ndarray, np.ndarray] | None = None  # per-channel (means, stds)

    @property
    def n_channels(self) -> int:
        return len(self.channel_names)

    def split_episodes(self, split: str) -> list[Episode]:
        return [e for e in self.episodes if e.split == split]

    def compute_normalization(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-channel mean/std over in-domain episodes only (no OOD leakage)."""
        in_domain = self.split_episodes(SPLIT_IN)
        if not in_domain:
            raise ContractViolation("cannot normalize: no in-domain episodes")
        stacked = np.concatenate([e.x.reshape(-1, self.n_channels) for e in in_domain])
        means = stacked.mean(axis=0)
        stds = stacked.std(axis=0)
        stds = np.where(stds < 1e-12, 1.0, stds)
        self.stats = (means, stds)
        return self.stats

    def normalize(self, x: np.ndarray) -> np.ndarray:
        if self.stats is None:
            self.compute_normalization()
        means, stds = self.stats
        return (x - means) / stds

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        if self.stats is None:
            raise ContractViolation("dataset has no normalization statistics")
        means, stds = self.stats
        return x * stds + means


def make_ood_split(
    param_grid: list, ood_rule: dict
) -> tuple[list, list]:
    """Partition parameter values into (in-domain, out-domain) lists.

    ``ood_rule`` is either ``{"out_values": [...]}`` (explicit membership) or
    ``{"threshold": x, "direction": "below"|"above"}`` comparing the first
    parameter component. The partition is exhaustive and disjoint.
    """
    if not param_grid:
        raise ContractViolation("parameter grid is empty")

    def as_vec(p) -> tuple:
        return tuple(np.atleast_1d(np.asarray(p, dtype=np.float64)).tolist())

    params = [as_vec(p) for p in param_grid]

    if "out_values" in ood_rule:
        out_set = {as_vec(p) for p in ood_rule["out_values"]}
        in_domain = [p for p in params if p not in out_set]
        out_domain = [p for p in params if p in out_set]
    elif "threshold" in ood_rule:
        threshold = float(ood_rule["threshold"])
        direction = ood_rule.get("direction", "below")
        if direction not in ("below", "above"):
            raise ContractViolation("ood_rule direction must be 'below' or 'above'")
        if direction == "below":
            out_domain = [p for p in params if p[0] < threshold]
        else:
            out_domain = [p for p in params if p[0] > threshold]
        in_domain = [p for p in params if p not in out_domain]
    else:
        raise ContractViolation("ood_rule requires 'out_values' or 'threshold'")

    if not in_domain:
        raise ContractViolation("OOD rule leaves the in-domain set empty")
    if not out_domain:
        warnings.warn("OOD split has an empty out-domain set", stacklevel=2)
    return in_domain, out_domain


# -- binary container ---------------------------------------------------------


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.blob):
            raise FormatError("dataset file is truncated")
        out = self.blob[self.offset : self.offset + n]
        self.offset += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64s(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").copy()

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def save_dataset(ds: EpisodeDataset, path: str) -> None:
    if ds.stats is None:
        ds.compute_normalization()
    means, stds = ds.stats
    parts = [
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        struct.pack("<II", ds.grid.height, ds.grid.width),
        struct.pack("<I", ds.n_channels),
        struct.pack("<I", len(ds.episodes)),
    ]
    for name in ds.channel_names:
        parts.append(_pack_str(name))
    for c in range(ds.n_channels):
        parts.append(struct.pack("<dd", means[c], stds[c]))
    n = ds.grid.n_nodes
    for ep in ds.episodes:
        if ep.x.shape[1] != n or ep.x.shape[2] != ds.n_channels:
            raise ContractViolation("episode shape does not match dataset grid/channels")
        parts.append(struct.pack("<I", ep.delta.size))
        parts.append(ep.delta.astype("<f8").tobytes())
        parts.append(struct.pack("<B", 0 if ep.split == SPLIT_IN else 1))
        parts.append(struct.pack("<Q", ep.seed & (2**64 - 1)))
        parts.append(struct.pack("<I", ep.t_total))
        parts.append(np.ascontiguousarray(ep.x, dtype="<f8").tobytes())
    body = b"".join(parts)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", crc))


def load_dataset(path: str) -> EpisodeDataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 4:
        raise FormatError("dataset file is truncated")
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError("bad magic bytes: not a dataset file")
    body, crc_bytes = blob[:-4], blob[-4:]
    expected = struct.unpack("<I", crc_bytes)[0]
    actual = zlib.crc32(body) & 0xFFFFFFFF
    if actual != expected:
        raise FormatError(
            f"dataset checksum mismatch (stored {expected:#010x}, computed {actual:#010x})"
        )
    reader = _Reader(body)
    reader.take(len(MAGIC))
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported dataset format version {version}")
    height = reader.u32()
    width = reader.u32()
    channels = reader.u32()
    episode_count = reader.u32()
    names = [reader.string() for _ in range(channels)]
    means = np.empty(channels)
    stds = np.empty(channels)
    for c in range(channels):
        means[c], stds[c] = struct.unpack("<dd", reader.take(16))
    grid = GridGraph(height, width)
    episodes = []
    for _ in range(episode_count):
        delta = reader.f64s(reader.u32())
        split = SPLIT_IN if reader.u8() == 0 else SPLIT_OUT
        seed = reader.u64()
        t_total = reader.u32()
        payload = reader.f64s(t_total * grid.n_nodes * channels)
        episodes.append(
            Episode(
                delta=delta,
                x=payload.reshape(t_total, grid.n_nodes, channels),
                seed=seed,
                split=split,
            )
        )
    if reader.offset != len(body):
        raise FormatError("trailing bytes after final episode record")
    return EpisodeDataset(grid=grid, channel_names=names, episodes=episodes, stats=(means, stds))
