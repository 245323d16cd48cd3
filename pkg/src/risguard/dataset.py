"""Labelled 9-plane CSI samples: construction, splitting, sharding and storage.

Planes 0-2 hold the per-sample normalised real part, imaginary part and
magnitude of the serving effective channel (antennas x RBs). Planes 3-8 are
constant metadata planes: transmit-power feature, UE x, UE y, serving-AP x,
serving-AP y and the UE to serving-RIS distance (or the RIS x coordinate).
"""
from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .channel import PathLossModel, gen_link_channels, gen_ris_ap, effective_channel, path_loss_db
from .fileio import atomic_write, sha256_bytes
from .scenario import ScenarioConfig
from .topology import Association, Topology

N_PLANES = 9
N_META = 6

META_DTYPE = np.dtype([
    ("ue", "<u4"), ("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
    ("p_tx_dbm", "<f8"), ("p_feature_dbm", "<f8"),
    ("ap", "<u4"), ("ris", "<u4"), ("phase", "<u4"),
])

SPLITS = {"all": 0, "train": 1, "test": 2}


class DatasetError(ValueError):
    pass


class DatasetFormatError(DatasetError):
    pass


class DatasetIntegrityError(DatasetError):
    pass


@dataclass(frozen=True)
class NormStats:
    """Metadata-plane standardisation, fitted on a training split only."""
    mean: np.ndarray  # (6,)
    std: np.ndarray  # (6,)

    def equals(self, other: "NormStats | None") -> bool:
        return other is not None and np.array_equal(self.mean, other.mean) and np.array_equal(
            self.std, other.std)


@dataclass(frozen=True)
class CsiSample:
    tensor: np.ndarray  # (H, W, 9)
    label: int
    meta: np.void


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray  # (n, H, W, 9) float32
    y: np.ndarray  # (n,) uint8
    meta: np.ndarray  # (n,) META_DTYPE
    split: str = "all"
    owner: int = -1
    norm: NormStats | None = field(default=None)

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, i: int) -> CsiSample:
        return CsiSample(self.x[i], int(self.y[i]), self.meta[i])

    @property
    def ids(self) -> np.ndarray:
        return self.meta["ue"]

    def subset(self, idx, **changes) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return replace(self, x=self.x[idx], y=self.y[idx], meta=self.meta[idx], **changes)

    def class_counts(self) -> tuple[int, int]:
        return int(np.sum(self.y == 0)), int(np.sum(self.y == 1))

    def equals(self, other: "Dataset") -> bool:
        same_norm = (self.norm is None and other.norm is None) or (
            self.norm is not None and self.norm.equals(other.norm))
        return (self.split == other.split and self.owner == other.owner and same_norm
                and np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)
                and self.meta.tobytes() == other.meta.tobytes())

    def content_hash(self) -> str:
        return sha256_bytes(to_bytes(self))


def build_csi_image(h_eff: np.ndarray) -> np.ndarray:
    """(H, W) complex -> (H, W, 3) real planes scaled by the sample's max-abs value."""
    planes = np.stack([h_eff.real, h_eff.imag, np.abs(h_eff)], axis=-1)
    s = np.max(np.abs(planes))
    if s == 0:
        return np.zeros_like(planes)
    return planes / s


def metadata_values(cfg: ScenarioConfig, p_feature_dbm: float, ue_pos, ap_pos, ris_pos) -> np.ndarray:
    width, height = cfg.area_m
    p_lo, p_hi = cfg.p_lu_dbm, cfg.eve_power_range_dbm[1]
    ris_term = (np.linalg.norm(np.asarray(ue_pos) - ris_pos) / math.hypot(width, height)
                if cfg.ris_plane == "distance" else ris_pos[0] / width)
    return np.array([
        (p_feature_dbm - p_lo) / (p_hi - p_lo),
        ue_pos[0] / width, ue_pos[1] / height,
        ap_pos[0] / width, ap_pos[1] / height,
        ris_term,
    ])


def build_metadata_planes(cfg: ScenarioConfig, p_feature_dbm: float, ue_pos, ap_pos, ris_pos,
                          shape: tuple[int, int]) -> np.ndarray:
    """Six constant planes of shape ``shape`` + (6,)."""
    values = metadata_values(cfg, p_feature_dbm, ue_pos, ap_pos, ris_pos)
    return np.broadcast_to(values, (*shape, N_META)).copy()


def estimated_power_dbm(cfg: ScenarioConfig, h_eff: np.ndarray, p_tx_dbm: float,
                        distance_m: float) -> float:
    """Transmit power as the AP infers it: per-antenna RSS plus LoS path loss from geolocation."""
    gain = float(np.mean(np.sum(np.abs(h_eff) ** 2, axis=0))) / h_eff.shape[0]
    pl = path_loss_db(PathLossModel.from_config(cfg), max(distance_m, 1.0), cfg.carrier_ghz, True)
    return p_tx_dbm + 10.0 * math.log10(max(gain, 1e-300)) + pl


def generate_dataset(cfg: ScenarioConfig, topo: Topology, assoc: Association, ris_cfgs,
                     phase_id: int = 0) -> Dataset:
    """One sample per UE from its serving AP's effective channel, in UE order."""
    n, H, W = topo.n_ue, cfg.ap_antennas, cfg.n_rb
    x = np.empty((n, H, W, N_PLANES), dtype=np.float32)
    meta = np.zeros(n, dtype=META_DTYPE)
    # group by (AP, RIS) so each RIS-AP tensor is generated once
    pairs = sorted({(int(assoc.serving_ap[u]), int(assoc.serving_ris[u])) for u in range(n)})
    for a, r in pairs:
        g = gen_ris_ap(cfg, topo, r, a, phase_id)[0]
        for u in np.flatnonzero((assoc.serving_ap == a) & (assoc.serving_ris == r)):
            link = gen_link_channels(cfg, topo, int(u), a, r, phase_id, g_ris_ap=g)
            h = effective_channel(link, ris_cfgs[r])
            p_tx = float(topo.ue_power_dbm[u])
            if cfg.power_feature == "estimated":
                d = float(np.linalg.norm(topo.ue_pos[u] - topo.ap_pos[a]))
                p_feat = estimated_power_dbm(cfg, h, p_tx, d)
            else:
                p_feat = p_tx
            x[u, :, :, :3] = build_csi_image(h)
            x[u, :, :, 3:] = build_metadata_planes(cfg, p_feat, topo.ue_pos[u], topo.ap_pos[a],
                                                   topo.ris_pos[r], (H, W))
            meta[u] = (u, *topo.ue_pos[u], p_tx, p_feat, a, r, phase_id)
    return Dataset(x, topo.ue_is_eve.astype(np.uint8), meta)


def synthetic_dataset(n: int, rng: np.random.Generator, eve_fraction: float = 0.3,
                      shape: tuple[int, int] = (32, 60), area_m=(120.0, 60.0),
                      margin: float = 0.2) -> Dataset:
    """Linearly separable toy set: the power plane alone decides the label.

    Legitimate samples have power feature in [0, 0.5 - margin], eavesdroppers
    in [0.5 + margin, 1]; everything else is noise.
    """
    n_eve = math.floor(eve_fraction * n + 0.5)
    y = np.zeros(n, dtype=np.uint8)
    y[rng.permutation(n)[:n_eve]] = 1
    csi = rng.uniform(-1, 1, size=(n, *shape, 3))
    meta_vals = rng.uniform(0, 1, size=(n, N_META))
    meta_vals[:, 0] = np.where(y == 1, rng.uniform(0.5 + margin, 1.0, n),
                               rng.uniform(0.0, 0.5 - margin, n))
    x = np.concatenate([csi, np.broadcast_to(meta_vals[:, None, None, :], (n, *shape, N_META))],
                       axis=-1).astype(np.float32)
    meta = np.zeros(n, dtype=META_DTYPE)
    meta["ue"] = np.arange(n)
    meta["x"], meta["y"] = meta_vals[:, 1] * area_m[0], meta_vals[:, 2] * area_m[1]
    meta["p_feature_dbm"] = meta_vals[:, 0]
    return Dataset(x, y, meta)


def split(ds: Dataset, ratio: float, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """Stratified train/test split; each class keeps floor(n_c (1 - ratio)) for test."""
    if not 0.0 < ratio < 1.0:
        raise DatasetError(f"split ratio {ratio} outside (0, 1)")
    train_idx, test_idx = [], []
    for label in (0, 1):
        idx = np.flatnonzero(ds.y == label)
        if idx.size == 0:
            continue
        if idx.size < 2:
            raise DatasetError(f"class {label} has {idx.size} sample(s); need >= 2 to split")
        idx = rng.permutation(idx)
        n_test = math.floor(round(idx.size * (1.0 - ratio), 9))
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    train_idx = rng.permutation(np.concatenate(train_idx))
    test_idx = rng.permutation(np.concatenate(test_idx))
    return ds.subset(train_idx, split="train"), ds.subset(test_idx, split="test")


def positions(ds: Dataset) -> np.ndarray:
    return np.column_stack([ds.meta["x"], ds.meta["y"], ds.meta["z"]])


def partition_clients(train: Dataset, client_aps, topo: Topology) -> list[Dataset]:
    """Assign each sample to the nearest client AP (ties to the lower client index)."""
    client_aps = list(client_aps)
    d = np.linalg.norm(positions(train)[:, None, :] - topo.ap_pos[client_aps][None, :, :], axis=2)
    owner = np.argmin(d, axis=1)
    shards = []
    for k, ap in enumerate(client_aps):
        idx = np.flatnonzero(owner == k)
        if idx.size == 0:
            raise DatasetError(
                f"client AP {ap} received no samples; use fewer FL clients (n_fl_clients)")
        shards.append(train.subset(idx, owner=ap))
    return shards


def fit_normalization(train: Dataset) -> NormStats:
    vals = train.x[:, 0, 0, 3:].astype(np.float64)
    mean = vals.mean(axis=0)
    std = vals.std(axis=0)
    return NormStats(mean, np.where(std > 0, std, 1.0))


def model_inputs(ds: Dataset, norm: NormStats | None = None) -> np.ndarray:
    """Float64 model input with metadata planes standardised by ``norm`` (or ``ds.norm``)."""
    norm = norm or ds.norm
    x = ds.x.astype(np.float64)
    if norm is not None:
        x[..., 3:] = (x[..., 3:] - norm.mean) / norm.std
    return x


# -- container format ---------------------------------------------------------
# header: magic "CSI1" | version u16 | split u8 | has_norm u8 | H W C n u32 | owner i32
#         | norm mean 6 f64 | norm std 6 f64 | crc32 of everything before it
# record: tensor H*W*C f32 LE | label u8 | meta (56 bytes, META_DTYPE)

MAGIC = b"CSI1"
VERSION = 1
_HEAD = struct.Struct("<4sHBB4Ii6d6d")
HEADER_SIZE = _HEAD.size + 4


def record_size(h: int, w: int, c: int) -> int:
    return h * w * c * 4 + 1 + META_DTYPE.itemsize


def to_bytes(ds: Dataset) -> bytes:
    n, h, w, c = ds.x.shape
    norm = ds.norm or NormStats(np.zeros(N_META), np.zeros(N_META))
    head = _HEAD.pack(MAGIC, VERSION, SPLITS[ds.split], int(ds.norm is not None), h, w, c, n,
                      ds.owner, *norm.mean, *norm.std)
    head += struct.pack("<I", zlib.crc32(head))
    rec = np.zeros(n, dtype=[("t", "<f4", (h * w * c,)), ("y", "u1"), ("m", META_DTYPE)])
    rec["t"] = ds.x.reshape(n, -1)
    rec["y"] = ds.y
    rec["m"] = ds.meta
    return head + rec.tobytes()


def from_bytes(blob: bytes) -> Dataset:
    if len(blob) < HEADER_SIZE:
        raise DatasetIntegrityError(f"truncated header ({len(blob)} bytes)")
    fields = _HEAD.unpack_from(blob)
    (crc,) = struct.unpack_from("<I", blob, _HEAD.size)
    magic, version = fields[0], fields[1]
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError(f"unsupported version {version}")
    if crc != zlib.crc32(blob[:_HEAD.size]):
        raise DatasetFormatError("header checksum mismatch")
    split_code, has_norm, h, w, c, n, owner = fields[2:9]
    mean, std = np.array(fields[9:15]), np.array(fields[15:21])
    body = blob[HEADER_SIZE:]
    if len(body) != n * record_size(h, w, c):
        raise DatasetIntegrityError(
            f"expected {n * record_size(h, w, c)} body bytes, found {len(body)}")
    rec = np.frombuffer(body, dtype=[("t", "<f4", (h * w * c,)), ("y", "u1"), ("m", META_DTYPE)])
    split_name = {v: k for k, v in SPLITS.items()}.get(split_code)
    if split_name is None:
        raise DatasetFormatError(f"unknown split code {split_code}")
    return Dataset(rec["t"].reshape(n, h, w, c).astype(np.float32), rec["y"].copy(),
                   rec["m"].copy(), split_name, owner, NormStats(mean, std) if has_norm else None)


def save_dataset(ds: Dataset, path) -> Path:
    return atomic_write(path, to_bytes(ds))


def load_dataset(path) -> Dataset:
    return from_bytes(Path(path).read_bytes())
