"""Entity placement, UE association and FL-client selection."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .scenario import ScenarioConfig


class TopologyError(ValueError):
    pass


class NodeId(NamedTuple):
    kind: str  # "AP" | "RIS" | "UE"
    index: int


@dataclass(frozen=True)
class Topology:
    area_m: tuple[float, float]
    ap_pos: np.ndarray  # (n_ap, 3)
    ris_pos: np.ndarray  # (n_ris, 3)
    ris_normal: np.ndarray  # (n_ris, 3), unit, pointing into the hall
    ue_pos: np.ndarray  # (n_ue, 3)
    ue_is_eve: np.ndarray  # (n_ue,) bool
    ue_power_dbm: np.ndarray  # (n_ue,)

    @property
    def n_ap(self) -> int:
        return len(self.ap_pos)

    @property
    def n_ris(self) -> int:
        return len(self.ris_pos)

    @property
    def n_ue(self) -> int:
        return len(self.ue_pos)

    @property
    def ris_tangent(self) -> np.ndarray:
        # horizontal axis of each RIS panel (normal rotated by +90 deg about z)
        n = self.ris_normal
        return np.stack([-n[:, 1], n[:, 0], np.zeros(len(n))], axis=1)

    @property
    def centroid(self) -> np.ndarray:
        return np.array([self.area_m[0] / 2, self.area_m[1] / 2])

    def node(self, kind: str, index: int) -> NodeId:
        counts = {"AP": self.n_ap, "RIS": self.n_ris, "UE": self.n_ue}
        if kind not in counts:
            raise TopologyError(f"unknown node kind {kind!r}")
        count = counts[kind]
        if not 0 <= index < count:
            raise TopologyError(f"{kind} index {index} out of range (count {count})")
        return NodeId(kind, index)


def _grid_shape(n: int, width: float, height: float) -> tuple[int, int]:
    rows = max(1, round(math.sqrt(n * height / width)))
    cols = math.ceil(n / rows)
    return cols, rows


def _ap_grid(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    width, height = cfg.area_m
    cols, rows = _grid_shape(cfg.n_ap, width, height)
    dx, dy = width / cols, height / rows
    if min(dx, dy) < 2.0:
        raise TopologyError(
            f"area {cfg.area_m} too small for a {cols}x{rows} AP grid (cell {dx:.2f}x{dy:.2f} m)")
    jitter = rng.uniform(-cfg.ap_jitter, cfg.ap_jitter, size=(cfg.n_ap, 2))
    idx = np.arange(cfg.n_ap)
    x = (idx % cols + 0.5 + jitter[:, 0]) * dx
    y = (idx // cols + 0.5 + jitter[:, 1]) * dy
    return np.column_stack([x, y, np.full(cfg.n_ap, cfg.ap_height_m)])


def _wall_candidates(width: float, height: float) -> tuple[np.ndarray, np.ndarray]:
    pts, normals = [], []
    for x in np.arange(0.5, width, 1.0):
        pts += [(x, 0.0), (x, height)]
        normals += [(0.0, 1.0), (0.0, -1.0)]
    for y in np.arange(0.5, height, 1.0):
        pts += [(0.0, y), (width, y)]
        normals += [(1.0, 0.0), (-1.0, 0.0)]
    return np.array(pts), np.array(normals)


def _place_ris(cfg: ScenarioConfig, ap_pos: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Greedy max-min distance along the walls; chosen panels repel later ones.
    cand, normals = _wall_candidates(*cfg.area_m)
    cand3 = np.column_stack([cand, np.full(len(cand), cfg.ris_height_m)])
    anchors = ap_pos.copy()
    chosen = []
    for _ in range(cfg.n_ris):
        dmin = np.linalg.norm(cand3[:, None, :] - anchors[None, :, :], axis=2).min(axis=1)
        dmin[chosen] = -np.inf
        k = int(np.argmax(dmin))
        chosen.append(k)
        anchors = np.vstack([anchors, cand3[k]])
    n = np.column_stack([normals[chosen], np.zeros(len(chosen))])
    return cand3[chosen], n


def place_entities(cfg: ScenarioConfig, rng: np.random.Generator) -> Topology:
    """Place APs, RIS panels and UEs, and flag exactly n_eve eavesdroppers.

    Draw order from ``rng``: AP jitter, UE positions, a candidate eavesdropper
    power for every UE, then the permutation that picks eavesdroppers. Changing
    only ``legit_fraction`` therefore keeps every position and power draw.
    """
    ap = _ap_grid(cfg, rng)
    ris, normal = _place_ris(cfg, ap)
    width, height = cfg.area_m
    xy = rng.uniform((0.0, 0.0), (width, height), size=(cfg.n_ue, 2))
    ue = np.column_stack([xy, np.full(cfg.n_ue, cfg.ue_height_m)])
    eve_power = rng.uniform(*cfg.eve_power_range_dbm, size=cfg.n_ue)
    order = rng.permutation(cfg.n_ue)
    is_eve = np.zeros(cfg.n_ue, dtype=bool)
    is_eve[order[:cfg.n_eve]] = True
    # guard the open lower bound of the eavesdropper power interval
    eve_power = np.maximum(eve_power, np.nextafter(cfg.p_lu_dbm, np.inf))
    power = np.where(is_eve, eve_power, cfg.p_lu_dbm)
    return Topology(tuple(cfg.area_m), ap, ris, normal, ue, is_eve, power)


@dataclass(frozen=True)
class SnrTable:
    """Received SNRs (dB) feeding the association rule.

    ``ap_ris_db[u, a, r]`` is the wideband SNR of the effective channel of UE
    ``u`` at AP ``a`` when RIS ``r`` provides the reflected path;
    ``ris_db[u, r]`` is the SNR of the reflected path alone (best AP).
    """
    ap_ris_db: np.ndarray
    ris_db: np.ndarray


@dataclass(frozen=True)
class Association:
    serving_ap: np.ndarray  # (n_ue,) int
    serving_ris: np.ndarray  # (n_ue,) int
    rx_snr_db: np.ndarray  # (n_ue, n_ap) with the serving RIS in place


def associate(topology: Topology, table: SnrTable) -> Association:
    """Serve each UE by its best RIS, then by the AP with the best SNR.

    Ties go to the lowest index (``np.argmax`` returns the first maximum).
    """
    n_ue, n_ap, n_ris = topology.n_ue, topology.n_ap, topology.n_ris
    if table.ap_ris_db.shape != (n_ue, n_ap, n_ris) or table.ris_db.shape != (n_ue, n_ris):
        raise TopologyError("SNR table does not cover every UE x AP x RIS candidate")
    if np.isnan(table.ap_ris_db).any() or np.isnan(table.ris_db).any():
        raise TopologyError("SNR table has missing entries")
    ris = np.argmax(table.ris_db, axis=1)
    rx = table.ap_ris_db[np.arange(n_ue), :, ris]
    ap = np.argmax(rx, axis=1)
    return Association(ap, ris, rx)


def client_scores(topology: Topology, alpha: float = 0.5) -> np.ndarray:
    d_centre = np.linalg.norm(topology.ap_pos[:, :2] - topology.centroid, axis=1)
    d_ris = np.linalg.norm(topology.ap_pos[:, None, :] - topology.ris_pos[None, :, :],
                           axis=2).mean(axis=1)
    return alpha * d_centre + (1 - alpha) * d_ris


def select_fl_clients(topology: Topology, k: int, alpha: float = 0.5) -> list[int]:
    """Pick the k most central APs that are also closest, on average, to the RIS."""
    if not 1 <= k <= topology.n_ap:
        raise TopologyError(f"cannot select {k} clients from {topology.n_ap} APs")
    order = np.argsort(client_scores(topology, alpha), kind="stable")
    return sorted(int(i) for i in order[:k])


def aggregator_ap(topology: Topology) -> int:
    """AP hosting the FedAvg server: the one nearest the hall centroid."""
    d = np.linalg.norm(topology.ap_pos[:, :2] - topology.centroid, axis=1)
    return int(np.argmin(d))


def topology_csv(topology: Topology) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "index", "x", "y", "z", "is_eve", "power_dbm"])
    for i, p in enumerate(topology.ap_pos):
        w.writerow(["AP", i, *(f"{v:.6f}" for v in p), "", ""])
    for i, p in enumerate(topology.ris_pos):
        w.writerow(["RIS", i, *(f"{v:.6f}" for v in p), "", ""])
    for i, p in enumerate(topology.ue_pos):
        w.writerow(["UE", i, *(f"{v:.6f}" for v in p), int(topology.ue_is_eve[i]),
                    f"{topology.ue_power_dbm[i]:.6f}"])
    return buf.getvalue()
