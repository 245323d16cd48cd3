"""SINR, per-user secrecy rate and the system average secrecy rate."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .channel import GainTable, wideband
from .scenario import ScenarioConfig, noise_power_dbm
from .topology import Association, Topology


@dataclass(frozen=True)
class SinrRecord:
    ue: int
    ap: int
    per_bin: np.ndarray
    sinr_linear: float  # wideband aggregate


def sinr(h_eff: np.ndarray, p_tx_dbm: float, noise_dbm: float, ue: int = -1, ap: int = -1,
         mode: str = "mean") -> SinrRecord:
    """MRC at the AP: SINR_f = p ||h[:, f]||^2 / noise, no inter-user term."""
    p = 10.0 ** (p_tx_dbm / 10.0)
    n = 10.0 ** (noise_dbm / 10.0)
    per_bin = p * np.sum(np.abs(h_eff) ** 2, axis=0) / n
    return SinrRecord(ue, ap, per_bin, float(wideband(per_bin, mode)))


def secrecy_rate(sinr_l, sinr_e):
    """[log2(1 + SINR_l) - log2(1 + SINR_e)]^+ in bps/Hz (broadcasts)."""
    sr = np.log2(1.0 + np.asarray(sinr_l, dtype=float)) - np.log2(1.0 + np.asarray(sinr_e, dtype=float))
    return np.maximum(sr, 0.0)


def worst_case_pairing(sinr_at_ap: np.ndarray, eve_ids: np.ndarray) -> int:
    """Eavesdropper (from ``eve_ids``) with the largest SINR at the AP; -1 if none.

    Ties go to the lowest UE index.
    """
    eve_ids = np.sort(np.asarray(eve_ids, dtype=int))
    if eve_ids.size == 0:
        return -1
    return int(eve_ids[np.argmax(sinr_at_ap[eve_ids])])


def average_secrecy_rate(sr_matrix: np.ndarray, n_legit: int | None = None) -> float:
    """Sum of SR over (AP, legitimate user) divided by the number of APs.

    ``n_legit`` additionally divides by the number of legitimate users.
    """
    sr_matrix = np.asarray(sr_matrix, dtype=float)
    asr = float(sr_matrix.sum()) / sr_matrix.shape[0]
    if n_legit:
        asr /= n_legit
    return asr


def sinr_matrix(cfg: ScenarioConfig, topo: Topology, assoc: Association,
                gains: GainTable) -> np.ndarray:
    """Wideband SINR of every UE at every AP, through the UE's own serving RIS."""
    ue = np.arange(topo.n_ue)
    per_bin = gains.effective[ue, :, assoc.serving_ris]  # (U, A, F)
    p = 10.0 ** (topo.ue_power_dbm / 10.0)
    n = 10.0 ** (noise_power_dbm(cfg) / 10.0)
    return (p / n)[:, None] * wideband(per_bin, cfg.wideband)


@dataclass(frozen=True)
class SecrecyReport:
    legit: np.ndarray  # legitimate UE ids
    serving_ap: np.ndarray
    paired_eve: np.ndarray  # -1 when the adversary set is empty
    sinr_l: np.ndarray
    sinr_e: np.ndarray
    sr_per_user: np.ndarray
    sr_matrix: np.ndarray  # (n_ap, n_legit), each user's SR at its serving AP
    asr: float


def secrecy_report(sinr_ua: np.ndarray, serving_ap: np.ndarray, is_legit: np.ndarray,
                   is_adversary: np.ndarray, per_user: bool = False) -> SecrecyReport:
    """Pair every legitimate UE with its worst-case adversary and aggregate.

    ``is_adversary`` may differ from ``~is_legit`` (e.g. predicted labels); a
    user is never paired with itself.
    """
    n_ue, n_ap = sinr_ua.shape
    legit = np.flatnonzero(is_legit)
    adversaries = np.flatnonzero(is_adversary)
    paired, s_l, s_e = [], [], []
    for u in legit:
        a = serving_ap[u]
        cand = adversaries[adversaries != u]
        e = worst_case_pairing(sinr_ua[:, a], cand)
        paired.append(e)
        s_l.append(sinr_ua[u, a])
        s_e.append(sinr_ua[e, a] if e >= 0 else 0.0)
    s_l, s_e = np.array(s_l, dtype=float), np.array(s_e, dtype=float)
    sr = secrecy_rate(s_l, s_e)
    mat = np.zeros((n_ap, legit.size))
    mat[serving_ap[legit], np.arange(legit.size)] = sr
    asr = average_secrecy_rate(mat, legit.size if per_user and legit.size else None)
    return SecrecyReport(legit, serving_ap[legit], np.array(paired, dtype=int), s_l, s_e, sr, mat, asr)


def secrecy_csv(report: SecrecyReport, phase_id: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["phase_id", "ue", "serving_ap", "paired_eve", "sinr_l_db", "sinr_e_db", "sr_bpshz"])
    with np.errstate(divide="ignore"):
        for i, u in enumerate(report.legit):
            w.writerow([phase_id, int(u), int(report.serving_ap[i]), int(report.paired_eve[i]),
                        f"{10 * np.log10(report.sinr_l[i]):.6f}",
                        f"{10 * np.log10(report.sinr_e[i]):.6f}" if report.paired_eve[i] >= 0 else "",
                        f"{report.sr_per_user[i]:.9f}"])
    return buf.getvalue()
