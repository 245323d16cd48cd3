"""Frequency-selective mmWave link channels and the RIS-assisted effective channel.

Every link segment (UE-AP, UE-RIS, RIS-AP) is a single geometric path: close-in
path loss with log-normal shadowing, an exponential LoS probability, a tapped
delay line (Rician when in LoS) sampled at the resource-block centres, and the
array responses of the AP's uniform linear array and the RIS's planar array.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .scenario import ScenarioConfig, noise_power_dbm, rng_for
from .topology import SnrTable, Topology

log = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0


class ChannelError(ValueError):
    pass


@dataclass(frozen=True)
class PathLossModel:
    intercept_db: float = 32.4
    exponent_los: float = 2.0
    exponent_nlos: float = 3.2
    sigma_los_db: float = 3.0
    sigma_nlos_db: float = 7.0
    k_factor_db: float = 9.0

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "PathLossModel":
        return cls(cfg.pl_intercept_db, cfg.exponent_los, cfg.exponent_nlos,
                   cfg.shadow_sigma_los_db, cfg.shadow_sigma_nlos_db, cfg.k_factor_db)


clamp_count = 0  # distances below 1 m seen by path_loss_db


def path_loss_db(model: PathLossModel, distance_m: float, carrier_ghz: float, los: bool,
                 shadow_std_normal: float = 0.0) -> float:
    """Close-in path loss; ``shadow_std_normal`` is a standard-normal draw scaled by sigma."""
    global clamp_count
    if distance_m < 1.0:
        clamp_count += 1
        log.warning("distance %.3f m clamped to 1 m", distance_m)
        distance_m = 1.0
    n = model.exponent_los if los else model.exponent_nlos
    sigma = model.sigma_los_db if los else model.sigma_nlos_db
    return (model.intercept_db + 20.0 * math.log10(carrier_ghz)
            + 10.0 * n * math.log10(distance_m) + sigma * shadow_std_normal)


def los_probability(distance_m, d_clutter_m: float = 25.0):
    return np.clip(np.exp(-np.asarray(distance_m, dtype=float) / d_clutter_m), 0.0, 1.0)


def pdp_weights(n_taps: int, decay_taps: float = 1.0) -> np.ndarray:
    w = np.exp(-np.arange(n_taps) / decay_taps)
    return w / w.sum()


def small_scale_gain(rng: np.random.Generator, los: bool, k_factor_db: float, n_taps: int,
                     decay_taps: float = 1.0) -> np.ndarray:
    """Tap vector with unit mean total power and an exponential power-delay profile.

    In LoS the first tap carries a deterministic component of power K/(K+1);
    the diffuse part, of total power 1/(K+1), follows the profile.
    """
    if n_taps < 1:
        raise ChannelError("n_taps must be >= 1")
    w = pdp_weights(n_taps, decay_taps)
    diffuse = (rng.standard_normal(n_taps) + 1j * rng.standard_normal(n_taps)) / math.sqrt(2)
    if not los:
        return np.sqrt(w) * diffuse
    k = 10.0 ** (k_factor_db / 10.0)
    taps = np.sqrt(w / (k + 1.0)) * diffuse
    taps[0] += math.sqrt(k / (k + 1.0))
    return taps


def rb_centre_offsets(n_rb: int) -> np.ndarray:
    """RB-centre frequencies in units of the RB width, centred on the carrier."""
    return np.arange(n_rb) - (n_rb - 1) / 2.0


def tap_delays_s(n_taps: int, n_rb: int, scs_khz: float) -> np.ndarray:
    # one tap per delay-resolution bin of the RB grid
    return np.arange(n_taps) / (n_rb * 12 * scs_khz * 1e3)


def frequency_response(taps: np.ndarray, n_rb: int, scs_khz: float = 120.0) -> np.ndarray:
    """Transform of the tap vector at the RB centres (length ``n_rb``).

    Delays sit on the grid 1/(n_rb * RB width), so this is a unitary-up-to-scale
    DFT and mean(|H|^2) equals the tap energy as long as n_taps <= n_rb.
    """
    taps = np.asarray(taps, dtype=complex)
    if taps.size == 0:
        raise ChannelError("taps must be nonempty")
    f = rb_centre_offsets(n_rb) * 12 * scs_khz * 1e3
    tau = tap_delays_s(taps.size, n_rb, scs_khz)
    return np.exp(-2j * np.pi * np.outer(f, tau)) @ taps


def ula_response(n: int, direction: np.ndarray, axis=(1.0, 0.0, 0.0)) -> np.ndarray:
    """Half-wavelength ULA steering vector; all ones at broadside."""
    u = float(np.dot(direction, axis))
    return np.exp(-1j * np.pi * np.arange(n) * u)


def upa_response(rows: int, cols: int, direction: np.ndarray, tangent: np.ndarray) -> np.ndarray:
    """Half-wavelength planar array, rows along z and columns along ``tangent``."""
    uz = float(direction[2])
    ut = float(np.dot(direction, tangent))
    r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    return np.exp(-1j * np.pi * (r * uz + c * ut)).ravel()


@dataclass(frozen=True)
class Segment:
    """One propagation path: complex amplitude x per-RB response."""
    gain: complex  # path-loss amplitude with the propagation phase
    response: np.ndarray  # (F,)
    los: bool
    distance_m: float
    path_loss_db: float


def gen_segment(cfg: ScenarioConfig, a: np.ndarray, b: np.ndarray,
                rng: np.random.Generator, model: PathLossModel | None = None) -> Segment:
    """Draw LoS state, shadowing and taps (in that order) for the path a-b."""
    model = model or PathLossModel.from_config(cfg)
    d = float(np.linalg.norm(b - a))
    los = bool(rng.random() < los_probability(d, cfg.d_clutter_m))
    shadow = rng.standard_normal()
    taps = small_scale_gain(rng, los, model.k_factor_db, cfg.n_taps, cfg.pdp_decay_taps)
    pl = path_loss_db(model, d, cfg.carrier_ghz, los, shadow)
    wavelength = SPEED_OF_LIGHT / (cfg.carrier_ghz * 1e9)
    gain = 10.0 ** (-pl / 20.0) * np.exp(-2j * np.pi * d / wavelength)
    return Segment(complex(gain), frequency_response(taps, cfg.n_rb, cfg.scs_khz), los, d, pl)


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def direct_stream(phase_id: int, ue: int, ap: int) -> str:
    return f"fading:p{phase_id}:ue{ue}-ap{ap}"


def ue_ris_stream(phase_id: int, ue: int, ris: int) -> str:
    return f"fading:p{phase_id}:ue{ue}-ris{ris}"


def ris_ap_stream(phase_id: int, ris: int, ap: int) -> str:
    return f"fading:p{phase_id}:ris{ris}-ap{ap}"


def gen_direct(cfg: ScenarioConfig, topo: Topology, ue: int, ap: int, phase_id: int,
               model: PathLossModel | None = None) -> tuple[np.ndarray, Segment]:
    """h_dir for UE->AP: (N_t, F)."""
    p_ue, p_ap = topo.ue_pos[ue], topo.ap_pos[ap]
    seg = gen_segment(cfg, p_ue, p_ap, rng_for(cfg, direct_stream(phase_id, ue, ap)), model)
    arr = ula_response(cfg.ap_antennas, _unit(p_ue - p_ap))
    return seg.gain * np.outer(arr, seg.response), seg


def gen_ue_ris(cfg: ScenarioConfig, topo: Topology, ue: int, ris: int, phase_id: int,
               model: PathLossModel | None = None) -> tuple[np.ndarray, Segment]:
    """h_{l,r} for UE->RIS: (N, F)."""
    p_ue, p_ris = topo.ue_pos[ue], topo.ris_pos[ris]
    seg = gen_segment(cfg, p_ue, p_ris, rng_for(cfg, ue_ris_stream(phase_id, ue, ris)), model)
    arr = upa_response(cfg.ris_rows, cfg.ris_cols, _unit(p_ue - p_ris), topo.ris_tangent[ris])
    return seg.gain * np.outer(arr, seg.response), seg


def gen_ris_ap(cfg: ScenarioConfig, topo: Topology, ris: int, ap: int, phase_id: int,
               model: PathLossModel | None = None) -> tuple[np.ndarray, Segment]:
    """G for RIS->AP stored as (N, N_t, F); its per-bin Hermitian is the physical channel."""
    p_ris, p_ap = topo.ris_pos[ris], topo.ap_pos[ap]
    seg = gen_segment(cfg, p_ris, p_ap, rng_for(cfg, ris_ap_stream(phase_id, ris, ap)), model)
    a_ris = upa_response(cfg.ris_rows, cfg.ris_cols, _unit(p_ap - p_ris), topo.ris_tangent[ris])
    a_ap = ula_response(cfg.ap_antennas, _unit(p_ris - p_ap))
    g = seg.gain * a_ris[:, None, None] * a_ap[None, :, None] * seg.response[None, None, :]
    return np.conj(g), seg


@dataclass(frozen=True)
class LinkChannels:
    ue: int
    ap: int
    ris: int
    h_dir: np.ndarray  # (N_t, F)
    h_ue_ris: np.ndarray  # (N, F)
    g_ris_ap: np.ndarray  # (N, N_t, F)
    los_flags: dict

    def scaled(self, c: complex) -> "LinkChannels":
        """Scale the UE transmit amplitude: both UE-side tensors, G untouched."""
        return LinkChannels(self.ue, self.ap, self.ris, c * self.h_dir, c * self.h_ue_ris,
                            self.g_ris_ap, self.los_flags)


def gen_link_channels(cfg: ScenarioConfig, topo: Topology, ue: int, ap: int, ris: int,
                      phase_id: int = 0, g_ris_ap: np.ndarray | None = None) -> LinkChannels:
    """All three segments of one UE-AP link through one RIS.

    Each segment has its own stream keyed by (phase, link identity), so any
    link can be regenerated in isolation. ``g_ris_ap`` may be passed in to
    reuse a RIS-AP tensor that is shared by many UEs.
    """
    for kind, idx in (("UE", ue), ("AP", ap), ("RIS", ris)):
        topo.node(kind, idx)
    model = PathLossModel.from_config(cfg)
    h_dir, s_dir = gen_direct(cfg, topo, ue, ap, phase_id, model)
    h_ur, s_ur = gen_ue_ris(cfg, topo, ue, ris, phase_id, model)
    if g_ris_ap is None:
        g_ris_ap, s_ra = gen_ris_ap(cfg, topo, ris, ap, phase_id, model)
        ra_los = s_ra.los
    else:
        ra_los = None
    flags = {"direct": s_dir.los, "ue_ris": s_ur.los, "ris_ap": ra_los}
    return LinkChannels(ue, ap, ris, h_dir, h_ur, g_ris_ap, flags)


@dataclass(frozen=True)
class RisConfiguration:
    phase_id: int
    theta: np.ndarray  # (N,) radians in [0, 2pi)

    @property
    def reflection(self) -> np.ndarray:
        return np.exp(1j * self.theta)


def phase_stream(phase_id: int) -> str:
    return f"channel:phase_{phase_id}"


def random_ris_phases(rng: np.random.Generator, phase_id: int, n_elements: int,
                      n_ris: int = 1) -> tuple[RisConfiguration, ...]:
    """i.i.d. uniform phases, one configuration per RIS panel."""
    theta = rng.uniform(0.0, 2 * np.pi, size=(n_ris, n_elements))
    return tuple(RisConfiguration(phase_id, t) for t in theta)


def phase_configs(cfg: ScenarioConfig, phase_id: int) -> tuple[RisConfiguration, ...]:
    if not 0 <= phase_id < cfg.n_phase_configs:
        raise ChannelError(f"phase_id {phase_id} outside [0, {cfg.n_phase_configs})")
    return random_ris_phases(rng_for(cfg, phase_stream(phase_id)), phase_id, cfg.n_elements,
                             cfg.n_ris)


def effective_channel(link: LinkChannels, ris_cfg: RisConfiguration) -> np.ndarray:
    """h_eff[:, f] = h_dir[:, f] + G[:, :, f]^H diag(e^{j theta}) h_ue_ris[:, f]."""
    n, nt, f = link.g_ris_ap.shape
    if link.h_dir.shape != (nt, f) or link.h_ue_ris.shape != (n, f) or ris_cfg.theta.shape != (n,):
        raise ChannelError(
            f"dimension mismatch: h_dir {link.h_dir.shape}, h_ue_ris {link.h_ue_ris.shape}, "
            f"G {link.g_ris_ap.shape}, theta {ris_cfg.theta.shape}")
    reflected = ris_cfg.reflection[:, None] * link.h_ue_ris
    return link.h_dir + np.einsum("nmf,nf->mf", np.conj(link.g_ris_ap), reflected)


def _energy(h: np.ndarray) -> np.ndarray:
    # sum over the antenna axis (1) of |h|^2
    return np.sum(h.real ** 2 + h.imag ** 2, axis=1)


@dataclass(frozen=True)
class GainTable:
    """Per-bin channel energies ||h[:, f]||^2 for every UE x AP x RIS triple."""
    effective: np.ndarray  # (U, A, R, F), direct + reflected via RIS r
    reflected: np.ndarray  # (U, A, R, F), reflected component alone
    direct: np.ndarray  # (U, A, F)


def compute_gain_table(cfg: ScenarioConfig, topo: Topology,
                       ris_cfgs: tuple[RisConfiguration, ...], phase_id: int) -> GainTable:
    """Bulk version of ``effective_channel`` keeping only per-bin energies.

    UEs are processed in chunks of ``cfg.ue_chunk`` so that memory stays
    bounded; the RIS-AP tensors are regenerated per chunk from their streams.
    """
    model = PathLossModel.from_config(cfg)
    U, A, R, F = topo.n_ue, topo.n_ap, topo.n_ris, cfg.n_rb
    eff = np.empty((U, A, R, F))
    refl = np.empty((U, A, R, F))
    direct = np.empty((U, A, F))
    for lo in range(0, U, cfg.ue_chunk):
        ues = range(lo, min(U, lo + cfg.ue_chunk))
        sl = slice(lo, lo + len(ues))
        # x[r]: (F, N, Uc) phase-shifted UE->RIS channels
        x = np.empty((R, F, cfg.n_elements, len(ues)), dtype=complex)
        for r in range(R):
            for j, u in enumerate(ues):
                x[r, :, :, j] = (ris_cfgs[r].reflection[:, None]
                                 * gen_ue_ris(cfg, topo, u, r, phase_id, model)[0]).T
        for a in range(A):
            h_dir = np.empty((F, cfg.ap_antennas, len(ues)), dtype=complex)
            for j, u in enumerate(ues):
                h_dir[:, :, j] = gen_direct(cfg, topo, u, a, phase_id, model)[0].T
            direct[sl, a] = _energy(h_dir).T
            for r in range(R):
                g = gen_ris_ap(cfg, topo, r, a, phase_id, model)[0]
                gh = np.ascontiguousarray(np.conj(g).transpose(2, 1, 0))  # (F, N_t, N)
                casc = np.matmul(gh, x[r])  # (F, N_t, Uc)
                refl[sl, a, r] = _energy(casc).T
                eff[sl, a, r] = _energy(casc + h_dir).T
    return GainTable(eff, refl, direct)


def wideband(per_bin: np.ndarray, mode: str = "mean") -> np.ndarray:
    """Aggregate the last (frequency) axis: arithmetic or geometric mean."""
    if mode == "mean":
        return per_bin.mean(axis=-1)
    return np.exp(np.log(np.maximum(per_bin, 1e-300)).mean(axis=-1))


def snr_table(cfg: ScenarioConfig, topo: Topology, gains: GainTable) -> SnrTable:
    p_mw = 10.0 ** (topo.ue_power_dbm / 10.0)
    n_mw = 10.0 ** (noise_power_dbm(cfg) / 10.0)
    scale = (p_mw / n_mw)[:, None, None]
    eff = scale * wideband(gains.effective, cfg.wideband)
    refl = (scale * wideband(gains.reflected, cfg.wideband)).max(axis=1)
    with np.errstate(divide="ignore"):
        return SnrTable(10 * np.log10(eff), 10 * np.log10(refl))


def dump_link(link: LinkChannels) -> bytes:
    """Debug dump: 16-byte header (magic, N, N_t, F as uint32) + complex128 payloads."""
    n, nt, f = link.g_ris_ap.shape
    header = np.array([0x4B4E494C, n, nt, f], dtype="<u4").tobytes()  # "LINK"
    parts = [link.h_dir, link.h_ue_ris, link.g_ris_ap]
    return header + b"".join(np.ascontiguousarray(p, dtype="<c16").tobytes() for p in parts)


def load_link(blob: bytes) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    magic, n, nt, f = np.frombuffer(blob[:16], dtype="<u4")
    if magic != 0x4B4E494C:
        raise ChannelError("not a link dump")
    body = np.frombuffer(blob[16:], dtype="<c16")
    sizes = [nt * f, n * f, n * nt * f]
    if body.size != sum(sizes):
        raise ChannelError("truncated link dump")
    h_dir = body[:sizes[0]].reshape(nt, f)
    h_ur = body[sizes[0]:sizes[0] + sizes[1]].reshape(n, f)
    g = body[sizes[0] + sizes[1]:].reshape(n, nt, f)
    return h_dir, h_ur, g
