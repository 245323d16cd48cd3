"""Scenario configuration and the seeding discipline shared by every module.

The config is a frozen dataclass whose defaults reproduce the reference
simulation table (18 APs, 3 RIS of 10x20 elements, 500 UEs at 28 GHz, ...).
It is read from and written to TOML with one section per concern.
"""
from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import tomli
import tomli_w

MAX_SEED = 2**63 - 1  # TOML integers are signed 64-bit


class ConfigError(ValueError):
    """Raised for malformed documents or violated config invariants."""


@dataclass(frozen=True)
class ScenarioConfig:
    # network
    n_ap: int = 18
    n_ris: int = 3
    n_ue: int = 500
    legit_fraction: float = 0.7
    area_m: tuple[float, float] = (120.0, 60.0)
    ap_height_m: float = 8.0
    ue_height_m: float = 1.5
    ris_height_m: float = 4.0
    ap_jitter: float = 0.1
    p_ap_dbm: float = 40.0
    p_lu_dbm: float = 23.0
    eve_power_range_dbm: tuple[float, float] = (24.0, 30.0)
    # radio
    carrier_ghz: float = 28.0
    bandwidth_mhz: float = 400.0
    scs_khz: float = 120.0
    n_rb: int = 60
    ap_antennas: int = 32
    ue_antennas: int = 1
    noise_figure_db: float = 5.0
    # ris
    ris_rows: int = 10
    ris_cols: int = 20
    n_phase_configs: int = 100
    # channel
    pl_intercept_db: float = 32.4
    exponent_los: float = 2.0
    exponent_nlos: float = 3.2
    shadow_sigma_los_db: float = 3.0
    shadow_sigma_nlos_db: float = 7.0
    k_factor_db: float = 9.0
    n_taps: int = 4
    pdp_decay_taps: float = 1.0
    d_clutter_m: float = 25.0
    ue_chunk: int = 64
    # secrecy
    wideband: str = "mean"
    asr_per_user: bool = False
    # dataset
    train_ratio: float = 0.8
    power_feature: str = "estimated"
    ris_plane: str = "distance"
    # federated / training
    n_fl_clients: int = 3
    client_alpha: float = 0.5
    aggregator_trains: bool = False
    fl_rounds: int = 20
    local_epochs: int = 2
    batch_size: int = 32
    lr: float = 1e-3
    lambda_aux: float = 0.3
    early_exit_cl: tuple[float, ...] = (0.55, 0.70)
    # experiments
    asr_ratios: tuple[float, ...] = (1.0, 2.0, 3.5, 5.5)
    top_k: int = 5
    # run
    master_seed: int = 7

    def __post_init__(self):
        validate(self)

    @property
    def n_elements(self) -> int:
        return self.ris_rows * self.ris_cols

    @property
    def n_legit(self) -> int:
        return math.floor(self.legit_fraction * self.n_ue + 0.5)

    @property
    def n_eve(self) -> int:
        return self.n_ue - self.n_legit

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


SECTIONS: dict[str, tuple[str, ...]] = {
    "network": ("n_ap", "n_ris", "n_ue", "legit_fraction", "area_m", "ap_height_m",
                "ue_height_m", "ris_height_m", "ap_jitter", "p_ap_dbm", "p_lu_dbm",
                "eve_power_range_dbm"),
    "radio": ("carrier_ghz", "bandwidth_mhz", "scs_khz", "n_rb", "ap_antennas",
              "ue_antennas", "noise_figure_db"),
    "ris": ("ris_rows", "ris_cols", "n_phase_configs"),
    "channel": ("pl_intercept_db", "exponent_los", "exponent_nlos", "shadow_sigma_los_db",
                "shadow_sigma_nlos_db", "k_factor_db", "n_taps", "pdp_decay_taps",
                "d_clutter_m", "ue_chunk"),
    "secrecy": ("wideband", "asr_per_user"),
    "dataset": ("train_ratio", "power_feature", "ris_plane"),
    "training": ("n_fl_clients", "client_alpha", "aggregator_trains", "fl_rounds",
                 "local_epochs", "batch_size", "lr", "lambda_aux", "early_exit_cl"),
    "experiments": ("asr_ratios", "top_k"),
    "run": ("master_seed",),
}

_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig)}
_COUNTS = ("n_ap", "n_ris", "n_ue", "n_rb", "ap_antennas", "ue_antennas", "ris_rows",
           "ris_cols", "n_phase_configs", "n_taps", "n_fl_clients", "local_epochs",
           "batch_size", "ue_chunk", "top_k")


def _check(cond: bool, name: str, detail: str = "") -> None:
    if not cond:
        raise ConfigError(f"{name}{': ' + detail if detail else ''}")


def validate(cfg: ScenarioConfig) -> None:
    for name in _COUNTS:
        value = getattr(cfg, name)
        _check(isinstance(value, int) and value >= 1, f"{name} must be a count >= 1",
               repr(value))
    _check(cfg.fl_rounds >= 0, "fl_rounds must be >= 0")
    _check(0.0 < cfg.legit_fraction <= 1.0, "legit_fraction out of range",
           repr(cfg.legit_fraction))
    _check(cfg.n_fl_clients <= cfg.n_ap, "n_fl_clients <= n_ap violated",
           f"{cfg.n_fl_clients} > {cfg.n_ap}")
    for cl in cfg.early_exit_cl:
        _check(0.5 <= cl < 1.0, "early_exit_cl out of range [0.5, 1)", repr(cl))
    _check(cfg.n_rb * 12 * cfg.scs_khz * 1e3 <= cfg.bandwidth_mhz * 1e6,
           "bandwidth consistency violated", "n_rb * 12 * scs exceeds bandwidth")
    _check(cfg.bandwidth_mhz > 0 and cfg.carrier_ghz > 0 and cfg.scs_khz > 0,
           "radio quantities must be positive")
    _check(len(cfg.area_m) == 2 and min(cfg.area_m) > 0, "area_m must be two positive extents")
    lo, hi = cfg.eve_power_range_dbm
    _check(cfg.p_lu_dbm < lo <= hi, "eavesdropper power must exceed legitimate power",
           f"range {cfg.eve_power_range_dbm} vs p_lu {cfg.p_lu_dbm}")
    _check(cfg.exponent_los >= 2.0 and cfg.exponent_nlos >= cfg.exponent_los,
           "path-loss exponents must satisfy 2 <= los <= nlos")
    _check(cfg.shadow_sigma_los_db >= 0 and cfg.shadow_sigma_nlos_db >= 0,
           "shadowing sigma must be >= 0")
    _check(cfg.d_clutter_m > 0, "d_clutter_m must be positive")
    _check(0.0 <= cfg.ap_jitter < 0.5, "ap_jitter must be in [0, 0.5)")
    _check(0.0 < cfg.train_ratio < 1.0, "train_ratio must be in (0, 1)")
    _check(0.0 <= cfg.client_alpha <= 1.0, "client_alpha must be in [0, 1]")
    _check(cfg.wideband in ("mean", "geometric"), "wideband must be 'mean' or 'geometric'")
    _check(cfg.power_feature in ("estimated", "reported"),
           "power_feature must be 'estimated' or 'reported'")
    _check(cfg.ris_plane in ("distance", "x"), "ris_plane must be 'distance' or 'x'")
    _check(cfg.lr > 0 and cfg.lambda_aux >= 0, "lr must be > 0 and lambda_aux >= 0")
    _check(all(r >= 1.0 for r in cfg.asr_ratios), "asr_ratios must be >= 1")
    _check(isinstance(cfg.master_seed, int) and 0 <= cfg.master_seed <= MAX_SEED,
           "master_seed out of range [0, 2^63)")


def _coerce(name: str, value: Any) -> Any:
    default = _FIELDS[name].default
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"key '{name}' expects a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"key '{name}' expects an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"key '{name}' expects a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"key '{name}' expects a list of numbers, got {value!r}")
        return tuple(float(v) for v in value)
    if not isinstance(value, str):
        raise ConfigError(f"key '{name}' expects a string, got {value!r}")
    return value


def load_config(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Parse a TOML document; absent keys keep the values of ``base``."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config parse failure: {exc}") from exc
    changes: dict[str, Any] = {}
    for section, table in doc.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section '{section}'")
        if not isinstance(table, dict):
            raise ConfigError(f"'{section}' must be a table")
        for key, value in table.items():
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key '{section}.{key}'")
            changes[key] = _coerce(key, value)
    return dataclasses.replace(base or ScenarioConfig(), **changes)


def dump_config(cfg: ScenarioConfig) -> str:
    doc = {}
    for section, names in SECTIONS.items():
        doc[section] = {n: list(v) if isinstance(v := getattr(cfg, n), tuple) else v
                        for n in names}
    return tomli_w.dumps(doc)


def noise_power_dbm(cfg: ScenarioConfig) -> float:
    """Thermal noise over the full bandwidth plus the receiver noise figure."""
    return -174.0 + 10.0 * math.log10(cfg.bandwidth_mhz * 1e6) + cfg.noise_figure_db


def thermal_noise_dbm(bandwidth_hz: float, noise_figure_db: float) -> float:
    return -174.0 + 10.0 * math.log10(bandwidth_hz) + noise_figure_db


@dataclass(frozen=True)
class RngStream:
    stream_id: str
    derived_seed: int
    master_seed: int = field(repr=False, default=0)

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(self.derived_seed)


def derive_stream(cfg: ScenarioConfig | int, stream_id: str) -> RngStream:
    """Derive a named, independent random stream from the master seed.

    The derived seed is the first 8 bytes of BLAKE2b over ``"<seed>/<id>"``,
    so it depends on nothing but the pair.
    """
    if not stream_id:
        raise ValueError("stream_id must be nonempty")
    seed = cfg if isinstance(cfg, int) else cfg.master_seed
    digest = hashlib.blake2b(f"{seed}/{stream_id}".encode(), digest_size=8).digest()
    return RngStream(stream_id, int.from_bytes(digest, "little"), seed)


def rng_for(cfg: ScenarioConfig | int, stream_id: str) -> np.random.Generator:
    return derive_stream(cfg, stream_id).generator()


def desk_scale(cfg: ScenarioConfig | None = None) -> ScenarioConfig:
    """Laptop-sized variant: 150 UEs, 8 RIS phases, 10 FL rounds."""
    return (cfg or ScenarioConfig()).replace(n_ue=150, n_phase_configs=8, fl_rounds=10)
