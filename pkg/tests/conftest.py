import numpy as np
import pytest

from risguard.channel import compute_gain_table, phase_configs, snr_table
from risguard.dataset import generate_dataset
from risguard.nn.model import Architecture
from risguard.scenario import ScenarioConfig, rng_for
from risguard.topology import associate, place_entities

# 8x8 CSI images keep the three pooling stages non-empty (8 -> 4 -> 2 -> 1)
SMALL = dict(n_ap=4, n_ris=2, n_ue=40, ap_antennas=8, n_rb=8, ris_rows=2, ris_cols=3,
             area_m=(40.0, 20.0), n_fl_clients=2, fl_rounds=2, local_epochs=1,
             n_phase_configs=3, batch_size=8, asr_ratios=(1.0, 2.0, 3.5), top_k=2)
TOY_ARCH = Architecture(input_shape=(8, 10, 9), widths=(3, 4, 5), hidden=3)


@pytest.fixture
def small_cfg():
    return ScenarioConfig(**SMALL)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_pipeline(cfg, phase_id=0):
    topo = place_entities(cfg, rng_for(cfg, "topology"))
    ris = phase_configs(cfg, phase_id)
    gains = compute_gain_table(cfg, topo, ris, phase_id)
    assoc = associate(topo, snr_table(cfg, topo, gains))
    ds = generate_dataset(cfg, topo, assoc, ris, phase_id)
    return topo, ris, gains, assoc, ds


@pytest.fixture
def small_world(small_cfg):
    return small_pipeline(small_cfg)


# acceptance outcomes, one line per criterion in the terminal summary
ACCEPTANCE: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
            terminalreporter.write_line(ACCEPTANCE[key])
