import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from risguard.scenario import ScenarioConfig, rng_for
from risguard.topology import (SnrTable, TopologyError, aggregator_ap, associate, place_entities,
                               select_fl_clients, topology_csv)


@pytest.fixture(scope="module")
def default_topo():
    cfg = ScenarioConfig()
    return cfg, place_entities(cfg, rng_for(cfg, "topology"))


def test_default_counts_and_heights(default_topo):
    cfg, topo = default_topo
    assert (topo.n_ap, topo.n_ris, topo.n_ue) == (18, 3, 500)
    assert int((~topo.ue_is_eve).sum()) == 350 and int(topo.ue_is_eve.sum()) == 150
    assert np.all(topo.ap_pos[:, 2] == 8.0) and np.all(topo.ue_pos[:, 2] == 1.5)
    assert np.all(topo.ue_power_dbm[~topo.ue_is_eve] == 23.0)
    assert np.all(topo.ue_power_dbm[topo.ue_is_eve] > 23.0)
    assert np.all(topo.ue_power_dbm <= 30.0)


def test_entities_inside_area(default_topo):
    cfg, topo = default_topo
    w, h = cfg.area_m
    for pos in (topo.ap_pos, topo.ue_pos, topo.ris_pos):
        assert np.all((pos[:, 0] >= 0) & (pos[:, 0] <= w) & (pos[:, 1] >= 0) & (pos[:, 1] <= h))


def test_ris_on_walls_facing_inward(default_topo):
    cfg, topo = default_topo
    w, h = cfg.area_m
    centre = np.array([w / 2, h / 2])
    for p, n in zip(topo.ris_pos, topo.ris_normal):
        on_wall = min(p[0], w - p[0], p[1], h - p[1]) == 0.0
        assert on_wall
        assert np.dot(centre - p[:2], n[:2]) > 0
        assert np.isclose(np.linalg.norm(n), 1.0)


def test_ris_maximises_min_distance_to_aps(default_topo):
    cfg, topo = default_topo
    # the first panel is the wall point farthest (min-distance) from all APs
    w, h = cfg.area_m
    xs = np.arange(0.5, w, 1.0)
    ys = np.arange(0.5, h, 1.0)
    cand = np.concatenate([np.column_stack([xs, np.zeros_like(xs)]),
                           np.column_stack([xs, np.full_like(xs, h)]),
                           np.column_stack([np.zeros_like(ys), ys]),
                           np.column_stack([np.full_like(ys, w), ys])])
    cand = np.column_stack([cand, np.full(len(cand), cfg.ris_height_m)])
    best = max(np.min(np.linalg.norm(topo.ap_pos - c, axis=1)) for c in cand)
    first = np.min(np.linalg.norm(topo.ap_pos - topo.ris_pos[0], axis=1))
    assert first == pytest.approx(best, abs=1e-12)


def test_single_legit_ue():
    cfg = ScenarioConfig(n_ue=1, legit_fraction=1.0)
    topo = place_entities(cfg, rng_for(cfg, "topology"))
    assert topo.n_ue == 1 and not topo.ue_is_eve[0]


def test_same_seed_identical():
    cfg = ScenarioConfig(n_ue=50)
    a = place_entities(cfg, rng_for(cfg, "topology"))
    b = place_entities(cfg, rng_for(cfg, "topology"))
    assert a.ue_pos.tobytes() == b.ue_pos.tobytes() and a.ap_pos.tobytes() == b.ap_pos.tobytes()
    assert topology_csv(a) == topology_csv(b)


def test_legit_fraction_only_changes_labels():
    cfg = ScenarioConfig(n_ue=60)
    a = place_entities(cfg, rng_for(cfg, "topology"))
    b = place_entities(cfg.replace(legit_fraction=0.5), rng_for(cfg, "topology"))
    assert np.array_equal(a.ue_pos, b.ue_pos) and np.array_equal(a.ap_pos, b.ap_pos)
    # eavesdropper sets are nested: more eves at lower legit fraction
    assert np.all(b.ue_is_eve[a.ue_is_eve])


@settings(max_examples=60, deadline=None)
@given(n_ue=st.integers(1, 400), frac=st.floats(0.01, 1.0))
def test_eve_count_exact(n_ue, frac):
    cfg = ScenarioConfig(n_ue=n_ue, legit_fraction=frac, n_ap=4, area_m=(20.0, 10.0))
    topo = place_entities(cfg, rng_for(cfg, "topology"))
    assert int((~topo.ue_is_eve).sum()) == cfg.n_legit == int(np.floor(frac * n_ue + 0.5))


def test_area_too_small():
    cfg = ScenarioConfig(area_m=(10.0, 5.0))
    with pytest.raises(TopologyError, match="too small"):
        place_entities(cfg, rng_for(cfg, "topology"))


def test_node_ids():
    cfg = ScenarioConfig(n_ue=5, n_ap=4, area_m=(20.0, 10.0))
    topo = place_entities(cfg, rng_for(cfg, "topology"))
    assert topo.node("AP", 3).index == 3
    with pytest.raises(TopologyError):
        topo.node("AP", 4)
    with pytest.raises(TopologyError):
        topo.node("XX", 0)


def _toy_topo(n_ue=1, n_ap=2, n_ris=1):
    cfg = ScenarioConfig(n_ue=n_ue, n_ap=n_ap, n_ris=n_ris, area_m=(20.0, 10.0),
                         n_fl_clients=1, legit_fraction=1.0)
    return place_entities(cfg, rng_for(cfg, "topology"))


def test_associate_argmax_and_tie():
    topo = _toy_topo()
    t = SnrTable(np.array([[[10.0], [12.0]]]), np.array([[0.0]]))
    assert associate(topo, t).serving_ap[0] == 1
    t = SnrTable(np.array([[[10.0], [10.0]]]), np.array([[0.0]]))
    assert associate(topo, t).serving_ap[0] == 0


def test_associate_matches_exhaustive_oracle(rng):
    topo = _toy_topo(n_ue=5, n_ap=4, n_ris=3)
    t = SnrTable(rng.normal(size=(5, 4, 3)).round(1), rng.normal(size=(5, 3)).round(1))
    a = associate(topo, t)
    for u in range(5):
        best_r, best_v = 0, -np.inf
        for r in range(3):
            if t.ris_db[u, r] > best_v:
                best_r, best_v = r, t.ris_db[u, r]
        best_a, best_s = 0, -np.inf
        for ap in range(4):
            if t.ap_ris_db[u, ap, best_r] > best_s:
                best_a, best_s = ap, t.ap_ris_db[u, ap, best_r]
        assert (a.serving_ris[u], a.serving_ap[u]) == (best_r, best_a)
        # optimality: no AP strictly better
        assert np.all(a.rx_snr_db[u] <= a.rx_snr_db[u, a.serving_ap[u]])


def test_associate_rejects_incomplete_table():
    topo = _toy_topo(n_ue=2)
    with pytest.raises(TopologyError):
        associate(topo, SnrTable(np.zeros((1, 2, 1)), np.zeros((1, 1))))
    bad = np.zeros((2, 2, 1))
    bad[1, 0, 0] = np.nan
    with pytest.raises(TopologyError):
        associate(topo, SnrTable(bad, np.zeros((2, 1))))


def test_select_clients_default(default_topo):
    cfg, topo = default_topo
    chosen = select_fl_clients(topo, cfg.n_fl_clients)
    assert len(chosen) == 3 and chosen == sorted(chosen)
    assert select_fl_clients(topo, topo.n_ap) == list(range(topo.n_ap))
    assert 0 <= aggregator_ap(topo) < topo.n_ap
    with pytest.raises(TopologyError):
        select_fl_clients(topo, 19)


def test_select_clients_exhaustive_oracle():
    cfg = ScenarioConfig(n_ap=5, n_ris=2, n_ue=3, area_m=(50.0, 20.0), n_fl_clients=2)
    topo = place_entities(cfg, rng_for(cfg, "topology"))
    centre = np.array([25.0, 10.0])

    def score(a):
        p = topo.ap_pos[a]
        d_ris = np.mean([np.linalg.norm(p - r) for r in topo.ris_pos])
        return 0.5 * np.linalg.norm(p[:2] - centre) + 0.5 * d_ris

    for k in range(1, 6):
        best = min(itertools.combinations(range(5), k), key=lambda c: sum(score(a) for a in c))
        assert select_fl_clients(topo, k) == sorted(best)


def test_select_clients_relabel_invariant(default_topo):
    _, topo = default_topo
    perm = np.random.default_rng(3).permutation(topo.n_ap)
    shuffled = replace(topo, ap_pos=topo.ap_pos[perm])
    a = {tuple(topo.ap_pos[i]) for i in select_fl_clients(topo, 3)}
    b = {tuple(shuffled.ap_pos[i]) for i in select_fl_clients(shuffled, 3)}
    assert a == b


def test_topology_csv_columns(default_topo):
    _, topo = default_topo
    lines = topology_csv(topo).splitlines()
    assert lines[0] == "kind,index,x,y,z,is_eve,power_dbm"
    assert len(lines) == 1 + 18 + 3 + 500
