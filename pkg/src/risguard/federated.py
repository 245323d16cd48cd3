"""Synchronous FedAvg across AP clients.

Clients only ever return a :class:`ClientUpdate`, whose weights travel as
encoded checkpoint bytes, never raw samples.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Dataset, fit_normalization, model_inputs, partition_clients, split
from .nn import checkpoint
from .nn.model import Params, init_params
from .nn.training import Metrics, evaluate, train_local
from .scenario import ScenarioConfig, rng_for
from .topology import Topology, aggregator_ap, select_fl_clients

log = logging.getLogger(__name__)


class FederationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClientUpdate:
    client_ap: int
    payload: bytes  # float64 checkpoint encoding of the local weights
    n_samples: int
    round: int
    mean_loss: float

    @property
    def params(self) -> Params:
        return checkpoint.decode(self.payload)


@dataclass(frozen=True)
class RoundRecord:
    round: int
    clients: tuple[int, ...]
    n_samples: tuple[int, ...]
    client_loss: tuple[float, ...]
    test: dict | None = None


@dataclass(frozen=True)
class RoundState:
    round: int
    params: Params
    history: tuple[RoundRecord, ...] = ()
    epochs: int = 2
    batch_size: int = 32
    lr: float = 1e-3
    lambda_aux: float = 0.3


def fedavg_aggregate(updates: list[ClientUpdate]) -> Params:
    """Sample-count weighted mean of the client weights.

    Updates are put in a canonical order first and the mean is formed as
    ``ref + sum_k w_k (W_k - ref)``, which makes the result independent of the
    arrival order, exact for a single client, and exact when all clients agree.
    """
    if not updates:
        raise FederationError("no client updates to aggregate")
    ordered = sorted(updates, key=lambda u: (u.client_ap, u.n_samples, u.payload))
    decoded = [u.params for u in ordered]
    keys = list(decoded[0])
    for p in decoded[1:]:
        if list(p) != keys:
            raise FederationError("client updates carry different parameter keys")
    total = sum(u.n_samples for u in ordered)
    weights = [u.n_samples / total for u in ordered]
    ref = decoded[0]
    out = {}
    for k in keys:
        acc = np.zeros_like(ref[k])
        for w, p in zip(weights, decoded):
            acc += w * (p[k] - ref[k])
        out[k] = ref[k] + acc
    return out


def client_train(global_payload: bytes, shard: Dataset, round_index: int, epochs: int,
                 batch_size: int, rng: np.random.Generator, lr: float, lambda_aux: float
                 ) -> ClientUpdate:
    """Local training at one AP; consumes broadcast bytes, emits an update."""
    params = checkpoint.decode(global_payload)
    params, losses = train_local(params, model_inputs(shard), shard.y.astype(float), epochs,
                                 batch_size, rng, lr, lambda_aux)
    mean_loss = float(np.mean(losses)) if losses else float("nan")
    return ClientUpdate(shard.owner, checkpoint.encode(params, 8), len(shard), round_index, mean_loss)


def run_round(state: RoundState, shards: list[Dataset], seed: int | ScenarioConfig,
              test: Dataset | None = None) -> RoundState:
    """Broadcast, train every client, aggregate; a failure leaves ``state`` untouched."""
    if not shards:
        raise FederationError("no client shards")
    r = state.round
    payload = checkpoint.encode(state.params, 8)
    updates = []
    for shard in shards:
        if len(shard) == 0:
            raise FederationError(f"client {shard.owner} has an empty shard")
        # every client shuffles from the same per-round stream
        rng = rng_for(seed, f"shuffle:round_{r}")
        updates.append(client_train(payload, shard, r, state.epochs, state.batch_size, rng,
                                    state.lr, state.lambda_aux))
    params = fedavg_aggregate(updates)
    test_metrics = evaluate(params, model_inputs(test), test.y).as_dict() if test is not None and len(test) else None
    record = RoundRecord(r, tuple(u.client_ap for u in updates), tuple(u.n_samples for u in updates),
                         tuple(u.mean_loss for u in updates), test_metrics)
    log.debug("round %d: losses %s", r, record.client_loss)
    return replace(state, round=r + 1, params=params, history=state.history + (record,))


@dataclass
class TrainingResult:
    params: Params
    history: tuple[RoundRecord, ...]
    train: Dataset
    test: Dataset
    clients: list[int]
    shards: list[Dataset] = field(repr=False)
    metrics: Metrics | None = None

    def round_log(self) -> str:
        lines = []
        for rec in self.history:
            acc = rec.test["accuracy"] if rec.test else None
            for ap, n, lo in zip(rec.clients, rec.n_samples, rec.client_loss):
                lines.append(json.dumps({"round": rec.round, "client": ap, "n_samples": n,
                                         "mean_loss": lo, "global_accuracy": acc}, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")


def initial_state(cfg: ScenarioConfig) -> RoundState:
    return RoundState(0, init_params(rng_for(cfg, "init")), (), cfg.local_epochs, cfg.batch_size,
                      cfg.lr, cfg.lambda_aux)


def fl_clients(cfg: ScenarioConfig, topo: Topology) -> list[int]:
    clients = select_fl_clients(topo, cfg.n_fl_clients, cfg.client_alpha)
    if cfg.aggregator_trains:
        clients = sorted(set(clients) | {aggregator_ap(topo)})
    return clients


def run_training(cfg: ScenarioConfig, dataset: Dataset, topo: Topology,
                 rounds: int | None = None) -> TrainingResult:
    """Split, normalise on train, shard by nearest client AP, and run R FedAvg rounds."""
    train, test = split(dataset, cfg.train_ratio, rng_for(cfg, "split"))
    norm = fit_normalization(train)
    train, test = replace(train, norm=norm), replace(test, norm=norm)
    clients = fl_clients(cfg, topo)
    shards = partition_clients(train, clients, topo)
    state = initial_state(cfg)
    for _ in range(cfg.fl_rounds if rounds is None else rounds):
        state = run_round(state, shards, cfg, test)
    metrics = evaluate(state.params, model_inputs(test), test.y) if len(test) else None
    return TrainingResult(state.params, state.history, train, test, clients, shards, metrics)
