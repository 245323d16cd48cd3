"""Evaluation campaigns: RIS phase sweep, early-exit study, ASR vs L-to-E ratio."""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import GainTable, compute_gain_table, phase_configs, snr_table
from .dataset import Dataset, NormStats, generate_dataset, model_inputs
from .federated import TrainingResult, run_training
from .nn import checkpoint
from .nn.model import EarlyExitPolicy, Params, predict
from .nn.training import evaluate
from .scenario import ScenarioConfig, rng_for
from .secrecy import secrecy_csv, secrecy_report, sinr_matrix
from .topology import Association, Topology, associate, place_entities

log = logging.getLogger(__name__)

METRICS = ("accuracy", "precision", "recall", "f1")


@dataclass(frozen=True)
class AsrPoint:
    ratio: float
    n_legit: int
    n_eve: int
    asr_true: float | None
    asr_ml: float | None
    skipped: bool = False  # no eavesdroppers at this ratio


@dataclass
class PhaseResult:
    phase_id: int
    metrics: dict | None = None
    asr: list[AsrPoint] = field(default_factory=list)
    exits: list[dict] = field(default_factory=list)
    rounds: list[dict] = field(default_factory=list)
    round_log: str = ""
    secrecy_csv: str = ""
    checkpoint: bytes = field(default=b"", repr=False)  # float64 codec
    test: Dataset | None = field(default=None, repr=False)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def accuracy(self) -> float:
        return self.metrics["accuracy"] if self.metrics else float("nan")

    @property
    def params(self) -> Params:
        return checkpoint.decode(self.checkpoint)

    def asr_by_ratio(self, kind: str = "true") -> dict[float, float]:
        key = "asr_true" if kind == "true" else "asr_ml"
        return {p.ratio: getattr(p, key) for p in self.asr if not p.skipped}

    def summary(self) -> dict:
        """Plain, deterministic record of the phase (used for hashing and JSON output)."""
        return {
            "phase_id": self.phase_id, "error": self.error, "metrics": self.metrics,
            "asr": [p.__dict__ for p in self.asr], "exits": self.exits,
            "checkpoint_sha256": hashlib.sha256(self.checkpoint).hexdigest(),
        }


@dataclass
class CampaignReport:
    cfg: ScenarioConfig
    results: list[PhaseResult]
    exit_table: list[dict] = field(default_factory=list)
    asr_curves: dict[int, list[AsrPoint]] = field(default_factory=dict)
    manifest: dict[str, str] = field(default_factory=dict)

    @property
    def completed(self) -> list[PhaseResult]:
        return [r for r in self.results if r.ok]

    @property
    def failed(self) -> list[PhaseResult]:
        return [r for r in self.results if not r.ok]

    @property
    def incomplete(self) -> bool:
        return bool(self.failed)

    def top_k(self, k: int) -> list[int]:
        return top_k(self.results, k)

    def distribution(self) -> dict:
        return metric_distribution(self.results)

    def results_hash(self) -> str:
        return results_hash(self.results)


def results_hash(results: list[PhaseResult]) -> str:
    blob = json.dumps([r.summary() for r in sorted(results, key=lambda r: r.phase_id)],
                      sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


# -- per-phase pipeline -------------------------------------------------------

@dataclass
class PhaseContext:
    topo: Topology
    gains: GainTable
    assoc: Association


def phase_context(cfg: ScenarioConfig, phase_id: int) -> PhaseContext:
    topo = place_entities(cfg, rng_for(cfg, "topology"))
    gains = compute_gain_table(cfg, topo, phase_configs(cfg, phase_id), phase_id)
    return PhaseContext(topo, gains, associate(topo, snr_table(cfg, topo, gains)))


def ratio_topology(cfg: ScenarioConfig, ratio: float) -> tuple[ScenarioConfig, Topology]:
    """Same deployment with the legitimate share set to ratio / (ratio + 1)."""
    if ratio < 1.0:
        raise ValueError(f"L-to-E ratio {ratio} below 1")
    rcfg = cfg.replace(legit_fraction=ratio / (ratio + 1.0))
    return rcfg, place_entities(rcfg, rng_for(rcfg, "topology"))


def asr_point(sinr_ua: np.ndarray, serving_ap: np.ndarray, is_eve: np.ndarray,
              predicted_eve: np.ndarray | None, ratio: float, per_user: bool = False) -> AsrPoint:
    """True-label and predicted-label ASR for one deployment.

    Predicted labels only decide who counts as an adversary; the legitimate side
    is always the true legitimate set.
    """
    is_eve = np.asarray(is_eve, dtype=bool)
    n_eve = int(is_eve.sum())
    if n_eve == 0:
        return AsrPoint(ratio, int(is_eve.size), 0, None, None, skipped=True)
    legit = ~is_eve
    true = secrecy_report(sinr_ua, serving_ap, legit, is_eve, per_user).asr
    ml = None
    if predicted_eve is not None:
        ml = secrecy_report(sinr_ua, serving_ap, legit, np.asarray(predicted_eve, dtype=bool),
                            per_user).asr
    return AsrPoint(ratio, int(legit.sum()), n_eve, true, ml)


def phase_asr(cfg: ScenarioConfig, phase_id: int, ctx: PhaseContext, ratios,
              params: Params | None = None, norm: NormStats | None = None) -> list[AsrPoint]:
    """ASR at each ratio; with a model, also the curve using its predicted eavesdroppers."""
    ris = phase_configs(cfg, phase_id)
    points = []
    for ratio in sorted(ratios):
        rcfg, topo = ratio_topology(cfg, ratio)
        sinr_ua = sinr_matrix(rcfg, topo, ctx.assoc, ctx.gains)
        pred = None
        if params is not None and topo.ue_is_eve.any():
            ds = generate_dataset(rcfg, topo, ctx.assoc, ris, phase_id)
            pred = predict(params, model_inputs(ds, norm)) >= 0.5
        points.append(asr_point(sinr_ua, ctx.assoc.serving_ap, topo.ue_is_eve, pred, ratio,
                                cfg.asr_per_user))
        if points[-1].skipped:
            log.warning("phase %d: ratio %g leaves no eavesdroppers, point skipped", phase_id, ratio)
    return points


def exit_rows(params: Params, x: np.ndarray, y: np.ndarray, cls) -> list[dict]:
    rows = []
    for cl in cls:
        m = evaluate(params, x, y, EarlyExitPolicy(cl))
        rows.append({"cl": cl, "accuracy": m.accuracy, "exit_rate": m.exit_rate,
                     "mac_ratio": m.mac_ratio})
    return rows


def run_phase(cfg: ScenarioConfig, phase_id: int) -> PhaseResult:
    ctx = phase_context(cfg, phase_id)
    ds = generate_dataset(cfg, ctx.topo, ctx.assoc, phase_configs(cfg, phase_id), phase_id)
    trained: TrainingResult = run_training(cfg, ds, ctx.topo)
    test = trained.test
    x = model_inputs(test)
    params = trained.params
    asr = phase_asr(cfg, phase_id, ctx, cfg.asr_ratios, params, test.norm)
    sinr_ua = sinr_matrix(cfg, ctx.topo, ctx.assoc, ctx.gains)
    report = secrecy_report(sinr_ua, ctx.assoc.serving_ap, ~ctx.topo.ue_is_eve, ctx.topo.ue_is_eve,
                            cfg.asr_per_user)
    return PhaseResult(
        phase_id=phase_id,
        metrics=trained.metrics.as_dict(),
        asr=asr,
        exits=exit_rows(params, x, test.y, cfg.early_exit_cl),
        rounds=[{"round": r.round, "test": r.test} for r in trained.history],
        round_log=trained.round_log(),
        secrecy_csv=secrecy_csv(report, phase_id),
        checkpoint=checkpoint.encode(params, 8),
        test=test,
    )


def _safe_phase(cfg: ScenarioConfig, phase_id: int) -> PhaseResult:
    try:
        return run_phase(cfg, phase_id)
    except Exception as exc:  # recorded, the sweep carries on
        log.error("phase %d failed: %s", phase_id, exc)
        return PhaseResult(phase_id, error=f"{type(exc).__name__}: {exc}")


def run_phase_sweep(cfg: ScenarioConfig, jobs: int = 1, phase_ids=None) -> list[PhaseResult]:
    """Train and evaluate one model per RIS phase configuration.

    All randomness is keyed by phase id, so ``jobs`` changes only the wall time.
    """
    ids = list(range(cfg.n_phase_configs)) if phase_ids is None else sorted(set(phase_ids))
    if not ids:
        raise ValueError("no phases to run")
    if jobs <= 1 or len(ids) == 1:
        results = [_safe_phase(cfg, p) for p in ids]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(ids))) as pool:
            results = list(pool.map(_safe_phase, [cfg] * len(ids), ids))
    return sorted(results, key=lambda r: r.phase_id)


# -- summaries ----------------------------------------------------------------

def quantiles(values) -> dict[str, float]:
    """min / Q1 / median / Q3 / max with linear interpolation between order statistics
    (position (n - 1) q in the sorted sample, numpy's default 'linear' rule)."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("no values")
    q = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0], method="linear")
    return dict(zip(("min", "q1", "median", "q3", "max"), map(float, q)))


def metric_distribution(results: list[PhaseResult]) -> dict:
    """Quartile table per metric over completed phases; flagged partial below 4 phases."""
    done = [r for r in results if r.ok]
    table = {"n": len(done), "partial": len(done) < 4, "metrics": {}}
    if not done:
        return table
    for m in METRICS:
        vals = [r.metrics[m] for r in done]
        if len(done) < 4:
            table["metrics"][m] = {"min": min(vals), "max": max(vals), "median": float(np.median(vals))}
        else:
            table["metrics"][m] = quantiles(vals)
    return table


def top_k(results: list[PhaseResult], k: int) -> list[int]:
    """Phase ids by descending accuracy; ties go to the lower phase id."""
    done = sorted((r for r in results if r.ok), key=lambda r: (-r.accuracy, r.phase_id))
    return [r.phase_id for r in done[:k]]


def early_exit_study(params: Params, test: Dataset, cls, allowed=None) -> list[dict]:
    """Accuracy, exit rate and expected-MAC ratio per CL, plus a no-exit baseline row."""
    cls = list(cls)
    if allowed is not None:
        extra = sorted(set(cls) - set(allowed) - {0.5})
        if extra:
            raise ValueError(f"confidence levels {extra} not in the configured set")
    x = model_inputs(test)
    base = evaluate(params, x, test.y)
    rows = [{"cl": None, "accuracy": base.accuracy, "exit_rate": 0.0, "mac_ratio": 1.0}]
    return rows + exit_rows(params, x, test.y, cls)


def asr_vs_ratio_study(cfg: ScenarioConfig, models: dict[int, tuple[Params, NormStats | None]],
                       ratios) -> dict[int, list[AsrPoint]]:
    """ML-label and true-label ASR curves for each selected phase."""
    out = {}
    for phase_id in sorted(models):
        params, norm = models[phase_id]
        out[phase_id] = phase_asr(cfg, phase_id, phase_context(cfg, phase_id), ratios, params, norm)
    return out


def mean_curve(curves: dict[int, list[AsrPoint]], kind: str = "true") -> dict[float, float]:
    acc: dict[float, list[float]] = {}
    for pts in curves.values():
        for p in pts:
            if not p.skipped:
                acc.setdefault(p.ratio, []).append(p.asr_true if kind == "true" else p.asr_ml)
    return {r: float(np.mean(v)) for r, v in sorted(acc.items())}


def run_campaign(cfg: ScenarioConfig, jobs: int = 1, top: int | None = None) -> CampaignReport:
    results = run_phase_sweep(cfg, jobs)
    report = CampaignReport(cfg, results)
    ids = top_k(results, top or cfg.top_k)
    if ids:
        best = next(r for r in results if r.phase_id == ids[0])
        report.exit_table = early_exit_study(best.params, best.test, cfg.early_exit_cl)
        report.asr_curves = {r.phase_id: r.asr for r in results if r.phase_id in ids}
    return report


__all__ = [
    "AsrPoint", "CampaignReport", "PhaseContext", "PhaseResult", "asr_point", "asr_vs_ratio_study",
    "early_exit_study", "mean_curve", "metric_distribution", "phase_asr", "phase_context",
    "quantiles", "ratio_topology", "results_hash", "run_campaign", "run_phase",
    "run_phase_sweep", "top_k",
]
