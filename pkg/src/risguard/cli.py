"""``simulate``: generate, train, evaluate and report from the command line.

Desk-scale settings are the base unless ``--full`` is given; ``--config`` then
overrides individual keys and ``--seed`` the master seed.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .channel import phase_configs
from .dataset import (DatasetError, generate_dataset, load_dataset, model_inputs, save_dataset,
                      to_bytes)
from .experiments import (CampaignReport, asr_vs_ratio_study, early_exit_study, phase_context,
                          results_hash, run_phase_sweep, top_k)
from .federated import run_training
from .fileio import atomic_write, sha256_bytes, sha256_file
from .nn import checkpoint
from .nn.model import EarlyExitPolicy
from .nn.training import evaluate
from .report import asr_csv, emit_report, exit_csv, load_sweep, write_phase
from .scenario import ConfigError, ScenarioConfig, desk_scale, dump_config, load_config, rng_for
from .topology import place_entities, topology_csv

OUT_ENV = "RISGUARD_OUT"
log = logging.getLogger("risguard")


class CliError(RuntimeError):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML file overriding scenario keys")
    common.add_argument("--seed", type=int, help="master seed override")
    common.add_argument("--out", type=Path, default=Path(os.environ.get(OUT_ENV, "results")),
                        help=f"output directory (default ${OUT_ENV} or ./results)")
    common.add_argument("--full", action="store_true", help="full-scale defaults instead of desk scale")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for phase sweeps")
    common.add_argument("--print-config", action="store_true", help="print the effective config")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="simulate", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("gen-topology", parents=[common], help="place APs, RIS and UEs")
    s.set_defaults(func=cmd_gen_topology)

    s = sub.add_parser("gen-dataset", parents=[common], help="build the CSI dataset for one phase")
    s.add_argument("--phase", type=int, default=0)
    s.set_defaults(func=cmd_gen_dataset)

    s = sub.add_parser("train-fl", parents=[common], help="FedAvg training on a saved dataset")
    s.add_argument("--dataset", type=Path, help="dataset file (default OUT/dataset.csi)")
    s.set_defaults(func=cmd_train_fl)

    s = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint on a test split")
    s.add_argument("--checkpoint", type=Path, help="default OUT/checkpoint.rgck")
    s.add_argument("--test", type=Path, help="default OUT/test.csi")
    s.add_argument("--cl", type=_floats, default=None, help="early-exit confidence levels")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", parents=[common], help="one FL model per RIS phase configuration")
    s.add_argument("--phases", type=int, help="number of phase configurations")
    s.add_argument("--only", type=_ints, help="run only these phase ids")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("exit-study", parents=[common], help="early-exit table for the best phase")
    s.add_argument("--cl", type=_floats, default=None)
    s.set_defaults(func=cmd_exit_study)

    s = sub.add_parser("asr", parents=[common], help="secrecy rate vs L-to-E ratio for top phases")
    s.add_argument("--top", type=int, default=None)
    s.add_argument("--ratios", type=_floats, default=None)
    s.set_defaults(func=cmd_asr)

    s = sub.add_parser("report", parents=[common], help="tables, plots and summary from a sweep")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("inspect", parents=[common], help="describe an artifact file")
    s.add_argument("path", type=Path)
    s.set_defaults(func=cmd_inspect)
    return p


def effective_config(args) -> ScenarioConfig:
    base = ScenarioConfig() if args.full else desk_scale()
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise CliError(f"cannot read config {args.config}: {exc.strerror}") from exc
        cfg = load_config(text, base)
    else:
        cfg = base
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if getattr(args, "phases", None) is not None:
        changes["n_phase_configs"] = args.phases
    return cfg.replace(**changes) if changes else cfg


def _require(path: Path, what: str) -> Path:
    if not path.is_file():
        raise CliError(f"{what} not found: {path}")
    return path


# -- commands ---------------------------------------------------------------------

def cmd_gen_topology(cfg, args) -> str:
    topo = place_entities(cfg, rng_for(cfg, "topology"))
    path = atomic_write(args.out / "topology.csv", topology_csv(topo))
    return f"topology: {topo.n_ap} APs, {topo.n_ris} RIS, {topo.n_ue} UEs -> {path} sha256={sha256_file(path)}"


def cmd_gen_dataset(cfg, args) -> str:
    ctx = phase_context(cfg, args.phase)
    ds = generate_dataset(cfg, ctx.topo, ctx.assoc, phase_configs(cfg, args.phase), args.phase)
    atomic_write(args.out / "topology.csv", topology_csv(ctx.topo))
    path = save_dataset(ds, args.out / "dataset.csi")
    legit, eve = ds.class_counts()
    return f"dataset: {len(ds)} samples ({legit} legit / {eve} eve) -> {path} sha256={sha256_file(path)}"


def cmd_train_fl(cfg, args) -> str:
    path = _require(args.dataset or args.out / "dataset.csi", "dataset file")
    ds = load_dataset(path)
    topo = place_entities(cfg, rng_for(cfg, "topology"))
    if topo.n_ue != len(ds):
        raise CliError(f"{path} holds {len(ds)} samples but the config places {topo.n_ue} UEs")
    res = run_training(cfg, ds, topo)
    ck = checkpoint.save_checkpoint(res.params, args.out / "checkpoint.rgck", width=8)
    save_dataset(res.test, args.out / "test.csi")
    atomic_write(args.out / "round_log.jsonl", res.round_log())
    atomic_write(args.out / "metrics.json", json.dumps(res.metrics.as_dict(), indent=1, sort_keys=True) + "\n")
    return (f"train-fl: clients {res.clients}, {len(res.history)} rounds, test accuracy "
            f"{res.metrics.accuracy:.4f} -> {ck} sha256={sha256_file(ck)}")


def cmd_evaluate(cfg, args) -> str:
    params = checkpoint.load_checkpoint(_require(args.checkpoint or args.out / "checkpoint.rgck", "checkpoint"))
    test = load_dataset(_require(args.test or args.out / "test.csi", "test split"))
    x = model_inputs(test)
    result = {"full": evaluate(params, x, test.y).as_dict()}
    for cl in args.cl if args.cl is not None else cfg.early_exit_cl:
        result[f"cl={cl:g}"] = evaluate(params, x, test.y, EarlyExitPolicy(cl)).as_dict()
    atomic_write(args.out / "evaluation.json", json.dumps(result, indent=1, sort_keys=True) + "\n")
    return f"evaluate: {len(test)} samples, accuracy {result['full']['accuracy']:.4f}"


def cmd_sweep(cfg, args) -> str:
    ids = args.only if args.only is not None else range(cfg.n_phase_configs)
    bad = [i for i in ids if not 0 <= i < cfg.n_phase_configs]
    if bad:
        raise CliError(f"phase ids {bad} outside [0, {cfg.n_phase_configs})")
    results = run_phase_sweep(cfg, args.jobs, ids)
    for r in results:
        write_phase(r, args.out)
    all_results = load_sweep(args.out)
    record = {"n_phase_configs": cfg.n_phase_configs, "results_hash": results_hash(all_results),
              "completed": [r.phase_id for r in all_results if r.ok],
              "failed": {str(r.phase_id): r.error for r in all_results if not r.ok}}
    atomic_write(args.out / "config.toml", dump_config(cfg))
    atomic_write(args.out / "sweep.json", json.dumps(record, indent=1, sort_keys=True) + "\n")
    failed = [r.phase_id for r in results if not r.ok]
    msg = (f"sweep: {len(results) - len(failed)}/{len(results)} phases completed, "
           f"results hash {record['results_hash']}")
    if failed:
        raise CliError(msg + f"; failed phases {failed}")
    return msg


def _best(results, k=1):
    ids = top_k(results, k)
    if not ids:
        raise CliError("no completed phases in the sweep")
    return ids


def cmd_exit_study(cfg, args) -> str:
    results = load_sweep(args.out)
    best = next(r for r in results if r.phase_id == _best(results)[0])
    cls = args.cl if args.cl is not None else cfg.early_exit_cl
    rows = early_exit_study(best.params, best.test, cls)
    atomic_write(args.out / "exit_study.csv", exit_csv(rows))
    cells = ", ".join(f"CL {r['cl']}: exit {r['exit_rate']:.2f} macs {r['mac_ratio']:.3f}"
                      for r in rows[1:])
    return f"exit-study on phase {best.phase_id}: {cells}"


def cmd_asr(cfg, args) -> str:
    results = load_sweep(args.out)
    ids = _best(results, args.top or cfg.top_k)
    ratios = args.ratios if args.ratios is not None else list(cfg.asr_ratios)
    by_id = {r.phase_id: r for r in results}
    models = {i: (by_id[i].params, by_id[i].test.norm) for i in ids}
    curves = asr_vs_ratio_study(cfg, models, ratios)
    atomic_write(args.out / "asr.csv", asr_csv(curves))
    return f"asr: phases {ids}, ratios {sorted(ratios)} -> {args.out / 'asr.csv'}"


def cmd_report(cfg, args) -> str:
    results = load_sweep(args.out)
    campaign = CampaignReport(cfg, results)
    ids = top_k(results, cfg.top_k)
    if ids:
        best = next(r for r in results if r.phase_id == ids[0])
        campaign.exit_table = early_exit_study(best.params, best.test, cfg.early_exit_cl)
        campaign.asr_curves = {r.phase_id: r.asr for r in results if r.phase_id in ids}
    manifest = emit_report(campaign, args.out / "report")
    return f"report: {len(manifest)} files -> {args.out / 'report'}"


def cmd_inspect(cfg, args) -> str:
    path = _require(args.path, "file")
    blob = path.read_bytes()
    head = blob[:4]
    if head == b"CSI1":
        ds = load_dataset(path)
        legit, eve = ds.class_counts()
        return (f"{path}: dataset split={ds.split} owner={ds.owner} samples={len(ds)} "
                f"shape={ds.x.shape[1:]} legit={legit} eve={eve} "
                f"normalised={ds.norm is not None} sha256={sha256_bytes(to_bytes(ds))}")
    if head == checkpoint.MAGIC:
        params = checkpoint.decode(blob)
        n = sum(v.size for v in params.values())
        return f"{path}: checkpoint {len(params)} tensors, {n} parameters, sha256={sha256_bytes(blob)}"
    return f"{path}: {len(blob)} bytes, unrecognised format, sha256={sha256_bytes(blob)}"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = effective_config(args)
        if args.print_config:
            sys.stdout.write(dump_config(cfg))
        if args.jobs < 1:
            raise CliError("--jobs must be >= 1")
        print(args.func(cfg, args))
    except (CliError, ConfigError, DatasetError, checkpoint.CheckpointError, OSError, ValueError) as exc:
        print(f"simulate {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
