"""Persist sweep outputs and render CSV tables, SVG plots and a text summary."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .dataset import from_bytes, to_bytes
from .experiments import AsrPoint, CampaignReport, PhaseResult, metric_distribution, top_k
from .fileio import atomic_write, sha256_file

PHASE_FILES = ("phase.json", "checkpoint.rgck", "test.csi", "round_log.jsonl", "secrecy.csv")


def phase_dir(outdir, phase_id: int) -> Path:
    return Path(outdir) / "phases" / f"phase_{phase_id:03d}"


def write_phase(result: PhaseResult, outdir) -> list[Path]:
    """Write one phase's files; depends only on that phase's result."""
    d = phase_dir(outdir, result.phase_id)
    record = result.summary() | {"rounds": result.rounds}
    paths = [atomic_write(d / "phase.json", json.dumps(record, indent=1, sort_keys=True) + "\n")]
    if result.ok:
        paths += [
            atomic_write(d / "checkpoint.rgck", result.checkpoint),
            atomic_write(d / "test.csi", to_bytes(result.test)),
            atomic_write(d / "round_log.jsonl", result.round_log),
            atomic_write(d / "secrecy.csv", result.secrecy_csv),
        ]
    return paths


def load_phase(d: Path) -> PhaseResult:
    try:
        rec = json.loads((d / "phase.json").read_text())
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read {d / 'phase.json'}: {exc}") from exc
    res = PhaseResult(rec["phase_id"], rec["metrics"], [AsrPoint(**p) for p in rec["asr"]],
                      rec["exits"], rec.get("rounds", []), error=rec["error"])
    if res.ok:
        res.checkpoint = (d / "checkpoint.rgck").read_bytes()
        res.test = from_bytes((d / "test.csi").read_bytes())
        res.round_log = (d / "round_log.jsonl").read_text()
        res.secrecy_csv = (d / "secrecy.csv").read_text()
    return res


def load_sweep(outdir) -> list[PhaseResult]:
    root = Path(outdir) / "phases"
    if not root.is_dir():
        raise FileNotFoundError(f"no sweep results under {root}")
    return [load_phase(d) for d in sorted(root.glob("phase_*")) if d.is_dir()]


# -- tables ---------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def metrics_csv(results: list[PhaseResult]) -> str:
    rows = []
    for r in results:
        m = r.metrics or {}
        rows.append([r.phase_id, *(m.get(k) for k in ("accuracy", "precision", "recall", "f1",
                                                     "recall_eve", "f1_eve")), r.error or ""])
    return _csv(["phase_id", "accuracy", "precision", "recall", "f1", "recall_eve", "f1_eve",
                 "error"], rows)


def quartile_csv(table: dict) -> str:
    cols = ("min", "q1", "median", "q3", "max")
    rows = [[m, *(q.get(c) for c in cols), table["partial"]] for m, q in table["metrics"].items()]
    return _csv(["metric", *cols, "partial"], rows)


def exit_csv(rows: list[dict]) -> str:
    return _csv(["cl", "accuracy", "exit_rate", "mac_ratio"],
                [[r["cl"], r["accuracy"], r["exit_rate"], r["mac_ratio"]] for r in rows])


def asr_csv(curves: dict[int, list[AsrPoint]]) -> str:
    rows = [[pid, p.ratio, p.n_legit, p.n_eve, p.asr_true, p.asr_ml, p.skipped]
            for pid, pts in sorted(curves.items()) for p in pts]
    return _csv(["phase_id", "ratio", "n_legit", "n_eve", "asr_true", "asr_ml", "skipped"], rows)


# -- plots ----------------------------------------------------------------------

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "risguard"  # stable element ids
    plt.rcParams["svg.fonttype"] = "path"
    return plt


def _save_svg(fig, path: Path) -> Path:
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    return atomic_write(path, buf.getvalue())


def plot_metric_box(results: list[PhaseResult], path: Path) -> Path:
    plt = _pyplot()
    done = [r for r in results if r.ok]
    names = ("accuracy", "precision", "recall", "f1")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.boxplot([[r.metrics[m] for r in done] for m in names], whis=(0, 100))
    ax.set_xticks(range(1, len(names) + 1), [n.capitalize() for n in names])
    ax.set_ylabel("score")
    ax.set_title(f"Test metrics over {len(done)} RIS phase configurations")
    ax.grid(axis="y", alpha=0.3)
    try:
        return _save_svg(fig, path)
    finally:
        plt.close(fig)


def plot_exit_bars(rows: list[dict], path: Path) -> Path:
    plt = _pyplot()
    labels = ["no exit" if r["cl"] is None else f"CL={r['cl']:.2f}" for r in rows]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(x - 0.2, [r["accuracy"] for r in rows], 0.4, label="accuracy")
    ax.bar(x + 0.2, [r["mac_ratio"] for r in rows], 0.4, label="relative MACs")
    ax.set_xticks(x, labels)
    ax.set_ylim(0, 1.05)
    ax.legend()
    ax.set_title("Early exit: accuracy and inference cost")
    try:
        return _save_svg(fig, path)
    finally:
        plt.close(fig)


def plot_asr_lines(curves: dict[int, list[AsrPoint]], path: Path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for pid, pts in sorted(curves.items()):
        pts = [p for p in pts if not p.skipped]
        r = [p.ratio for p in pts]
        line, = ax.plot(r, [p.asr_ml for p in pts], marker="o", label=f"phase {pid} (FL labels)")
        ax.plot(r, [p.asr_true for p in pts], ls="--", color=line.get_color(),
                label=f"phase {pid} (true labels)")
    ax.set_xlabel("legitimate-to-eavesdropper ratio")
    ax.set_ylabel("average secrecy rate [bit/s/Hz]")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    try:
        return _save_svg(fig, path)
    finally:
        plt.close(fig)


# -- report -------------------------------------------------------------------------

def summary_text(campaign: CampaignReport) -> str:
    res = campaign.results
    lines = [f"phases run: {len(res)}, completed: {len(campaign.completed)}, "
             f"failed: {len(campaign.failed)}"]
    for r in campaign.failed:
        lines.append(f"  phase {r.phase_id} failed: {r.error}")
    if campaign.completed:
        dist = metric_distribution(res)
        lines.append("")
        lines.append("Metric distribution over RIS phases (box plot: metrics_box.svg)"
                     + (" [partial: fewer than 4 phases]" if dist["partial"] else ""))
        for m, q in dist["metrics"].items():
            lines.append(f"  {m:9s} " + " ".join(f"{k}={v:.4f}" for k, v in q.items()))
        lines.append(f"  top phases by accuracy: {top_k(res, campaign.cfg.top_k)}")
    else:
        lines.append("no completed phases; tables and plots were not produced")
    if campaign.exit_table:
        lines.append("")
        lines.append("Early-exit study on the best phase (bar chart: exit_bars.svg)")
        for row in campaign.exit_table:
            cl = "none" if row["cl"] is None else f"{row['cl']:.2f}"
            lines.append(f"  CL={cl:5s} accuracy={row['accuracy']:.4f} "
                         f"exit_rate={row['exit_rate']:.4f} mac_ratio={row['mac_ratio']:.4f}")
    if campaign.asr_curves:
        lines.append("")
        lines.append("Average secrecy rate vs L-to-E ratio (line chart: asr_lines.svg)")
        for pid, pts in sorted(campaign.asr_curves.items()):
            cells = ", ".join("skipped" if p.skipped else
                              f"{p.ratio:g}: true={p.asr_true:.4f} ml={p.asr_ml:.4f}" for p in pts)
            lines.append(f"  phase {pid}: {cells}")
    lines.append("")
    lines.append(f"results hash: {campaign.results_hash()}")
    return "\n".join(lines) + "\n"


def emit_report(campaign: CampaignReport, outdir) -> dict[str, str]:
    """Write tables, plots, summary and a manifest mapping file names to SHA-256."""
    out = Path(outdir)
    paths = []
    done = campaign.completed
    if done:
        dist = metric_distribution(campaign.results)
        paths.append(atomic_write(out / "metrics.csv", metrics_csv(campaign.results)))
        paths.append(atomic_write(out / "quartiles.csv", quartile_csv(dist)))
        paths.append(plot_metric_box(campaign.results, out / "metrics_box.svg"))
        if campaign.exit_table:
            paths.append(atomic_write(out / "exit_study.csv", exit_csv(campaign.exit_table)))
            paths.append(plot_exit_bars(campaign.exit_table, out / "exit_bars.svg"))
        if campaign.asr_curves:
            paths.append(atomic_write(out / "asr.csv", asr_csv(campaign.asr_curves)))
            paths.append(plot_asr_lines(campaign.asr_curves, out / "asr_lines.svg"))
    paths.append(atomic_write(out / "summary.txt", summary_text(campaign)))
    manifest = {p.relative_to(out).as_posix(): sha256_file(p) for p in paths}
    atomic_write(out / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    campaign.manifest = manifest
    return manifest
