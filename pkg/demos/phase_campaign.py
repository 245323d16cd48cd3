"""A small RIS phase campaign written out as a report.

Runs one FL model per random RIS phase configuration on a reduced deployment,
then writes CSV tables, SVG plots and a text summary.

    python3 demos/phase_campaign.py [outdir]
"""
import sys
from pathlib import Path

from risguard.experiments import run_campaign
from risguard.report import emit_report
from risguard.scenario import desk_scale

out = Path(sys.argv[1] if len(sys.argv) > 1 else "results/demo_campaign")
cfg = desk_scale().replace(n_ue=80, n_phase_configs=4, fl_rounds=4, top_k=2)

campaign = run_campaign(cfg)
for r in campaign.results:
    status = f"accuracy {r.accuracy:.3f}" if r.ok else f"failed: {r.error}"
    print(f"phase {r.phase_id}: {status}")
print("top phases:", campaign.top_k(cfg.top_k))

manifest = emit_report(campaign, out)
print(f"wrote {len(manifest)} files to {out}:")
for name, digest in manifest.items():
    print(f"  {name:18s} {digest[:16]}")
print((out / "summary.txt").read_text())
