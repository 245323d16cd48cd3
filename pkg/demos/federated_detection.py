"""Train the eavesdropper detector with FedAvg and try early exits.

Generates the CSI dataset for one RIS phase, trains over the AP clients, and
prints per-round test accuracy plus the accuracy / compute trade-off of the
auxiliary exit.

    python3 demos/federated_detection.py
"""
from risguard.channel import phase_configs
from risguard.dataset import generate_dataset
from risguard.experiments import early_exit_study, phase_context
from risguard.federated import run_training
from risguard.nn.model import count_macs
from risguard.scenario import desk_scale

cfg = desk_scale()
ctx = phase_context(cfg, 0)
ds = generate_dataset(cfg, ctx.topo, ctx.assoc, phase_configs(cfg, 0), 0)
legit, eve = ds.class_counts()
print(f"dataset: {len(ds)} CSI images of shape {ds.x.shape[1:]}, {legit} legit / {eve} eve")

res = run_training(cfg, ds, ctx.topo)
print(f"FL clients (AP ids): {res.clients}, shard sizes {[len(s) for s in res.shards]}")
for rec in res.history:
    print(f"  round {rec.round:2d}: mean client loss "
          f"{sum(rec.client_loss) / len(rec.client_loss):.4f}, test accuracy {rec.test['accuracy']:.3f}")
m = res.metrics
print(f"final: accuracy {m.accuracy:.3f}, macro F1 {m.macro_f1:.3f}, eve recall {m.recall[1]:.3f}")

print(f"early exit (full network {count_macs(with_aux=False):,} MACs per sample):")
for row in early_exit_study(res.params, res.test, (0.55, 0.7, 0.9)):
    cl = "off" if row["cl"] is None else f"{row['cl']:.2f}"
    print(f"  CL {cl:>4}: accuracy {row['accuracy']:.3f}, exit rate {row['exit_rate']:.2f}, "
          f"MACs x{row['mac_ratio']:.2f}")
