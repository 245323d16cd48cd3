"""Walk through one deployment: geometry, a cascaded RIS link, and secrecy.

Places APs, RIS panels and UEs, builds the effective channel of one UE through
its serving RIS, then shows how the average secrecy rate moves as the share of
legitimate users grows.

    python3 demos/channel_and_secrecy.py
"""
import numpy as np

from risguard.channel import effective_channel, gen_link_channels, phase_configs
from risguard.experiments import phase_asr, phase_context
from risguard.scenario import desk_scale, noise_power_dbm
from risguard.secrecy import secrecy_report, sinr, sinr_matrix

cfg = desk_scale()
phase = 0
ctx = phase_context(cfg, phase)
topo, assoc = ctx.topo, ctx.assoc
print(f"{topo.n_ap} APs, {topo.n_ris} RIS panels, {topo.n_ue} UEs "
      f"({int(topo.ue_is_eve.sum())} eavesdroppers) in a {cfg.area_m[0]:g} x {cfg.area_m[1]:g} m hall")

# one UE, its serving AP and RIS
ue = 0
ap, ris = int(assoc.serving_ap[ue]), int(assoc.serving_ris[ue])
link = gen_link_channels(cfg, topo, ue, ap, ris, phase)
h = effective_channel(link, phase_configs(cfg, phase)[ris])
direct = np.sum(np.abs(link.h_dir) ** 2, axis=0).mean()
reflected = np.sum(np.abs(h - link.h_dir) ** 2, axis=0).mean()
print(f"UE {ue} -> AP {ap} via RIS {ris}: h_eff {h.shape}, direct path "
      f"{10 * np.log10(direct):.1f} dB, reflected path {10 * np.log10(reflected):.1f} dB")
rec = sinr(h, topo.ue_power_dbm[ue], noise_power_dbm(cfg), ue, ap)
print(f"  wideband MRC SINR {10 * np.log10(rec.sinr_linear):.1f} dB over {h.shape[1]} resource blocks")

# worst-case secrecy with the true labels
s = sinr_matrix(cfg, topo, assoc, ctx.gains)
rep = secrecy_report(s, assoc.serving_ap, ~topo.ue_is_eve, topo.ue_is_eve)
print(f"ASR {rep.asr:.3f} bps/Hz, {np.mean(rep.sr_per_user == 0):.0%} of legitimate users "
      f"have zero secrecy rate")

print("ASR against the L-to-E ratio (same positions, more UEs labelled legitimate):")
for p in phase_asr(cfg, phase, ctx, (1.0, 2.0, 3.5, 5.5)):
    print(f"  ratio {p.ratio:>4g}: {p.n_legit:3d} legit / {p.n_eve:3d} eve  ASR {p.asr_true:.3f}")
