"""Head-count scaling of the recurrent encoder.

The per-step cost of the multihead recurrent encoder is dominated by the
d^2/H output projection, so more heads at fixed width means fewer flops
per step and near-constant incremental latency in sequence length.

Run:  python3 demos/scaling.py
"""

from tmepsr.bench import incremental_step_latency, scan_vs_sequential
from tmepsr.lru import param_count

d = 240
print(f"width d={d}")
print(f"{'heads':>6} {'params/branch':>14} {'step us (n=100)':>16} "
      f"{'step us (n=5000)':>17}")
for h in (2, 4, 8):
    counts = param_count(d, h)
    lat = incremental_step_latency(d, h, probe_lengths=(100, 5000), seed=0)
    print(f"{h:>6} {counts['per_branch']:>14} "
          f"{lat[100] * 1e6:>16.2f} {lat[5000] * 1e6:>17.2f}")

rows = scan_vs_sequential(d=64, h=4, n_grid=(4096,), seed=0)
r = rows[0]
print(f"\nscan vs sequential @ n=4096, d=64: "
      f"sequential {r['sequential_s'] * 1e3:.1f} ms, "
      f"scan {r['scan_s'] * 1e3:.1f} ms "
      f"({r['sequential_s'] / r['scan_s']:.1f}x)")
