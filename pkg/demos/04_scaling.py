"""
Context fusion grows linearly, attention quadratically
======================================================

Median wall time for one pass over grids of increasing size.
"""
from wsseg.pipeline import bench_scaling

rows = bench_scaling(sizes=((16, 32), (32, 32), (32, 64), (64, 64)), repeats=3)
print(f"{'s':>6} {'fusion s':>10} {'attention s':>12}")
for r in rows:
    print(f"{r['s']:6d} {r['fusion_seconds']:10.4f} {r['attention_seconds']:12.4f}")

for a, b in zip(rows, rows[1:]):
    print(f"s {a['s']} -> {b['s']}: fusion x{b['fusion_seconds'] / a['fusion_seconds']:.2f}, "
          f"attention x{b['attention_seconds'] / a['attention_seconds']:.2f}")
