"""Move a 40x40 grid toward a Gaussian peak and report how many points land near it.

Run: python3 demos/move_points.py [epochs]
"""

import sys

from moveset import problems
from moveset.mmpde import MmpdeConfig, peak_fraction, train_mmpde
from moveset.network import NetworkConfig

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
field, monitor = problems.demo_field("gaussian-peak", c=10)
grid = problems.sample_uniform_grid(problems.DEMO_DOMAIN, (40, 40))

cfg = MmpdeConfig(net=NetworkConfig(2, 2, 8, 20), epochs=epochs, lr=1e-4, monitor=monitor)
res = train_mmpde(cfg, grid, field)

print(f"final loss {res.final_loss:.3e} after {epochs} epochs")
print(f"fraction within r<0.2: uniform {peak_fraction(grid.coords):.4f}, moved {peak_fraction(res.points.coords):.4f}")
for w in res.warnings:
    print("warning:", w)
