"""Drive a single membrane with a short burst and watch the pulse travel down.

Run from the repository root:

    python demos/transmit_burst.py

Three probes sit on the axis below the membrane. Each one should see the
burst arrive roughly depth / c after the drive starts.
"""

import numpy as np

from pmutwave.config import load_config
from pmutwave.driver import simulate, write_outputs

cfg = load_config("demos/small.cfg")
sim = simulate(cfg)
res = sim.result
print(res.summary())

c = 1481.0
for k, (_, _, z) in enumerate(sim.probes):
    p = np.abs(res.probes[:, k])
    first = res.times[np.argmax(p > 0.05 * p.max())]
    print(f"probe z = {z * 1e6:6.1f} um  peak {p.max():.3e} Pa  "
          f"first 5% rise {first * 1e9:6.1f} ns  (|z|/c = {abs(z) / c * 1e9:5.1f} ns)")

out = write_outputs(sim, "demo_out/transmit")
print("outputs in", out)
