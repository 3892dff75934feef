"""Transmit, switch to receive, and time the echo off a rigid obstacle.

The obstacle depth follows the burst length (three burst lengths of travel
each way), snapped to the outer grid. The echo is isolated by subtracting a
run without the obstacle on the same time grid. Takes a few minutes.
"""

import numpy as np

from pmutwave.config import from_dict
from pmutwave.driver import prepare, simulate
from pmutwave.timestepper import estimate_stable_dt

Td = 0.05e-6
base = {"geometry.lx": 240e-6, "geometry.ly": 240e-6, "geometry.lz": 300e-6,
        "geometry.obstacle_radius": 90e-6, "drive.duration": Td, "drive.switch_time": Td,
        "numerics.t_end": 0.42e-6, "probes": [(0, 0, 0)]}
cfgs = [from_dict(dict(base, scenario=s)) for s in ("txrx_obstacle", "tx_single")]

# both runs must share one step size for the subtraction to make sense
dt = min(estimate_stable_dt(prepare(c).ops, c["numerics.safety"]) for c in cfgs)
obst, free = (simulate(c.replace(numerics__dt=dt)) for c in cfgs)

d = obst.domain.obstacle_depth
t = obst.result.times
echo = obst.result.probes[:, 0] - free.result.probes[:, 0]
pick = t[np.argmax(np.abs(echo) > 0.01 * np.abs(echo).max())]
print(f"obstacle top at {d * 1e6:.0f} um")
print(f"echo onset {pick * 1e9:.1f} ns, two-way travel time {2 * d / 1481 * 1e9:.1f} ns")

dv = obst.result.voltages[:, 0] - free.result.voltages[:, 0]
print(f"receive voltage change after the echo: {np.abs(dv[t > 2 * d / 1481]).max():.2e} V")
