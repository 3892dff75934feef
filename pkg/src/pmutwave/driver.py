"""End-to-end runs: config -> domain -> operators -> time loop -> files."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .output import vertex_values, write_probe_csv, write_vtk_snapshot
from .scenarios import build_domain, default_probes
from .sem import PointEvaluator
from .timestepper import build_operators, estimate_stable_dt, run

log = logging.getLogger(__name__)


@dataclass
class Simulation:
    config: object
    domain: object
    ops: object
    probes: list
    result: object = None


def end_time(cfg, domain):
    if cfg.get("numerics.t_end") is not None:
        return cfg["numerics.t_end"]
    Td = cfg["drive.duration"]
    c = float(domain.materials[:, 0].min())
    if domain.obstacle is not None:
        return 2 * domain.obstacle_depth / c + 3 * Td
    return Td + 1.2 * abs(domain.lo[2]) / c


def prepare(cfg, workers=None):
    """Build the domain and all operators without stepping."""
    domain = build_domain(cfg)
    ops = build_operators(
        domain.mesh,
        cfg["numerics.r_in"],
        cfg["numerics.r_out"],
        c_elem=domain.c_elem,
        alpha=cfg["numerics.alpha"],
        pml_profile=domain.pml_profile,
        membranes=domain.membranes,
        workers=workers or cfg["workers"],
    )
    probes = cfg.get("probes") or default_probes(domain)
    return Simulation(cfg, domain, ops, probes)


def simulate(cfg, workers=None):
    sim = prepare(cfg, workers)
    dt, lam = estimate_stable_dt(sim.ops, cfg["numerics.safety"], return_lambda=True)
    if cfg["numerics.dt"] != "auto":
        if cfg["numerics.dt"] > dt / cfg["numerics.safety"]:
            log.warning("requested dt %.3e exceeds the stability estimate %.3e",
                        cfg["numerics.dt"], dt / cfg["numerics.safety"])
        dt = cfg["numerics.dt"]
    n_steps = max(1, math.ceil(end_time(cfg, sim.domain) / dt - 1e-9))
    ev = PointEvaluator(sim.domain.mesh, sim.ops.dofmap, sim.probes)
    log.info("%d dofs, dt %.3e, %d steps", sim.ops.n_dofs, dt, n_steps)
    sim.result = run(sim.ops, sim.domain.signals, dt, n_steps, probe=ev)
    sim.result.lam_max = lam
    return sim


def write_outputs(sim, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = sim.result
    for i in range(res.probes.shape[1]):
        write_probe_csv(res.times, res.probes[:, i], out / f"probe_{i}.csv")
    for k in range(res.voltages.shape[1]):
        write_probe_csv(res.times, res.voltages[:, k], out / f"voltage_{k}.csv", column="v")
    if sim.config["output.snapshot"]:
        p = vertex_values(sim.domain.mesh, sim.ops.dofmap, res.state.p)
        write_vtk_snapshot(sim.domain.mesh, p, out / "pressure_final.vtk")
    lines = [
        f"scenario {sim.config['scenario']}",
        f"elements {sim.domain.mesh.n_elements}",
        f"dofs {sim.ops.n_dofs}",
        f"interface_nodes {len(sim.ops.table)}",
        f"workers {sim.ops.executor.workers}",
    ]
    lines += [f"probe_{i} {x:.9g} {y:.9g} {z:.9g}" for i, (x, y, z) in enumerate(sim.probes)]
    (out / "summary.txt").write_text("\n".join(lines) + "\n" + res.summary())
    (out / "config_resolved.txt").write_text(sim.config.dumps())
    return out
