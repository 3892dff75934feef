"""Build a 3x3 membrane array, split it across ranks, and print the balance.

The inner region is meshed block by block (one block per membrane) and the
blocks are merged. Outer elements are then divided class by class so every
rank gets an even share of PML, interface-layer and plain elements.
"""

import numpy as np

from pmutwave.config import from_dict
from pmutwave.partition import ElementClass, build_block_layout, build_halo_plan, partition_mesh
from pmutwave.scenarios import build_domain
from pmutwave.sem import build_dofmap

lay = build_block_layout(3, 3)
print("block layout (top row first):")
print(lay.matrix())
for i, nb in enumerate(lay.adjacency):
    print(f"  block {i}: neighbours {nb}")

cfg = from_dict({"scenario": "array", "array.rows": 3, "array.cols": 3,
                 "geometry.lz": 60e-6, "pml.thickness": 30e-6})
mesh = build_domain(cfg).mesh
print(f"\n{mesh.n_elements} elements, {mesh.n_membranes} membranes")

plan = partition_mesh(mesh, 3)
for c in ElementClass:
    print(f"{c.name:<12}", plan.counts(c))

halo = build_halo_plan(build_dofmap(mesh, 2, 2), plan)
for a, b in halo.pairs():
    print(f"ranks {a}->{b}: {len(halo.shared_dofs.get((a, b), []))} shared dofs")
print("element owners per rank:", np.bincount(plan.owner, minlength=3))
