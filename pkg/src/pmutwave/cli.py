"""``pmut-wave`` command line.

Exit codes: 0 success, 2 configuration or mesh error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .dg import match_faces, match_faces_bruteforce
from .mesh import MeshError, write_mesh
from .scenarios import build_domain
from .timestepper import NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _cmd_run(args, cfg):
    from .driver import simulate, write_outputs

    sim = simulate(cfg, workers=args.workers)
    out = write_outputs(sim, args.out)
    r = sim.result
    print(f"{len(r.times) - 1} steps, dt {r.dt:.4e} s, {sim.ops.n_dofs} dofs, "
          f"{r.wall:.2f} s wall -> {out}")


def _cmd_mesh(args, cfg):
    dom = build_domain(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_mesh(dom.mesh, out / "mesh.txt")
    counts = np.bincount(dom.mesh.region, minlength=4)
    print(f"{dom.mesh.n_elements} elements (inner {counts[0]}, outer {counts[1]}, "
          f"pml {counts[2]}, dg layer {counts[3]}), {dom.mesh.n_nodes} nodes -> {out / 'mesh.txt'}")


def _same_table(a, b):
    if len(a) != len(b):
        return False
    return (np.array_equal(a.fine_face, b.fine_face) and np.array_equal(a.coarse_elem, b.coarse_elem)
            and np.allclose(a.xhat_minus, b.xhat_minus, atol=1e-9))


def _cmd_match_bench(args, cfg):
    dom = build_domain(cfg)
    r_in = cfg["numerics.r_in"]
    t0 = time.perf_counter()
    fast = match_faces(dom.mesh, r_in)
    t1 = time.perf_counter()
    slow = match_faces_bruteforce(dom.mesh, r_in)
    t2 = time.perf_counter()
    same = _same_table(fast, slow)
    print(f"quadrature nodes {len(fast)}")
    print(f"candidates pruned {fast.n_candidates} of {fast.n_all_pairs} "
          f"({fast.n_candidates / max(fast.n_all_pairs, 1):.2%})")
    print(f"pruned {t1 - t0:.3f} s, brute force {t2 - t1:.3f} s")
    print(f"oracle match {'yes' if same else 'NO'}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        fast.dump(out / "face_pairs.txt")
    return EXIT_OK if same else EXIT_NUMERICAL


def build_parser():
    p = argparse.ArgumentParser(prog="pmut-wave", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a simulation and write probe CSV/VTK output")
    r.add_argument("config")
    r.add_argument("--workers", type=int, default=None)
    r.add_argument("--out", default="out")
    m = sub.add_parser("mesh", help="build and write the mesh only")
    m.add_argument("config")
    m.add_argument("--out", default="out")
    b = sub.add_parser("match-bench", help="time the face matcher against brute force")
    b.add_argument("config")
    b.add_argument("--out", default=None)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "mesh": _cmd_mesh, "match-bench": _cmd_match_bench}
    try:
        if getattr(args, "workers", None) is not None and args.workers < 1:
            raise ConfigError("--workers: must be a positive integer")
        cfg = load_config(args.config)
        code = handlers[args.command](args, cfg)
    except (ConfigError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
