"""Element ownership for logical ranks.

Outer and PML elements are split by three independent balanced
partitioner calls (PML layer, DG layer, remaining outer elements). Inner
elements follow the elementary block they were generated in, so every
membrane stays on one rank.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mesh import Region


class PartitionError(ValueError):
    pass


class ElementClass(enum.IntEnum):
    PML = 0
    DG_LAYER = 1
    OUTER_REST = 2
    INNER_BLOCK = 3


def validate_rank_count(n_proc, n_block):
    """Return M = n_proc / n_block; raise unless n_proc is a multiple of n_block."""
    if n_block < 1 or n_proc < 1 or n_proc % n_block:
        raise PartitionError(
            f"number of ranks N_proc={n_proc} is not an integer multiple of N_block={n_block}"
        )
    return n_proc // n_block


@dataclass(frozen=True)
class BlockLayout:
    """Block ownership ``owner[n, m] = m * n_block + n`` (n counted from the bottom).

    ``adjacency[i]`` lists the owners of the up to eight blocks surrounding
    the block of rank ``i``.
    """

    n_block: int
    m: int
    owner: np.ndarray
    adjacency: list

    def matrix(self):
        """Ownership as displayed with the top block row first."""
        return np.flipud(self.owner)

    def position(self, rank):
        return rank % self.n_block, rank // self.n_block


def build_block_layout(n_block, m):
    if n_block < 1 or m < 1:
        raise PartitionError("n_block and m must be positive")
    n_idx, m_idx = np.meshgrid(np.arange(n_block), np.arange(m), indexing="ij")
    owner = m_idx * n_block + n_idx
    adjacency = []
    for rank in range(n_block * m):
        n, mm = rank % n_block, rank // n_block
        nb = [
            int(owner[n + dn, mm + dm])
            for dn in (-1, 0, 1)
            for dm in (-1, 0, 1)
            if (dn or dm) and 0 <= n + dn < n_block and 0 <= mm + dm < m
        ]
        adjacency.append(sorted(nb))
    return BlockLayout(n_block, m, owner, adjacency)


def rcb(points, n_parts):
    """Recursive coordinate bisection with part sizes differing by at most one.

    Ties along the split axis are broken by point index, so the result is
    deterministic.
    """
    points = np.asarray(points, dtype=float)
    labels = np.zeros(len(points), dtype=np.int64)

    def split(idx, first, n):
        if n == 1 or len(idx) == 0:
            labels[idx] = first
            return
        base, rem = divmod(len(idx), n)
        n_left = n // 2
        count_left = base * n_left + min(rem, n_left)
        pts = points[idx]
        axis = int(np.argmax(np.ptp(pts, axis=0)))
        order = np.lexsort((idx, pts[:, axis]))
        split(idx[order[:count_left]], first, n_left)
        split(idx[order[count_left:]], first + n_left, n - n_left)

    split(np.arange(len(points)), 0, n_parts)
    return labels


@dataclass
class PartitionPlan:
    owner: np.ndarray
    element_class: np.ndarray
    n_ranks: int

    def counts(self, cls):
        sel = self.element_class == int(cls)
        return np.bincount(self.owner[sel], minlength=self.n_ranks)

    def elements_of(self, rank):
        return np.nonzero(self.owner == rank)[0]

    def dump(self, path, halo=None):
        """Text dump: element ids per rank, then exchange sizes per rank pair."""
        lines = [f"ranks {self.n_ranks}"]
        for r in range(self.n_ranks):
            ids = self.elements_of(r)
            lines.append(f"rank {r} {len(ids)} " + " ".join(map(str, ids)))
        if halo is not None:
            for (a, b) in sorted(halo.shared_dofs):
                lines.append(
                    f"pair {a} {b} dofs {len(halo.shared_dofs[(a, b)])} "
                    f"faces {len(halo.face_pairs.get((a, b), ()))}"
                )
        Path(path).write_text("\n".join(lines) + "\n")


def classify_elements(mesh):
    cls = np.full(mesh.n_elements, int(ElementClass.OUTER_REST), dtype=np.int64)
    cls[mesh.region == Region.PML] = ElementClass.PML
    cls[mesh.region == Region.DG_LAYER] = ElementClass.DG_LAYER
    cls[mesh.region == Region.INNER] = ElementClass.INNER_BLOCK
    return cls


def partition_outer(mesh, n_ranks, partitioner=rcb):
    """Owners of the outer and PML elements; inner elements are left at -1.

    One partitioner call per class (PML, DG layer, remaining outer).
    """
    if n_ranks < 1:
        raise PartitionError("n_ranks must be positive")
    cls = classify_elements(mesh)
    owner = np.full(mesh.n_elements, -1, dtype=np.int64)
    cen = mesh.element_centroids()
    for c in (ElementClass.PML, ElementClass.DG_LAYER, ElementClass.OUTER_REST):
        idx = np.nonzero(cls == c)[0]
        if len(idx) == 0:
            continue
        if n_ranks > len(idx):
            raise PartitionError(
                f"{n_ranks} ranks exceed the {len(idx)} elements of class {c.name.lower()}"
            )
        owner[idx] = partitioner(cen[idx], n_ranks)
    return PartitionPlan(owner, cls, n_ranks)


def partition_mesh(mesh, n_ranks, partitioner=rcb):
    """Full plan: balanced outer classes plus block-wise inner ownership.

    Inner block ``b`` of ``n_blocks`` goes to rank ``b * n_ranks // n_blocks``;
    with one block per rank this is the identity.
    """
    plan = partition_outer(mesh, n_ranks, partitioner)
    inner = np.nonzero(plan.element_class == ElementClass.INNER_BLOCK)[0]
    if len(inner):
        blk = mesh.element_block[inner]
        if np.any(blk < 0):
            # unblocked inner region: treat as an ordinary class
            plan.owner[inner] = partitioner(mesh.element_centroids()[inner], n_ranks)
        else:
            n_blocks = int(blk.max()) + 1
            if n_ranks > n_blocks:
                raise PartitionError(
                    f"{n_ranks} ranks exceed the {n_blocks} inner blocks"
                )
            plan.owner[inner] = blk * n_ranks // n_blocks
    return plan


@dataclass
class HaloPlan:
    """Per ordered rank pair: shared conforming DOFs and interface face pairs."""

    shared_dofs: dict = field(default_factory=dict)
    face_pairs: dict = field(default_factory=dict)

    def pairs(self):
        return sorted(set(self.shared_dofs) | set(self.face_pairs))


def build_halo_plan(dofmap, plan, face_table=None):
    """Exchange lists implied by ``plan``.

    ``dofmap`` is a :class:`pmutwave.sem.DofMap`; ``face_table`` an optional
    :class:`pmutwave.dg.FacePairTable`.
    """
    halo = HaloPlan()
    if np.any(plan.owner < 0):
        raise PartitionError("plan leaves elements without an owner")
    rows = []
    for grp in dofmap.groups:
        r = plan.owner[grp.elements]
        d = grp.dofs
        rows.append(np.stack([d.ravel(), np.repeat(r, d.shape[1])], axis=1))
    dr = np.unique(np.concatenate(rows), axis=0)
    dof, rank = dr[:, 0], dr[:, 1]
    starts = np.flatnonzero(np.r_[True, dof[1:] != dof[:-1]])
    sizes = np.diff(np.r_[starts, len(dof)])
    acc = {}
    for s, n in zip(starts[sizes > 1], sizes[sizes > 1]):
        rk = rank[s : s + n]
        for a in rk:
            for b in rk:
                if a != b:
                    acc.setdefault((int(a), int(b)), []).append(int(dof[s]))
    halo.shared_dofs = {k: np.array(sorted(v), dtype=np.int64) for k, v in sorted(acc.items())}

    if face_table is not None:
        fe, ce = face_table.fine_elem, face_table.coarse_elem
        if len(fe) and (fe.max() >= len(plan.owner) or ce.max() >= len(plan.owner)):
            raise PartitionError("face pair references an element outside the plan")
        fo, co = plan.owner[fe], plan.owner[ce]
        if np.any(fo < 0) or np.any(co < 0):
            raise PartitionError("dangling face pair: owner missing")
        pairs = {}
        for q in np.nonzero(fo != co)[0]:
            a, b = int(fo[q]), int(co[q])
            key = (int(face_table.fine_face[q]), int(ce[q]))
            pairs.setdefault((a, b), set()).add(key)
            pairs.setdefault((b, a), set()).add(key)
        halo.face_pairs = {k: sorted(v) for k, v in sorted(pairs.items())}
    return halo
