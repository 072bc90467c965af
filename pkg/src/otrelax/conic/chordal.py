"""Clique decomposition of a sparse PSD block.

If every objective/constraint coefficient on a PSD block lies inside the
union of given cliques and those are the maximal cliques of a chordal
pattern, the single PSD constraint can be replaced by one PSD constraint
per clique, with copies of shared entries tied by equalities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .program import ConicProgram, ProgramBuilder


@dataclass(frozen=True)
class CliqueMap:
    """Where each entry of the original block lives after decomposition."""

    block: str
    dim: int
    cliques: tuple[tuple[int, ...], ...]
    block_names: tuple[str, ...]

    def owner(self, p: int, q: int) -> int:
        for t, cl in enumerate(self.cliques):
            if p in cl and q in cl:
                return t
        raise KeyError((p, q))

    def assemble(self, values: dict[str, np.ndarray], fill: float = np.nan) -> np.ndarray:
        """Original-size matrix with the clique entries filled in (others ``fill``)."""
        out = np.full((self.dim, self.dim), fill)
        for t, cl in reversed(list(enumerate(self.cliques))):
            idx = np.asarray(cl)
            out[np.ix_(idx, idx)] = values[self.block_names[t]]
        return out


def decompose_psd_block(
    prog: ConicProgram, block: str, cliques: Sequence[Sequence[int]], prefix: str | None = None
) -> tuple[ConicProgram, CliqueMap]:
    k0 = prog.block_index(block)
    blk = prog.blocks[k0]
    if blk.cone != "psd":
        raise ValueError("only PSD blocks can be decomposed")
    cliques = tuple(tuple(sorted(int(v) for v in cl)) for cl in cliques)
    prefix = prefix or f"{block}_clique"

    builder = ProgramBuilder()
    remap_block: dict[int, int] = {}
    clique_blocks: list[int] = []
    names = []
    for k, other in enumerate(prog.blocks):
        if k == k0:
            for t, cl in enumerate(cliques):
                name = f"{prefix}{t}"
                names.append(name)
                clique_blocks.append(builder.add_block(name, "psd", len(cl)))
        else:
            remap_block[k] = builder.add_block(other.name, other.cone, other.size)
    cmap = CliqueMap(block, blk.size, cliques, tuple(names))
    local = [{v: a for a, v in enumerate(cl)} for cl in cliques]

    # owner clique per (p,q) pair inside some clique
    owner: dict[tuple[int, int], int] = {}
    for t, cl in enumerate(cliques):
        for a, p in enumerate(cl):
            for q in cl[a:]:
                owner.setdefault((p, q), t)

    sl0 = prog.block_slice(k0)
    iu, ju = np.triu_indices(blk.size)
    col_map = np.full(prog.n_vars, -1, dtype=int)
    for k, other in enumerate(prog.blocks):
        if k == k0:
            continue
        sl = prog.block_slice(k)
        nk = remap_block[k]
        if other.cone == "psd":
            oi, oj = np.triu_indices(other.size)
            col_map[sl] = [builder.col(nk, int(i), int(j)) for i, j in zip(oi, oj)]
        else:
            col_map[sl] = [builder.col(nk, i) for i in range(other.size)]

    def map_col(col: int) -> int:
        if sl0.start <= col < sl0.stop:
            off = col - sl0.start
            p, q = int(iu[off]), int(ju[off])
            t = owner.get((p, q))
            if t is None:
                raise ValueError(f"entry ({p},{q}) of block {block} is not covered by any clique")
            return builder.col(clique_blocks[t], local[t][p], local[t][q])
        return int(col_map[col])

    for col in np.flatnonzero(prog.c):
        builder.add_objective(map_col(int(col)), float(prog.c[col]))
    builder.offset = prog.offset
    A = prog.A.tocsr()
    for r in range(prog.n_constraints):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        coeffs = [(map_col(int(cidx)), float(v)) for cidx, v in zip(A.indices[lo:hi], A.data[lo:hi])]
        builder.add_constraint(coeffs, float(prog.b[r]), prog.tags[r] if prog.tags else "")

    for t, cl in enumerate(cliques):
        for a, p in enumerate(cl):
            for q in cl[a:]:
                t0 = owner[(p, q)]
                if t0 == t:
                    continue
                builder.add_constraint(
                    [
                        (builder.col(clique_blocks[t], local[t][p], local[t][q]), 1.0),
                        (builder.col(clique_blocks[t0], local[t0][p], local[t0][q]), -1.0),
                    ],
                    0.0,
                    "overlap",
                )
    return builder.build(), cmap
