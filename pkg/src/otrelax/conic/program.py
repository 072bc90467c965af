"""Block-structured conic programs and their solutions.

A program is stored in *entry coordinates*: every PSD block of dimension
``n`` contributes its upper-triangular entries ``(i, j)``, ``i <= j``, in
row-major order; vector blocks contribute their components. A linear form
``sum v * X[i, j]`` is a row over these coordinates, so the trace inner
product ``<C, X>`` has coefficient ``C[i, i]`` on the diagonal and
``2 * C[i, j]`` off it.

All programs are minimizations::

    min  c.x + offset   s.t.  A x = b,  x in K
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.sparse as sp

CONES = ("psd", "nonneg", "free")


@dataclass(frozen=True)
class Block:
    name: str
    cone: str
    size: int

    def __post_init__(self):
        if self.cone not in CONES:
            raise ValueError(f"unknown cone {self.cone!r}")
        if self.size < 1:
            raise ValueError("block size must be positive")

    @property
    def length(self) -> int:
        if self.cone == "psd":
            return self.size * (self.size + 1) // 2
        return self.size


def _tri_offset(n: int, i: int, j: int) -> int:
    # row-major upper triangle, i <= j
    return i * n - i * (i - 1) // 2 + (j - i)


@dataclass(frozen=True)
class ConicProgram:
    blocks: tuple[Block, ...]
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    tags: tuple[str, ...] = ()
    offset: float = 0.0
    _starts: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        starts = np.zeros(len(self.blocks) + 1, dtype=int)
        for k, blk in enumerate(self.blocks):
            starts[k + 1] = starts[k] + blk.length
        object.__setattr__(self, "_starts", starts)
        n = int(starts[-1])
        if self.c.shape != (n,):
            raise ValueError("objective length does not match blocks")
        if self.A.shape != (len(self.b), n):
            raise ValueError("constraint matrix shape does not match blocks/rhs")
        if self.tags and len(self.tags) != len(self.b):
            raise ValueError("one tag per constraint required")
        names = [blk.name for blk in self.blocks]
        if len(set(names)) != len(names):
            raise ValueError("block names must be unique")

    @property
    def n_vars(self) -> int:
        return int(self._starts[-1])

    @property
    def n_constraints(self) -> int:
        return len(self.b)

    def block_index(self, name: str) -> int:
        for k, blk in enumerate(self.blocks):
            if blk.name == name:
                return k
        raise KeyError(name)

    def block_slice(self, k: int) -> slice:
        return slice(int(self._starts[k]), int(self._starts[k + 1]))

    def col(self, block: int | str, i: int, j: int | None = None) -> int:
        k = self.block_index(block) if isinstance(block, str) else block
        blk = self.blocks[k]
        if blk.cone == "psd":
            if j is None:
                raise ValueError("PSD entries need two indices")
            i, j = min(i, j), max(i, j)
            if j >= blk.size:
                raise IndexError("entry out of range")
            return int(self._starts[k]) + _tri_offset(blk.size, i, j)
        if not 0 <= i < blk.size:
            raise IndexError("entry out of range")
        return int(self._starts[k]) + i

    def tag_indices(self, tag: str) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.tags) if t == tag], dtype=int)

    def unpack(self, vec: np.ndarray) -> dict[str, np.ndarray]:
        """Split an entry-coordinate vector into per-block arrays (PSD blocks as full symmetric matrices)."""
        out = {}
        for k, blk in enumerate(self.blocks):
            seg = np.asarray(vec[self.block_slice(k)], dtype=float)
            if blk.cone == "psd":
                out[blk.name] = smat_entries(seg, blk.size)
            else:
                out[blk.name] = seg.copy()
        return out

    def pack(self, values: dict[str, np.ndarray]) -> np.ndarray:
        vec = np.zeros(self.n_vars)
        for k, blk in enumerate(self.blocks):
            v = np.asarray(values[blk.name], dtype=float)
            if blk.cone == "psd":
                iu, ju = np.triu_indices(blk.size)
                vec[self.block_slice(k)] = v[iu, ju]
            else:
                vec[self.block_slice(k)] = v
        return vec

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.c @ x + self.offset)

    # serialization

    def to_dict(self) -> dict:
        coo = self.A.tocoo()
        inv = self._inverse_cols()
        rows: list[list] = [[] for _ in range(self.n_constraints)]
        for r, cidx, v in zip(coo.row, coo.col, coo.data):
            rows[r].append([*inv[cidx], float(v)])
        obj = [[*inv[k], float(self.c[k])] for k in np.flatnonzero(self.c)]
        return {
            "format": "otrelax-conic-program",
            "version": 1,
            "sense": "min",
            "blocks": [{"name": b.name, "cone": b.cone, "size": b.size} for b in self.blocks],
            "objective": obj,
            "offset": self.offset,
            "constraints": [
                {"coeffs": rows[i], "rhs": float(self.b[i]), "tag": self.tags[i] if self.tags else ""}
                for i in range(self.n_constraints)
            ],
        }

    def _inverse_cols(self) -> list[tuple[int, int, int]]:
        inv = []
        for k, blk in enumerate(self.blocks):
            if blk.cone == "psd":
                iu, ju = np.triu_indices(blk.size)
                inv.extend((k, int(i), int(j)) for i, j in zip(iu, ju))
            else:
                inv.extend((k, i, 0) for i in range(blk.size))
        return inv

    @classmethod
    def from_dict(cls, data: dict) -> "ConicProgram":
        if data.get("sense", "min") != "min":
            raise ValueError("only minimization programs are supported")
        builder = ProgramBuilder()
        for blk in data["blocks"]:
            builder.add_block(blk["name"], blk["cone"], int(blk["size"]))
        for k, i, j, v in data["objective"]:
            builder.add_objective(builder.col(int(k), int(i), int(j)), float(v))
        builder.offset = float(data.get("offset", 0.0))
        for con in data["constraints"]:
            coeffs = [(builder.col(int(k), int(i), int(j)), float(v)) for k, i, j, v in con["coeffs"]]
            builder.add_constraint(coeffs, float(con["rhs"]), con.get("tag", ""))
        return builder.build()

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ConicProgram":
        return cls.from_dict(json.loads(text))


def smat_entries(seg: np.ndarray, n: int) -> np.ndarray:
    m = np.zeros((n, n))
    iu, ju = np.triu_indices(n)
    m[iu, ju] = seg
    m[ju, iu] = seg
    return m


class ProgramBuilder:
    """Incremental construction of a :class:`ConicProgram`."""

    def __init__(self):
        self.blocks: list[Block] = []
        self._starts = [0]
        self._obj: dict[int, float] = {}
        self._rows: list[int] = []
        self._cols: list[int] = []
        self._vals: list[float] = []
        self._rhs: list[float] = []
        self._tags: list[str] = []
        self.offset = 0.0

    def add_block(self, name: str, cone: str, size: int) -> int:
        blk = Block(name, cone, size)
        self.blocks.append(blk)
        self._starts.append(self._starts[-1] + blk.length)
        return len(self.blocks) - 1

    def col(self, k: int, i: int, j: int | None = None) -> int:
        blk = self.blocks[k]
        if blk.cone == "psd":
            if j is None:
                raise ValueError("PSD entries need two indices")
            i, j = min(i, j), max(i, j)
            if not (0 <= i and j < blk.size):
                raise IndexError(f"entry ({i},{j}) out of range for block {blk.name}")
            return self._starts[k] + _tri_offset(blk.size, i, j)
        if not 0 <= i < blk.size:
            raise IndexError(f"entry {i} out of range for block {blk.name}")
        return self._starts[k] + i

    def add_objective(self, col: int, value: float) -> None:
        self._obj[col] = self._obj.get(col, 0.0) + value

    def add_constraint(self, coeffs: Iterable[tuple[int, float]], rhs: float, tag: str = "") -> int:
        r = len(self._rhs)
        for col, v in coeffs:
            self._rows.append(r)
            self._cols.append(col)
            self._vals.append(v)
        self._rhs.append(rhs)
        self._tags.append(tag)
        return r

    @property
    def n_constraints(self) -> int:
        return len(self._rhs)

    def build(self) -> ConicProgram:
        n = self._starts[-1]
        c = np.zeros(n)
        for col, v in self._obj.items():
            c[col] = v
        A = sp.csr_matrix(
            (np.asarray(self._vals, dtype=float), (np.asarray(self._rows, dtype=int), np.asarray(self._cols, dtype=int))),
            shape=(len(self._rhs), n),
        )
        A.sum_duplicates()
        A.eliminate_zeros()
        return ConicProgram(tuple(self.blocks), c, A, np.asarray(self._rhs, dtype=float), tuple(self._tags), self.offset)


@dataclass
class ConicSolution:
    """Primal/dual pair returned by the solver.

    ``x`` and ``s`` are entry-coordinate vectors; ``primal`` and ``slack``
    are the same data split per block. ``dual`` holds one multiplier per
    constraint with the convention ``A^T y + s = c``.
    """

    status: str
    x: np.ndarray
    dual: np.ndarray
    s: np.ndarray
    primal: dict[str, np.ndarray]
    slack: dict[str, np.ndarray]
    objective: float
    dual_objective: float
    residuals: dict[str, float]
    iterations: int = 0
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def to_dict(self) -> dict:
        return {
            "format": "otrelax-conic-solution",
            "version": 1,
            "status": self.status,
            "objective": self.objective,
            "dual_objective": self.dual_objective,
            "residuals": dict(self.residuals),
            "iterations": self.iterations,
            "x": self.x.tolist(),
            "dual": self.dual.tolist(),
            "s": self.s.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict, program: ConicProgram) -> "ConicSolution":
        x = np.asarray(data["x"], dtype=float)
        s = np.asarray(data["s"], dtype=float)
        return cls(
            status=data["status"],
            x=x,
            dual=np.asarray(data["dual"], dtype=float),
            s=s,
            primal=program.unpack(x),
            slack=program.unpack(s / _offdiag_weights(program)),
            objective=float(data["objective"]),
            dual_objective=float(data["dual_objective"]),
            residuals={k: float(v) for k, v in data["residuals"].items()},
            iterations=int(data.get("iterations", 0)),
        )


def _offdiag_weights(program: ConicProgram) -> np.ndarray:
    """2 on off-diagonal PSD entries, 1 elsewhere."""
    w = np.ones(program.n_vars)
    for k, blk in enumerate(program.blocks):
        if blk.cone == "psd":
            iu, ju = np.triu_indices(blk.size)
            w[program.block_slice(k)] = np.where(iu == ju, 1.0, 2.0)
    return w


def residuals(
    program: ConicProgram, x: np.ndarray, y: np.ndarray, s: np.ndarray, weights: np.ndarray | None = None
) -> dict[str, float]:
    """Relative primal infeasibility, dual infeasibility and duality gap.

    ``s`` is in entry (linear-form) coordinates, like ``c`` and the rows of
    ``A``. Dual infeasibility is measured with the Frobenius-consistent
    scaling of off-diagonal entries.
    """
    Ax = program.A @ x
    pres = float(np.max(np.abs(Ax - program.b) / (1.0 + np.abs(program.b)), initial=0.0))
    w = _offdiag_weights(program) if weights is None else weights
    r = (program.c - program.A.T @ y - s) / np.sqrt(w)
    cn = np.abs(program.c / np.sqrt(w)).max(initial=0.0)
    dres = float(np.abs(r).max(initial=0.0) / (1.0 + cn))
    pobj = float(program.c @ x)
    dobj = float(program.b @ y)
    gap = abs(pobj - dobj) / (1.0 + abs(pobj + program.offset))
    return {"primal": pres, "dual": dres, "gap": float(gap)}


def dual_lower_bound(program: ConicProgram, y: np.ndarray, bounds: dict[str, float] | None = None) -> float:
    """Rigorous lower bound on the optimal value from any multiplier vector ``y``.

    The slack ``S = c - A^T y`` is recomputed exactly, so only its cone
    violation needs to be paid for. For a PSD block with ``tr X <= t`` the
    term ``<S, X>`` is at least ``min(0, lambda_min(S)) * t``; for a
    nonnegative block with ``sum x <= t`` it is at least ``min(0, min S) * t``.
    Free blocks need a vanishing slack.

    Parameters
    ----------
    bounds : dict, optional
        Block name to an upper bound on the trace (PSD) or the sum
        (nonnegative block) of any feasible point. Blocks without a bound
        contribute ``-inf`` unless their slack is already feasible.
    """
    bounds = bounds or {}
    y = np.asarray(y, dtype=float)
    S = program.c - program.A.T @ y
    value = float(program.b @ y + program.offset)
    for k, blk in enumerate(program.blocks):
        seg = S[program.block_slice(k)]
        if blk.cone == "free":
            scale = 1.0 + np.abs(program.c[program.block_slice(k)]).max(initial=0.0)
            if np.abs(seg).max(initial=0.0) > 1e-12 * scale:
                return -np.inf
            continue
        if blk.cone == "psd":
            iu, ju = np.triu_indices(blk.size)
            low = float(np.linalg.eigvalsh(smat_entries(seg / np.where(iu == ju, 1.0, 2.0), blk.size))[0])
        else:
            low = float(seg.min())
        if low >= 0.0:
            continue
        if blk.name not in bounds:
            return -np.inf
        value += low * float(bounds[blk.name])
    return value
