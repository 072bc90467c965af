"""Kantorovich potentials and the approximate Brenier map from a solved moment relaxation.

With dual multipliers ``lambda`` of the pin constraints, the potentials are
``phi(x) = sum_c lambda_c <A_c, Phi Phi^T>`` over the x-tagged rows and
``psi(y)`` likewise over the y-tagged rows. Consistency rows vanish on any
``Phi Phi^T`` and contribute nothing. Dual feasibility makes
``||x - y||^2 - phi(x) - psi(y)`` a sum of squares in the cluster basis, and
``T(x) = x - grad(phi)(x) / 2`` approximates the optimal map.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .conic import ConicSolution
from .moment_relax import MomentAssembly, _monomials


@dataclass(frozen=True)
class PolynomialPotential:
    """Polynomial ``sum_alpha c_alpha s^alpha`` in rescaled coordinates ``s = (x - offset) / scale``.

    Evaluation and derivatives take points in original coordinates.
    """

    terms: dict[tuple[int, ...], float]
    offset: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        offset = np.asarray(self.offset, dtype=float).ravel()
        scale = np.asarray(self.scale, dtype=float).ravel()
        if offset.shape != scale.shape or np.any(scale <= 0):
            raise ValueError("invalid rescaling")
        terms = {}
        for e, c in self.terms.items():
            e = tuple(int(v) for v in e)
            if len(e) != offset.size or min(e, default=0) < 0:
                raise ValueError(f"exponent {e} does not match dimension {offset.size}")
            terms[e] = terms.get(e, 0.0) + float(c)
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "scale", scale)

    @classmethod
    def zero(cls, dim: int) -> "PolynomialPotential":
        return cls({}, np.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return self.offset.size

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def _arrays(self):
        if not self.terms:
            return np.zeros((0, self.dim), dtype=int), np.zeros(0)
        keys = sorted(self.terms)
        return np.asarray(keys, dtype=int).reshape(-1, self.dim), np.array([self.terms[k] for k in keys])

    def _unit(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise ValueError(f"points must have {self.dim} coordinates")
        return (x - self.offset) / self.scale

    def __call__(self, x) -> np.ndarray:
        exps, coef = self._arrays()
        if coef.size == 0:
            return np.zeros(np.atleast_2d(x).shape[0])
        return _monomials(self._unit(x), exps) @ coef

    def gradient(self, x) -> np.ndarray:
        """Term-exact gradient with respect to the original coordinates, shape ``(n_points, dim)``."""
        s = self._unit(x)
        exps, coef = self._arrays()
        out = np.zeros_like(s)
        if coef.size == 0:
            return out
        for i in range(self.dim):
            a = exps[:, i]
            mask = a > 0
            if not np.any(mask):
                continue
            low = exps[mask].copy()
            low[:, i] -= 1
            out[:, i] = _monomials(s, low) @ (coef[mask] * a[mask]) / self.scale[i]
        return out

    def expand(self) -> dict[tuple[int, ...], float]:
        """Coefficients in the original coordinates (binomial expansion of the rescaling)."""
        out: dict[tuple[int, ...], float] = {}
        for e, c in self.terms.items():
            # prod_i ((x_i - o_i)/s_i)^e_i = prod_i sum_k C(e_i,k) x_i^k (-o_i)^(e_i-k) / s_i^e_i
            factors = []
            for i, ei in enumerate(e):
                factors.append([(k, math.comb(ei, k) * (-self.offset[i]) ** (ei - k) / self.scale[i] ** ei)
                                for k in range(ei + 1)])
            for combo in product(*factors):
                key = tuple(k for k, _ in combo)
                val = c * float(np.prod([w for _, w in combo]))
                out[key] = out.get(key, 0.0) + val
        return {k: v for k, v in out.items() if v != 0.0}

    def to_dict(self) -> dict:
        return {
            "format": "otrelax-potential",
            "dim": self.dim,
            "offset": self.offset.tolist(),
            "scale": self.scale.tolist(),
            "terms": {",".join(map(str, e)): c for e, c in sorted(self.terms.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PolynomialPotential":
        if data.get("format") != "otrelax-potential":
            raise ValueError("not a potential file")
        dim = int(data["dim"])
        terms = {}
        for key, c in data["terms"].items():
            e = tuple(int(v) for v in key.split(",")) if key else ()
            if len(e) != dim:
                raise ValueError(f"exponent {key!r} does not match dimension {dim}")
            terms[e] = float(c)
        return cls(terms, np.asarray(data["offset"], dtype=float), np.asarray(data["scale"], dtype=float))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "PolynomialPotential":
        return cls.from_dict(json.loads(text))


def extract_potentials(
    solution: ConicSolution, assembly: MomentAssembly, require_optimal: bool = True
) -> tuple[PolynomialPotential, PolynomialPotential]:
    """Potentials ``(phi, psi)`` from the multipliers of the pin constraints.

    The constant pin is attributed to ``phi``. Only the ``psd`` variant
    (single block or clique-reduced) and the ``full`` variant are supported.
    """
    if assembly.variant == "sparse":
        raise NotImplementedError("potential extraction for the sparse variant is not implemented")
    if solution.dual is None or solution.dual.size != assembly.program.n_constraints:
        raise ValueError("solution carries no multipliers for this program")
    if require_optimal and solution.status != "optimal":
        raise ValueError(f"solution status is {solution.status!r}, not optimal")
    basis = assembly.basis
    y = solution.dual
    tags = assembly.program.tags
    phi: dict[tuple[int, ...], float] = {}
    psi: dict[tuple[int, ...], float] = {}
    for mid, row in assembly.pin_rows.items():
        if tags[row] == "marginal-x":
            key = basis.side_exponent(mid, "x")
            phi[key] = phi.get(key, 0.0) + float(y[row])
        elif tags[row] == "marginal-y":
            key = basis.side_exponent(mid, "y")
            psi[key] = psi.get(key, 0.0) + float(y[row])
    ox, sx = basis.scaling.side("x")
    oy, sy = basis.scaling.side("y")
    return PolynomialPotential(phi, ox, sx), PolynomialPotential(psi, oy, sy)


def apply_map(phi: PolynomialPotential, x) -> np.ndarray:
    """``T(x) = x - grad(phi)(x) / 2`` for points of shape ``(n, dim)`` (or a single point)."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    pts = np.atleast_2d(arr)
    out = pts - 0.5 * phi.gradient(pts)
    return out[0] if single else out


def sos_residual(phi: PolynomialPotential, psi: PolynomialPotential, x, y) -> np.ndarray:
    """``||x - y||^2 - phi(x) - psi(y)`` at paired points."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    return np.sum((x - y) ** 2, axis=1) - phi(x) - psi(y)


def sos_residual_check(phi: PolynomialPotential, psi: PolynomialPotential, assembly: MomentAssembly | None,
                       sample_points) -> float:
    """Most negative value of the SOS residual at joint points ``z = (x, y)``.

    ``assembly`` may be ``None`` when ``phi`` and ``psi`` carry the
    dimensions; it is used only to split the columns of ``sample_points``.
    """
    z = np.atleast_2d(np.asarray(sample_points, dtype=float))
    dx = assembly.basis.dx if assembly is not None else phi.dim
    return float(np.min(sos_residual(phi, psi, z[:, :dx], z[:, dx:])))


def expected_value(pot: PolynomialPotential, moments: dict[tuple[int, ...], float]) -> float:
    """Integral of ``pot`` against a measure given by its rescaled moments (constant included)."""
    total = 0.0
    for e, c in pot.terms.items():
        if sum(e) == 0:
            total += c
        else:
            total += c * moments[e]
    return total
