"""Dense symmetric matrix functions."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

# Eigenvalues above -CLIP_REL * ||a||_2 count as zero when classifying PSD input.
CLIP_REL = 1e-10


class EigenPair(NamedTuple):
    values: np.ndarray
    vectors: np.ndarray


class NotPositiveDefinite(ValueError):
    pass


def _as_symmetric(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = 1.0 + np.abs(a).max(initial=0.0)
    if np.abs(a - a.T).max(initial=0.0) > 1e-9 * scale:
        raise ValueError("matrix is not symmetric")
    return 0.5 * (a + a.T)


def sym_eig(a) -> EigenPair:
    """Eigenvalues in ascending order with orthonormal eigenvectors.

    The sign of each eigenvector is fixed so that its largest-magnitude
    component is positive, which makes the output reproducible.
    """
    a = _as_symmetric(a)
    try:
        w, q = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise RuntimeError("eigensolver failed to converge") from exc
    idx = np.argmax(np.abs(q), axis=0)
    signs = np.sign(q[idx, np.arange(q.shape[1])])
    signs[signs == 0] = 1.0
    return EigenPair(w, q * signs)


def spectral_norm(a) -> float:
    w = np.linalg.eigvalsh(_as_symmetric(a))
    return float(np.abs(w).max(initial=0.0))


def psd_project(a) -> np.ndarray:
    """Frobenius-nearest positive semidefinite matrix."""
    w, q = np.linalg.eigh(_as_symmetric(a))
    pos = w > 0
    qp = q[:, pos]
    out = (qp * w[pos]) @ qp.T
    return 0.5 * (out + out.T)


def _spectral_fn(a, fn, *, require_pd: bool) -> np.ndarray:
    a = _as_symmetric(a)
    w, q = np.linalg.eigh(a)
    norm = np.abs(w).max(initial=0.0)
    if require_pd:
        if w[0] <= max(1e-12, 1e-12 * norm):
            raise NotPositiveDefinite(f"matrix is near-singular (min eigenvalue {w[0]:.3e})")
    elif w[0] < -CLIP_REL * norm:
        raise NotPositiveDefinite(f"matrix has negative eigenvalue {w[0]:.3e}")
    w = np.clip(w, 0.0, None)
    out = (q * fn(w)) @ q.T
    return 0.5 * (out + out.T)


def sqrt_psd(a) -> np.ndarray:
    """Principal square root of a positive semidefinite matrix."""
    return _spectral_fn(a, np.sqrt, require_pd=False)


def invsqrt_pd(a) -> np.ndarray:
    """Inverse principal square root of a positive definite matrix."""
    return _spectral_fn(a, lambda w: 1.0 / np.sqrt(w), require_pd=True)


def min_eig(a) -> float:
    return float(np.linalg.eigvalsh(_as_symmetric(a))[0])
