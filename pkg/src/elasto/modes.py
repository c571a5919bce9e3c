"""Learning principal displacement modes from a corpus of axial fields.

The corpus covariance is diagonalized through its Gram matrix (snapshot
trick): the K x K Gram of the centered snapshots shares its nonzero
eigenvalues with the full covariance, so the leading eigenvectors of an
m*l-dimensional covariance are recovered at corpus-size cost.
"""

from __future__ import annotations

import numpy as np

from .types import DisplacementField, ModeBasis, WeightVector

# Gram eigenvalues below this fraction of the largest are treated as rank noise.
_RANK_RTOL = 1e-10


def _as_axial_matrix(fields) -> tuple[np.ndarray, tuple[int, int]]:
    arrays = []
    dims = None
    for f in fields:
        a = f.axial if isinstance(f, DisplacementField) else np.asarray(f, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError("each field must be a 2-D axial displacement")
        if dims is None:
            dims = a.shape
        elif a.shape != dims:
            raise ValueError(f"field shape {a.shape} != corpus shape {dims}")
        arrays.append(a.reshape(-1))
    if dims is None:
        raise ValueError("empty corpus")
    return np.stack(arrays, axis=1), dims


def learn_modes(fields, n_modes: int) -> ModeBasis:
    """Mean-centered snapshot PCA of axial displacement fields.

    Returns the top ``n_modes`` unit-norm eigenvectors of the sample
    covariance (1/n) X'X'^T in descending eigenvalue order, with each
    mode's largest-magnitude entry made positive.
    """
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    snapshots, dims = _as_axial_matrix(fields)
    n = snapshots.shape[1]
    if n < n_modes + 1:
        raise ValueError(f"need at least {n_modes + 1} fields, got {n}")
    mean = snapshots.mean(axis=1)
    centered = snapshots - mean[:, None]
    gram = centered.T @ centered / n
    eigvals, eigvecs = np.linalg.eigh(gram)
    eigvals = eigvals[::-1]
    eigvecs = eigvecs[:, ::-1]
    eigvals = np.clip(eigvals, 0.0, None)
    total_variance = float(eigvals.sum())
    if total_variance <= 0.0:
        raise ValueError("corpus has zero variance; no modes to learn")
    rank = int(np.sum(eigvals > _RANK_RTOL * eigvals[0]))
    if n_modes > rank:
        raise ValueError(f"requested {n_modes} modes but corpus rank is {rank}")

    modes = np.empty((n_modes, centered.shape[0]))
    for k in range(n_modes):
        v = centered @ eigvecs[:, k]
        modes[k] = v / np.linalg.norm(v)
    # QR polish keeps orthonormality at machine precision even for close eigenvalues
    q, r = np.linalg.qr(modes.T)
    modes = (q * np.sign(np.diag(r))).T
    for k in range(n_modes):
        peak = np.argmax(np.abs(modes[k]))
        if modes[k, peak] < 0:
            modes[k] = -modes[k]

    return ModeBasis(
        modes=modes,
        mean=mean,
        eigenvalues=eigvals[:n_modes],
        explained_variance_ratio=min(1.0, float(eigvals[:n_modes].sum() / total_variance)),
        source_dims=dims,
    )


def project(basis: ModeBasis, field) -> WeightVector:
    """Decompose a field onto the modes (learned mean subtracted first)."""
    a = field.axial if isinstance(field, DisplacementField) else np.asarray(field, dtype=np.float64)
    m, l = basis.source_dims
    if a.shape != (m, l):
        raise ValueError(f"field shape {a.shape} != basis dims {(m, l)}")
    centered = a.reshape(-1) - basis.mean
    w = basis.modes @ centered
    residual = float(np.linalg.norm(centered - basis.modes.T @ w))
    return WeightVector(w=w, residual_norm=residual)


def reconstruct(basis: ModeBasis, weights) -> np.ndarray:
    """Mean field plus the weighted mode combination, shaped (m, l)."""
    w = weights.w if isinstance(weights, WeightVector) else np.asarray(weights, dtype=np.float64)
    if w.shape != (basis.n_modes,):
        raise ValueError(f"expected {basis.n_modes} weights, got shape {w.shape}")
    m, l = basis.source_dims
    return (basis.mean + basis.modes.T @ w).reshape(m, l)


def truncate_basis(basis: ModeBasis, n_modes: int) -> ModeBasis:
    """Keep the leading ``n_modes`` modes; the variance ratio is rescaled accordingly."""
    if not 1 <= n_modes <= basis.n_modes:
        raise ValueError(f"n_modes must lie in [1, {basis.n_modes}]")
    if n_modes == basis.n_modes:
        return basis
    kept = float(np.sum(basis.eigenvalues[:n_modes]))
    covered = float(np.sum(basis.eigenvalues))
    if basis.explained_variance_ratio > 0 and covered > 0:
        total = covered / basis.explained_variance_ratio
        ratio = min(1.0, kept / total)
    else:
        ratio = 0.0
    return ModeBasis(
        modes=basis.modes[:n_modes],
        mean=basis.mean,
        eigenvalues=basis.eigenvalues[:n_modes],
        explained_variance_ratio=ratio,
        source_dims=basis.source_dims,
    )
