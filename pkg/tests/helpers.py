"""Shared oracles and factories for the test suite.

The oracles here deliberately re-derive results through independent
routes (memoized path enumeration, QR solves, plain-loop statistics) so
the production code is never checked against itself.
"""

from functools import lru_cache

import numpy as np

from elasto import (
    DeformationSpec,
    DpConfig,
    Inclusion,
    ModeBasis,
    PhantomSpec,
    RfFrame,
    learn_modes,
    synthesize_pair,
)

DESK_DIMS = (128, 48)
DESK_DP = DpConfig(search_range=8, num_lines=5, lateral_search_range=4)


def exhaustive_best_path(data_cost: np.ndarray, alpha: float, offsets: np.ndarray) -> np.ndarray:
    """Minimum-cost path by memoized enumeration of the full path space."""
    m, s = data_cost.shape

    @lru_cache(maxsize=None)
    def tail(i, k):
        here = data_cost[i, k]
        if i == m - 1:
            return here, (k,)
        best = None
        for nxt in range(s):
            cost, rest = tail(i + 1, nxt)
            total = here + alpha * (offsets[k] - offsets[nxt]) ** 2 + cost
            if best is None or total < best[0]:
                best = (total, (k,) + rest)
        return best

    best = None
    for k in range(s):
        cost, path = tail(0, k)
        if best is None or cost < best[0]:
            best = (cost, path)
    tail.cache_clear()
    return offsets[list(best[1])]


def literal_enumeration_best_cost(data_cost: np.ndarray, alpha: float, offsets: np.ndarray) -> float:
    """Brute force over every explicit path; only viable for tiny instances."""
    from itertools import product

    m, s = data_cost.shape
    best = np.inf
    for states in product(range(s), repeat=m):
        total = data_cost[0, states[0]]
        for i in range(1, m):
            total += data_cost[i, states[i]] + alpha * (offsets[states[i]] - offsets[states[i - 1]]) ** 2
        best = min(best, total)
    return best


def qr_solve_regularized(a_matrix: np.ndarray, c: np.ndarray, lam: float) -> np.ndarray:
    """Least squares with Tikhonov weight lam via QR of the augmented system."""
    k, n = a_matrix.shape
    stacked = np.vstack([a_matrix, np.sqrt(lam) * np.eye(n)])
    rhs = np.concatenate([c, np.zeros(n)])
    q, r = np.linalg.qr(stacked)
    return np.linalg.solve(r, q.T @ rhs)


def random_phantom_spec(rng: np.random.Generator, dims=DESK_DIMS, n_inclusions=3) -> PhantomSpec:
    m, l = dims
    inclusions = tuple(
        Inclusion(
            center=(rng.uniform(0.2 * m, 0.82 * m), rng.uniform(0.125 * l, 0.875 * l)),
            radius=rng.uniform(5, 12),
            relative_stiffness=rng.uniform(1.5, 5),
        )
        for _ in range(n_inclusions)
    )
    return PhantomSpec(dims=dims, inclusions=inclusions)


def oracle_trained_basis(n_modes=12, n_fields=60, seed=500, dims=DESK_DIMS) -> ModeBasis:
    """Quick basis from oracle fields plus jitter; cheap stand-in for unit tests."""
    rng = np.random.default_rng(seed)
    fields = []
    for k in range(n_fields):
        spec = random_phantom_spec(rng, dims=dims)
        if k % 3:
            deform = DeformationSpec("axial_compression", float(rng.uniform(0.005, 0.035)), seed + k)
        else:
            deform = DeformationSpec("in_plane_rotation", float(rng.uniform(-0.04, 0.04)), seed + k)
        _, _, oracle = synthesize_pair(spec, deform)
        fields.append(oracle.axial + 0.02 * rng.standard_normal(oracle.axial.shape))
    return learn_modes(fields, n_modes)


def zero_mean_basis(dims=(64, 8), n_modes=3, seed=0) -> ModeBasis:
    """Random orthonormal modes with a zero mean field (exact projection identities)."""
    m, l = dims
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((m * l, n_modes)))
    modes = q.T.copy()
    for k in range(n_modes):
        peak = np.argmax(np.abs(modes[k]))
        if modes[k, peak] < 0:
            modes[k] = -modes[k]
    return ModeBasis(
        modes=modes,
        mean=np.zeros(m * l),
        eigenvalues=np.linspace(3.0, 1.0, n_modes),
        explained_variance_ratio=0.99,
        source_dims=dims,
    )


def textured_frame(rng: np.random.Generator, m=128, l=48) -> RfFrame:
    """RF-like speckle that is circularly continuous, so np.roll shifts are exact.

    Same carrier and envelope scales as the simulator PSF, but convolved in
    wrap mode: no dimmed boundary rows for DP paths to park in.
    """
    from scipy import ndimage

    t = np.arange(-12, 13, dtype=np.float64)
    kernel = np.exp(-(t**2) / (2 * 3.0**2)) * np.cos(2 * np.pi * 0.125 * t)
    img = ndimage.convolve1d(rng.standard_normal((m, l)), kernel, axis=0, mode="wrap")
    img = ndimage.gaussian_filter1d(img, sigma=1.0, axis=1, mode="wrap")
    img -= img.mean()
    return RfFrame(img / np.sqrt(np.mean(img**2)))
