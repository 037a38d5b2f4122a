"""Exact and Monte-Carlo optimal transport distances between empirical measures.

All measures are uniform over equally sized samples, so the 1D distance is the
sort-and-pair formula and the brute-force oracle only needs permutation
couplings.
"""

from __future__ import annotations

import itertools

import numpy as np

__all__ = [
    "EqualCountRequired",
    "OracleTooLarge",
    "wasserstein_1d",
    "emd_bruteforce",
    "radon_project",
    "sample_directions",
    "sliced_wasserstein",
]

MAX_ORACLE_POINTS = 8


class EqualCountRequired(ValueError):
    """Raised when two empirical measures do not have the same number of atoms."""


class OracleTooLarge(ValueError):
    """Raised when the factorial oracle is asked for more than 8 points."""


def _as_cloud(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected an (n, d) point cloud with n, d >= 1, got shape {arr.shape}")
    return arr


def _check_p(p: float) -> float:
    p = float(p)
    if not p > 0:
        raise ValueError(f"p must be positive, got {p}")
    return p


def wasserstein_1d(xs, ys, p: float = 1.0) -> float:
    """p-Wasserstein distance between two equal-size 1D samples.

    Both samples are sorted and matched rank by rank::

        W_p = (mean_i |x_(i) - y_(i)|^p)^(1/p)
    """
    p = _check_p(p)
    xs = np.sort(np.asarray(xs, dtype=np.float64).ravel())
    ys = np.sort(np.asarray(ys, dtype=np.float64).ravel())
    if xs.size != ys.size:
        raise EqualCountRequired(f"sample counts differ: {xs.size} != {ys.size}")
    if xs.size == 0:
        raise ValueError("samples must be non-empty")
    cost = np.mean(np.abs(xs - ys) ** p)
    return float(cost ** (1.0 / p))


def emd_bruteforce(xs, ys, p: float = 1.0) -> float:
    """Exact p-Wasserstein distance by enumerating every permutation coupling.

    Ground cost is the Euclidean distance. Intended as a test oracle, so it
    refuses clouds with more than 8 points.
    """
    p = _check_p(p)
    X = _as_cloud(xs)
    Y = _as_cloud(ys)
    if X.shape[0] != Y.shape[0]:
        raise EqualCountRequired(f"sample counts differ: {X.shape[0]} != {Y.shape[0]}")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} != {Y.shape[1]}")
    n = X.shape[0]
    if n > MAX_ORACLE_POINTS:
        raise OracleTooLarge(f"brute force limited to n <= {MAX_ORACLE_POINTS}, got {n}")
    cost = np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=-1) ** p
    rows = np.arange(n)
    best = min(cost[rows, list(perm)].sum() for perm in itertools.permutations(range(n)))
    return float((best / n) ** (1.0 / p))


def radon_project(cloud, direction) -> np.ndarray:
    """Project every point of ``cloud`` onto the unit vector ``direction``."""
    X = _as_cloud(cloud)
    theta = np.asarray(direction, dtype=np.float64).ravel()
    if theta.size != X.shape[1]:
        raise ValueError(f"direction has dimension {theta.size}, cloud has {X.shape[1]}")
    return X @ theta


def sample_directions(d: int, n_proj: int, seed: int) -> np.ndarray:
    """Draw ``n_proj`` directions uniformly on the unit sphere in R^d.

    Normalized isotropic Gaussians; rows of the returned (n_proj, d) array.
    """
    rng = np.random.default_rng(seed)
    while True:
        g = rng.standard_normal((n_proj, d))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        if np.all(norms > 0):
            return g / norms


def sliced_wasserstein(X, Y, p: float = 1.0, n_proj: int = 64, seed: int = 0) -> float:
    """Monte-Carlo sliced p-Wasserstein distance.

    Averages W_p^p of the projected samples over ``n_proj`` random directions
    and takes the 1/p root. Deterministic for a fixed ``seed``.
    """
    p = _check_p(p)
    if n_proj < 1:
        raise ValueError("n_proj must be >= 1")
    X = _as_cloud(X)
    Y = _as_cloud(Y)
    if X.shape[0] != Y.shape[0]:
        raise EqualCountRequired(f"sample counts differ: {X.shape[0]} != {Y.shape[0]}")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} != {Y.shape[1]}")
    thetas = sample_directions(X.shape[1], n_proj, seed)
    px = np.sort(X @ thetas.T, axis=0)
    py = np.sort(Y @ thetas.T, axis=0)
    per_dir = np.mean(np.abs(px - py) ** p, axis=0)
    # fixed summation order keeps the result reproducible
    return float(np.sum(per_dir) / n_proj) ** (1.0 / p)
