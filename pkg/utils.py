import os
import logging
from typing import Dict, Optional

import numpy as np

from exceptions import ConfigurationError, NumericError

PSD_TOLERANCE = 1e-9

# Named sub-streams derived from one master seed. Each noise source owns its
# stream so switching one source off never shifts the draws of another.
STREAM_IDS: Dict[str, int] = {
    'init': 0,
    'process': 1,
    'measurement': 2,
    'channel': 3,
    'queries': 4,
    'policy': 5,
    'estimator': 6,
    'replay': 7,
    'network': 8,
}
DERIVED_SEED_KEY = 1000


def env_int(name: str, default: int) -> int:
    """
    Read an integer from the environment, falling back to default on bad input.
    """
    raw = os.getenv(name)
    if raw is None or raw == '':
        return default
    try:
        return int(raw)
    except ValueError:
        logging.warning(f"Invalid {name}={raw!r}, defaulting to {default}")
        return default


def make_stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """
    Return the named random stream for a master seed.

    extra indices (episode number, client index, ...) select independent
    children of the same named stream.
    """
    if name not in STREAM_IDS:
        raise ConfigurationError(f"Unknown random stream {name!r}")
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAM_IDS[name],) + tuple(int(e) for e in extra))
    return np.random.default_rng(seq)


def derive_seed(seed: int, *extra: int) -> int:
    """
    Deterministic 63-bit child seed, used to hand episodes their own master seed.
    """
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(DERIVED_SEED_KEY,) + tuple(int(e) for e in extra))
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def min_eigenvalue(matrix: np.ndarray) -> float:
    """
    Smallest eigenvalue of the symmetric part of a square matrix.
    """
    if matrix.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(symmetrize(matrix))[0])


def is_psd(matrix: np.ndarray, tol: float = PSD_TOLERANCE) -> bool:
    """
    True if matrix is symmetric (to tol) and its smallest eigenvalue is >= -tol.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        return False
    if not np.all(np.isfinite(matrix)):
        return False
    if np.max(np.abs(matrix - matrix.T), initial=0.0) > tol:
        return False
    return min_eigenvalue(matrix) >= -tol


def psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    """
    Symmetric square root S with S @ S.T == matrix.

    Negative eigenvalues (rounding noise on singular covariances) are clipped at
    zero, so PSD-but-singular matrices are accepted where Cholesky would fail.
    """
    matrix = symmetrize(np.asarray(matrix, dtype=float))
    if matrix.size == 0:
        return matrix.copy()
    eigvals, eigvecs = np.linalg.eigh(matrix)
    root = np.sqrt(np.clip(eigvals, 0.0, None))
    return (eigvecs * root) @ eigvecs.T


def sample_gaussian(mean: np.ndarray, cov_sqrt: np.ndarray, rng: np.random.Generator,
                    size: Optional[int] = None) -> np.ndarray:
    """
    Draw from N(mean, S S^T) given the symmetric root S.

    Returns a vector when size is None, else an array of shape (size, M).
    """
    dim = len(mean)
    if size is None:
        return mean + cov_sqrt @ rng.standard_normal(dim)
    return mean + rng.standard_normal((size, dim)) @ cov_sqrt.T


def spectral_radius(matrix: np.ndarray) -> float:
    if matrix.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(matrix))))


def lyapunov_fixed_point(A: np.ndarray, sigma_v: np.ndarray, tol: float = 1e-10,
                         max_iter: int = 100000) -> np.ndarray:
    """
    Stationary covariance: fixed point of S = A S A^T + sigma_v, by iteration.

    Raises NumericError if A is not stable or the iteration does not settle.
    """
    A = np.asarray(A, dtype=float)
    sigma_v = np.asarray(sigma_v, dtype=float)
    if spectral_radius(A) >= 1.0:
        raise NumericError(f"No stationary covariance: spectral radius of A is {spectral_radius(A):.4f} >= 1")
    sigma = sigma_v.copy()
    for _ in range(max_iter):
        nxt = symmetrize(A @ sigma @ A.T + sigma_v)
        if np.max(np.abs(nxt - sigma), initial=0.0) < tol:
            return nxt
        sigma = nxt
    raise NumericError(f"Lyapunov iteration did not converge in {max_iter} steps")
