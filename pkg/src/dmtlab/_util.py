"""Shared numerical helpers: FFT matrices, rank tolerances, seeding, intervals."""

import numpy as np

# Eigenvalues below RANK_TOL_FACTOR * max_eig * n are treated as structural zeros.
RANK_TOL_FACTOR = 1e-10

# Fixed Monte-Carlo chunk size. Must stay constant so that per-chunk seeds,
# and therefore results, do not depend on worker count.
MC_CHUNK = 16384

# Adaptive stopping is checked every MC_WAVE chunks, independent of workers.
MC_WAVE = 8

_Z95 = 1.959963984540054


def unitary_fft(n):
    """Unitary DFT matrix, entry (k, l) = exp(-2j*pi*k*l/n) / sqrt(n)."""
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def fft_column(n, idx):
    """Column ``idx`` of the n-point unitary DFT matrix."""
    return np.exp(-2j * np.pi * idx * np.arange(n) / n) / np.sqrt(n)


def cyclic_shift_matrix(n, power=1):
    """Cyclic delay matrix P with P[i, j] = 1 iff i == (j + power) mod n,
    so (P @ v)[i] = v[(i - power) mod n]."""
    return np.eye(n)[:, (np.arange(n) + power) % n]


def forward_shift_matrix(n, power=1):
    """Nilpotent forward shift: (S^p v)[i] = v[i - p], zero below index p."""
    mat = np.zeros((n, n))
    if power < n:
        mat[np.arange(power, n), np.arange(n - power)] = 1.0
    return mat


def rank_tolerance(values, n):
    """Threshold below which eigen/singular values count as zero."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return 0.0
    return RANK_TOL_FACTOR * np.max(np.abs(values)) * n


def numerical_rank(mat):
    """Rank from singular values with the common scaled tolerance."""
    sv = np.linalg.svd(np.asarray(mat), compute_uv=False)
    return int(np.count_nonzero(sv > rank_tolerance(sv, max(mat.shape))))


def eig_rank(eigvals, n):
    """Rank from the eigenvalues of an n x n Hermitian PSD matrix."""
    w = np.asarray(eigvals, dtype=float)
    return int(np.count_nonzero(w > rank_tolerance(w, n)))


def assert_hermitian(mat, what="matrix", rtol=1e-10):
    scale = max(np.max(np.abs(mat)), 1.0)
    if np.max(np.abs(mat - mat.conj().T)) > rtol * scale:
        raise ValueError(f"{what} is not Hermitian within tolerance")


def spawn_rng(master_seed, *path):
    """Independent generator derived from (master seed, index path).

    The same (seed, path) always yields the same stream, which keeps
    chunked Monte-Carlo runs reproducible regardless of scheduling.
    """
    return np.random.default_rng(np.random.SeedSequence((int(master_seed),) + tuple(int(p) for p in path)))


def complex_normal(rng, shape):
    """Circularly-symmetric unit-variance complex Gaussians (re/im var 1/2)."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def wilson_interval(events, trials, z=_Z95):
    """Wilson score interval for a binomial proportion at 95% confidence."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    p_hat = events / trials
    denom = 1.0 + z * z / trials
    center = (p_hat + z * z / (2 * trials)) / denom
    half = z * np.sqrt(p_hat * (1 - p_hat) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def db_to_linear(snr_db):
    return 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0)


def linear_to_db(snr):
    return 10.0 * np.log10(np.asarray(snr, dtype=float))
