"""Error-probability machinery: the closed-form Chernoff bound on pairwise
error, the least-favorable-rotation trace minimum with brute-force oracles,
and an exhaustive maximum-likelihood decoding Monte Carlo.
"""

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._util import MC_CHUNK, complex_normal, spawn_rng, wilson_interval
from .codes import effective_difference
from .precoder import apply_precoder


@dataclass(frozen=True)
class PepBound:
    """Closed-form average pairwise error bound and the eigenvalues behind it."""

    value: float
    eigs_used: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0 + 1e-12:
            raise ValueError("bound must lie in [0, 1]")


def pep_chernoff(cov, e, snr, num_rx):
    """Average Chernoff bound on mistaking one codeword for another.

    Closed form: the product over the structurally nonzero eigenvalues lam_k
    of the effective difference of (1 + snr * lam_k / (4 * num_tx)) ** -num_rx.
    This is the exact expectation of the Gaussian-tail exponent over the
    fading distribution, so a Monte-Carlo average of
    exp(-snr/(4 num_tx) * sum_n ||H_n e_n||^2) converges to it.
    """
    if snr < 0:
        raise ValueError("snr must be nonnegative")
    e = np.asarray(e, dtype=complex)
    num_tx = e.shape[0]
    eff = effective_difference(cov, e)
    eigs = np.clip(eff.nonzero_eigs, 0.0, None)
    value = float(np.prod((1.0 + snr * eigs / (4.0 * num_tx)) ** (-num_rx)))
    return PepBound(value=value, eigs_used=eigs)


@dataclass(frozen=True)
class TraceBoundInstance:
    """Two ascending nonnegative weight profiles, the shorter applied first."""

    lam: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        theta = np.asarray(self.theta, dtype=float)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "theta", theta)
        if lam.size > theta.size:
            raise ValueError("lam must not be longer than theta")
        for arr, name in ((lam, "lam"), (theta, "theta")):
            if np.any(arr < 0):
                raise ValueError(f"{name} must be nonnegative")
            if np.any(np.diff(arr) < 0):
                raise ValueError(f"{name} must be sorted ascending")


def least_favorable_trace(inst):
    """Minimum of Tr(L Q T Q^H L^H) over unitary Q: anti-sorted pairing.

    L embeds sqrt(lam) on the main diagonal of an m x n matrix and T is
    diag(theta); the minimum pairs the largest lam with the smallest theta.
    """
    m = inst.lam.size
    return float(np.dot(inst.lam, inst.theta[:m][::-1]))


def _trace_value(inst, unitary):
    m = inst.lam.size
    weights = np.abs(unitary[:m]) ** 2
    return float(inst.lam @ (weights @ inst.theta))


def trace_oracle(inst, num_random_unitaries=1000, master_seed=0):
    """Brute-force check of the trace minimum.

    Exhausts all permutation matrices (so theta sizes are capped at 7) and
    samples Haar-distributed unitaries from QR factorizations of Gaussian
    matrices. Raises if the closed form misses the permutation minimum or
    is beaten by any sampled rotation.
    """
    n = inst.theta.size
    if n > 7:
        raise ValueError("permutation exhaustion capped at size 7")
    m = inst.lam.size
    perm_min = min(
        float(np.dot(inst.lam, np.asarray(perm)[:m]))
        for perm in itertools.permutations(inst.theta))
    closed = least_favorable_trace(inst)
    rng = spawn_rng(master_seed)
    sampled_min = np.inf
    for _ in range(num_random_unitaries):
        gauss = complex_normal(rng, (n, n))
        q = np.linalg.qr(gauss)[0]
        sampled_min = min(sampled_min, _trace_value(inst, q))
    if abs(closed - perm_min) > 1e-12 * max(1.0, abs(perm_min)):
        raise RuntimeError(f"closed form {closed} != permutation minimum {perm_min}")
    if sampled_min < closed - 1e-12 * max(1.0, abs(closed)):
        raise RuntimeError(f"sampled rotation beat the closed form: {sampled_min} < {closed}")
    return {"closed_form": closed, "perm_min": perm_min,
            "sampled_min": float(sampled_min)}


@dataclass(frozen=True)
class ErrorEstimate:
    error_rate: float
    trials: int
    errors: int
    ci_low: float
    ci_high: float


def _resolve_words(transmit):
    """Accept a Codebook or a (precoder, outer codebook) pair."""
    if isinstance(transmit, tuple):
        precoder, outer = transmit
        outer_words = outer.words
        if outer_words.ndim == 3:
            outer_words = outer_words[:, 0, :]
        return np.stack([apply_precoder(precoder, w) for w in outer_words])
    return np.asarray(transmit.words, dtype=complex)


def simulate_error_prob(cov, dims, transmit, snr, trials=10_000, master_seed=0,
                        noise_scale=1.0, workers=1):
    """Exhaustive-ML decoding error rate over random channels and noise.

    Per trial: draw a correlated channel, pick a codeword uniformly, add
    white complex Gaussian noise (scaled by ``noise_scale``; zero gives a
    sanity mode that must decode perfectly), decode by minimizing the
    slot-summed distance over the whole codebook. Wilson 95% interval.
    Designed for desk-scale codebooks; decoding cost is linear in the
    codebook size.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    words = _resolve_words(transmit)
    num_words, num_tx, n = words.shape
    if num_words < 1:
        raise ValueError("codebook must be nonempty")
    if (num_tx, n) != (dims.num_tx, dims.block_len):
        raise ValueError("codeword shape does not match the channel dimensions")
    amp = np.sqrt(snr / num_tx)
    sqrt_factor = cov.sqrt_factor

    # decode in slices so chunk * codebook * slots stays bounded in memory;
    # slicing happens after all draws, so results match the unsliced path
    decode_slice = max(1, 4_000_000 // max(1, num_words * n * dims.num_rx))

    def run_chunk(chunk_idx):
        lo = chunk_idx * MC_CHUNK
        size = min(MC_CHUNK, trials - lo)
        rng = spawn_rng(master_seed, chunk_idx)
        white = complex_normal(rng, (size, n, dims.num_rx, num_tx))
        blocks = np.einsum("nk,ckij->cnij", sqrt_factor, white)
        sent = rng.integers(0, num_words, size)
        noise = noise_scale * complex_normal(rng, (size, n, dims.num_rx))
        wrong = 0
        for s0 in range(0, size, decode_slice):
            s1 = min(s0 + decode_slice, size)
            # faded candidates for every draw and word: (slice, words, slots, rx)
            faded = np.einsum("cnij,wjn->cwni", blocks[s0:s1], words)
            received = amp * faded[np.arange(s1 - s0), sent[s0:s1]] + noise[s0:s1]
            metric = np.sum(np.abs(received[:, None] - amp * faded) ** 2, axis=(2, 3))
            decoded = np.argmin(metric, axis=1)
            wrong += int(np.count_nonzero(decoded != sent[s0:s1]))
        return wrong, size

    num_chunks = (trials + MC_CHUNK - 1) // MC_CHUNK
    errors = 0
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for err, _ in pool.map(run_chunk, range(num_chunks)):
                errors += err
    else:
        for idx in range(num_chunks):
            errors += run_chunk(idx)[0]
    low, high = wilson_interval(errors, trials)
    return ErrorEstimate(error_rate=errors / trials, trials=trials, errors=errors,
                         ci_low=low, ci_high=high)


def pep_monte_carlo(cov, e, snr, dims, trials=100_000, master_seed=0):
    """Monte-Carlo average of the Gaussian-tail exponent the closed-form
    bound integrates; an independent oracle for ``pep_chernoff``."""
    e = np.asarray(e, dtype=complex)
    coef = snr / (4.0 * dims.num_tx)
    total = 0.0
    num_chunks = (trials + MC_CHUNK - 1) // MC_CHUNK
    for chunk_idx in range(num_chunks):
        size = min(MC_CHUNK, trials - chunk_idx * MC_CHUNK)
        rng = spawn_rng(master_seed, chunk_idx)
        white = complex_normal(rng, (size, dims.block_len, dims.num_rx, dims.num_tx))
        blocks = np.einsum("nk,ckij->cnij", cov.sqrt_factor, white)
        faded = np.einsum("cnij,jn->cni", blocks, e)
        exponent = coef * np.sum(np.abs(faded) ** 2, axis=(1, 2))
        total += float(np.sum(np.exp(-exponent)))
    return total / trials
