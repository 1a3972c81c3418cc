"""Mutual information, outage Monte Carlo, and diversity-multiplexing curves.

All rates are natural-log quantities; the CLI converts to bits for display.
The input covariance is the identity throughout: scaling it only shifts the
SNR axis by a constant factor, which leaves every diversity exponent
unchanged.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._util import MC_CHUNK, MC_WAVE, complex_normal, linear_to_db, spawn_rng, wilson_interval


@dataclass(frozen=True)
class FixedRate:
    """Rate held constant in SNR, in nats."""

    nats: float

    def rate_at(self, snr):
        return self.nats


@dataclass(frozen=True)
class ScalingRate:
    """Rate growing as mux_rate * log(SNR)."""

    mux_rate: float

    def rate_at(self, snr):
        return self.mux_rate * np.log(snr)


@dataclass(frozen=True)
class SnrPoint:
    snr: float
    rate_mode: object

    def __post_init__(self):
        if self.snr <= 0:
            raise ValueError("snr must be a positive linear power ratio")

    def rate_nats(self):
        return float(self.rate_mode.rate_at(self.snr))


@dataclass(frozen=True)
class DmtCurve:
    """Piecewise-linear diversity curve through integer multiplexing rates."""

    points: tuple  # ((r, d), ...) at r = 0..min_ant

    def __post_init__(self):
        diversities = [d for _, d in self.points]
        if any(b > a + 1e-12 for a, b in zip(diversities, diversities[1:])):
            raise ValueError("diversity must be nonincreasing in the multiplexing rate")
        if abs(diversities[-1]) > 1e-12:
            raise ValueError("diversity must vanish at the maximal multiplexing rate")

    def evaluate(self, r):
        xs = np.array([p[0] for p in self.points], dtype=float)
        ys = np.array([p[1] for p in self.points], dtype=float)
        return float(np.interp(r, xs, ys))


@dataclass(frozen=True)
class OutageEstimate:
    probability: float
    trials: int
    outage_events: int
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class SingularityLevels:
    """Eigenvalue decay rates relative to the SNR, per slot and for the stack."""

    per_slot: np.ndarray  # (block_len, min_ant), ascending eigenvalues
    jensen: np.ndarray    # (min_ant,), sorted descending


def mutual_information(realization, snr):
    """Average log-det mutual information of the per-slot channels, in nats."""
    if snr < 0:
        raise ValueError("snr must be nonnegative")
    num_tx = realization.dims.num_tx
    total = 0.0
    for block in realization.blocks:
        gram = np.eye(block.shape[0]) + (snr / num_tx) * block @ block.conj().T
        total += np.linalg.slogdet(gram)[1]
    return total / realization.dims.block_len


def jensen_mutual_information(realization, snr):
    """Log-det capacity of the stacked wide channel; upper-bounds the
    per-slot average by concavity of log det."""
    if snr < 0:
        raise ValueError("snr must be nonnegative")
    dims = realization.dims
    stack = realization.jensen_stack()
    gram = stack @ stack.conj().T
    scaled = np.eye(gram.shape[0]) + (snr / (dims.num_tx * dims.block_len)) * gram
    return float(np.linalg.slogdet(scaled)[1])


def singularity_levels(realization, snr):
    """Per-slot and stacked eigenvalue decay exponents at the given SNR.

    Level a maps eigenvalue lam through lam = snr**(-a); zero eigenvalues
    produce +inf so that clipped terms drop out of rate sums naturally.
    """
    if snr <= 1:
        raise ValueError("snr must exceed 1 so that log(snr) is positive")
    dims = realization.dims
    log_snr = np.log(snr)
    per_slot = np.empty((dims.block_len, dims.min_ant))
    for n, block in enumerate(realization.blocks):
        sv = np.linalg.svd(block, compute_uv=False)
        eig = np.sort(sv ** 2)  # ascending, exactly min_ant values
        with np.errstate(divide="ignore"):
            per_slot[n] = -np.log(eig) / log_snr
    stack = realization.jensen_stack()
    eig = np.sort(np.linalg.svd(stack, compute_uv=False) ** 2)
    with np.errstate(divide="ignore"):
        jensen = -np.log(eig) / log_snr  # ascending eigenvalues give descending levels
    return SingularityLevels(per_slot=per_slot, jensen=jensen)


def jensen_dmt_curve(rho, dims, variant="jensen"):
    """Closed-form diversity-multiplexing curve of the stacked channel.

    Parameters
    ----------
    rho : int
        Rank of the slot covariance matrix.
    dims : ChannelDims
    variant : {"jensen", "independent"}
        "jensen" gives d(r) = (rho*M - r)(m - r) at integer r; "independent"
        gives d(r) = rho*(M - r)(m - r), the curve of coding separately over
        rho independent channels. The independent curve never exceeds the
        jensen curve.
    """
    if rho < 1:
        raise ValueError("covariance rank must be at least 1")
    m, big_m = dims.min_ant, dims.max_ant
    points = []
    for r in range(m + 1):
        if variant == "jensen":
            d = (rho * big_m - r) * (m - r)
        elif variant == "independent":
            d = rho * (big_m - r) * (m - r)
        else:
            raise ValueError(f"unknown variant: {variant!r}")
        points.append((r, d))
    return DmtCurve(points=tuple(points))


def _mutual_information_batch(blocks, snr, num_tx):
    """Per-draw average log-det over a (count, N, M_R, M_T) batch."""
    count, n, num_rx, _ = blocks.shape
    if num_rx == 1 and num_tx == 1:
        power = np.abs(blocks[:, :, 0, 0]) ** 2
        return np.log1p(snr * power).mean(axis=1)
    gram = np.einsum("cnij,cnkj->cnik", blocks, blocks.conj())
    gram = np.eye(num_rx) + (snr / num_tx) * gram
    return np.linalg.slogdet(gram)[1].sum(axis=1) / n


def _jensen_information_batch(blocks, snr, num_tx):
    count, n, num_rx, _ = blocks.shape
    if num_rx <= num_tx:
        gram = np.einsum("cnij,cnkj->cik", blocks, blocks.conj())
        side = num_rx
    else:
        gram = np.einsum("cnji,cnjk->cik", blocks.conj(), blocks)
        side = num_tx
    gram = np.eye(side) + (snr / (num_tx * n)) * gram
    return np.linalg.slogdet(gram)[1]


def estimate_outage(cov, dims, point, bound="full", trials=100_000, master_seed=0,
                    min_events=100, workers=1):
    """Monte-Carlo outage probability with a 95% Wilson interval.

    Parameters
    ----------
    cov : CovarianceMatrix
    dims : ChannelDims
    point : SnrPoint
    bound : {"full", "jensen"}
        Whether outage is declared on the per-slot average information or on
        the stacked-channel upper bound.
    trials : int
        Trial cap. Sampling stops early once ``min_events`` outage events
        have accumulated (checked on a fixed chunk schedule so results do
        not depend on the worker count); ``min_events`` of None or 0 always
        runs the full cap.
    master_seed : int
        Chunk c draws from the generator seeded by (master_seed, c), so a
        fixed seed gives byte-identical results for any ``workers``.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    if isinstance(point.rate_mode, ScalingRate):
        r = point.rate_mode.mux_rate
        if not 0 <= r <= dims.min_ant:
            raise ValueError("multiplexing rate must lie in [0, min_ant]")
    if bound not in ("full", "jensen"):
        raise ValueError(f"unknown bound: {bound!r}")
    rate = point.rate_nats()
    snr = point.snr
    sqrt_factor = cov.sqrt_factor
    n = dims.block_len

    def run_chunk(chunk_idx):
        lo = chunk_idx * MC_CHUNK
        size = min(MC_CHUNK, trials - lo)
        rng = spawn_rng(master_seed, chunk_idx)
        white = complex_normal(rng, (size, n, dims.num_rx, dims.num_tx))
        blocks = np.einsum("nk,ckij->cnij", sqrt_factor, white)
        if bound == "full":
            info = _mutual_information_batch(blocks, snr, dims.num_tx)
        else:
            info = _jensen_information_batch(blocks, snr, dims.num_tx)
        return int(np.count_nonzero(info < rate)), size

    num_chunks = (trials + MC_CHUNK - 1) // MC_CHUNK
    events = 0
    done = 0
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for wave_start in range(0, num_chunks, MC_WAVE):
            wave = range(wave_start, min(wave_start + MC_WAVE, num_chunks))
            results = pool.map(run_chunk, wave) if pool else map(run_chunk, wave)
            for ev, size in results:
                events += ev
                done += size
            if min_events and events >= min_events:
                break
    finally:
        if pool:
            pool.shutdown()
    low, high = wilson_interval(events, done)
    return OutageEstimate(probability=events / done, trials=done,
                          outage_events=events, ci_low=low, ci_high=high)


def fit_diversity_slope(curve, window_db):
    """Least-squares slope of -log(probability) against log(snr).

    Parameters
    ----------
    curve : sequence of (snr, probability)
        SNR in linear units.
    window_db : (low, high)
        Only points whose SNR in dB falls inside the window are used.

    Returns
    -------
    (slope, stderr)
    """
    lo, hi = window_db
    xs, ys = [], []
    for snr, prob in curve:
        if not lo - 1e-9 <= linear_to_db(snr) <= hi + 1e-9:
            continue
        if prob <= 0:
            warnings.warn(f"excluding zero-probability point at snr={snr!r}")
            continue
        xs.append(np.log(snr))
        ys.append(-np.log(prob))
    if len(xs) < 3:
        raise ValueError("need at least 3 usable points inside the window")
    x = np.array(xs) - np.mean(xs)
    y = np.array(ys)
    slope = float(np.dot(x, y) / np.dot(x, x))
    resid = y - np.mean(y) - slope * x
    dof = len(xs) - 2
    stderr = float(np.sqrt(np.dot(resid, resid) / dof / np.dot(x, x)))
    return slope, stderr
