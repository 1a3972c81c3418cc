"""Channel statistics and sampling for selective-fading MIMO links.

Covers the slot-covariance constructions (flat, fast, block fading, cyclic
multipath, time-frequency selective), the two-level circulant surrogate with
its analytically known eigenstructure, correlated channel sampling, and the
block-circulant matrix view of cyclic multipath channels.
"""

import json
from dataclasses import dataclass

import numpy as np

from ._util import (
    assert_hermitian,
    complex_normal,
    numerical_rank,
    rank_tolerance,
    unitary_fft,
)


@dataclass(frozen=True)
class ChannelDims:
    """Antenna counts and block length of a MIMO transmission."""

    num_tx: int
    num_rx: int
    block_len: int

    def __post_init__(self):
        if self.num_tx < 1 or self.num_rx < 1:
            raise ValueError("antenna counts must be positive")
        if self.block_len < 1:
            raise ValueError("block length must be positive")

    @property
    def min_ant(self):
        return min(self.num_tx, self.num_rx)

    @property
    def max_ant(self):
        return max(self.num_tx, self.num_rx)


@dataclass(frozen=True)
class ScatteringSpec:
    """Brick-wall delay-Doppler spectrum with its time-frequency signalling grid.

    The spectrum is constant on [0, tau0] x [0, nu0] and zero elsewhere; the
    grid spacings must satisfy grid_t <= 1/nu0 and grid_f <= 1/tau0 so that
    one spectral period covers the support.
    """

    tau0: float
    nu0: float
    grid_t: float
    grid_f: float
    num_time: int
    num_freq: int
    sigma2: float = 1.0

    def __post_init__(self):
        if self.tau0 <= 0 or self.nu0 <= 0:
            raise ValueError("delay and Doppler spreads must be positive")
        if self.tau0 * self.nu0 >= 1.0:
            raise ValueError("spread product tau0*nu0 must be below 1 (underspread)")
        if self.grid_t > 1.0 / self.nu0 + 1e-12 or self.grid_f > 1.0 / self.tau0 + 1e-12:
            raise ValueError("grid spacing exceeds the inverse channel spread")
        if self.num_time < 1 or self.num_freq < 1:
            raise ValueError("slot counts must be positive")
        if self.sigma2 <= 0:
            raise ValueError("per-coefficient power must be positive")

    @classmethod
    def from_normalized(cls, doppler_time, delay_freq, num_time, num_freq, sigma2=1.0):
        """Build a spec from the dimensionless products nu0*T and tau0*F."""
        return cls(tau0=float(delay_freq), nu0=float(doppler_time), grid_t=1.0,
                   grid_f=1.0, num_time=num_time, num_freq=num_freq, sigma2=sigma2)

    @property
    def block_len(self):
        return self.num_time * self.num_freq

    @property
    def doppler_slots(self):
        """Number of occupied Doppler bins of the circulant surrogate."""
        return int(np.floor(self.nu0 * self.grid_t * self.num_time + 1e-12))

    @property
    def delay_slots(self):
        """Number of occupied delay bins of the circulant surrogate."""
        return int(np.floor(self.tau0 * self.grid_f * self.num_freq + 1e-12))

    def correlation(self, dt, df):
        """Closed-form slot correlation of the brick-wall spectrum.

        Separable product of two sinc factors with linear phase; validated
        against direct 2-D quadrature of the spectrum in the test suite.
        """
        return (self.sigma2
                * np.exp(1j * np.pi * self.nu0 * dt) * np.sinc(self.nu0 * dt)
                * np.exp(-1j * np.pi * self.tau0 * df) * np.sinc(self.tau0 * df))


class Flat:
    """All slots see the same draw; covariance is the all-ones matrix."""

    def __repr__(self):
        return "Flat()"


class Fast:
    """Independent draw per slot; covariance is the identity."""

    def __repr__(self):
        return "Fast()"


@dataclass(frozen=True)
class BlockFading:
    num_blocks: int
    block_len: int

    def __post_init__(self):
        if self.num_blocks < 1 or self.block_len < 1:
            raise ValueError("block counts must be positive")


@dataclass(frozen=True)
class CyclicIsi:
    """Cyclic multipath channel observed in the frequency domain."""

    num_taps: int
    power_delay_profile: tuple

    def __post_init__(self):
        pdp = tuple(float(p) for p in self.power_delay_profile)
        object.__setattr__(self, "power_delay_profile", pdp)
        if len(pdp) != self.num_taps:
            raise ValueError("power-delay profile length must equal the tap count")
        if any(p < 0 for p in pdp):
            raise ValueError("tap powers must be nonnegative")
        if not any(p > 0 for p in pdp):
            raise ValueError("at least one tap power must be positive")


@dataclass(frozen=True)
class TimeFrequency:
    spec: ScatteringSpec


@dataclass(frozen=True)
class CovarianceMatrix:
    """Hermitian PSD slot covariance with eigen data and a PSD square root."""

    entries: np.ndarray
    rank: int
    eigvals: np.ndarray
    eigvecs: np.ndarray
    sqrt_factor: np.ndarray
    diag_power: float

    def __post_init__(self):
        for arr in (self.entries, self.eigvals, self.eigvecs, self.sqrt_factor):
            arr.setflags(write=False)

    @property
    def block_len(self):
        return self.entries.shape[0]

    @classmethod
    def from_entries(cls, entries):
        """Validate and decompose a dense covariance matrix."""
        entries = np.asarray(entries, dtype=complex)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError("covariance must be square")
        assert_hermitian(entries, "covariance")
        n = entries.shape[0]
        w, v = np.linalg.eigh(entries)
        tol = rank_tolerance(w, n)
        if np.min(w) < -tol - 1e-12 * max(np.max(np.abs(w)), 1.0):
            raise ValueError("covariance is not positive semidefinite")
        w = np.clip(w, 0.0, None)
        keep = w > tol
        rank = int(np.count_nonzero(keep))
        diag = np.real(np.diag(entries))
        if np.max(diag) - np.min(diag) > 1e-9 * max(np.max(diag), 1.0):
            raise ValueError("covariance diagonal is not constant across slots")
        sqrt_factor = (v * np.sqrt(w)) @ v.conj().T
        return cls(entries=entries, rank=rank, eigvals=w[keep], eigvecs=v[:, keep],
                   sqrt_factor=sqrt_factor, diag_power=float(np.mean(diag)))

    def to_json(self):
        """Serializable dict: {"n": ..., "entries": row-major [re, im] pairs}."""
        flat = self.entries.reshape(-1)
        return {"n": int(self.block_len),
                "entries": [[float(z.real), float(z.imag)] for z in flat]}

    @classmethod
    def from_json(cls, payload):
        n = int(payload["n"])
        flat = np.array([complex(re, im) for re, im in payload["entries"]])
        if flat.size != n * n:
            raise ValueError("entry list does not match the declared size")
        return cls.from_entries(flat.reshape(n, n))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class ChannelRealization:
    """One draw of the per-slot channel matrices."""

    blocks: np.ndarray  # (block_len, num_rx, num_tx)
    dims: ChannelDims

    def __post_init__(self):
        if self.blocks.shape != (self.dims.block_len, self.dims.num_rx, self.dims.num_tx):
            raise ValueError("block array does not match the declared dimensions")
        self.blocks.setflags(write=False)

    def stacked(self):
        """Horizontal concatenation of the slot matrices, num_rx x (N*num_tx)."""
        return np.concatenate(list(self.blocks), axis=1)

    def jensen_stack(self):
        """Wide min(M_T, M_R) x N*max(M_T, M_R) stack of the slot matrices.

        Slots are concatenated directly when num_rx <= num_tx and conjugate
        transposed otherwise, so the stack always has min_ant rows.
        """
        if self.dims.num_rx <= self.dims.num_tx:
            return np.concatenate(list(self.blocks), axis=1)
        return np.concatenate([b.conj().T for b in self.blocks], axis=1)


@dataclass(frozen=True)
class BlockCirculant:
    """Block-circulant matrix of channel taps plus its rank-determining corner."""

    taps: np.ndarray       # (num_taps, num_rx, num_tx)
    full: np.ndarray       # (n*num_rx, n*num_tx)
    corner: np.ndarray     # (min_ant, num_taps*max_ant)

    @property
    def rank(self):
        return numerical_rank(self.full)

    @property
    def corner_rank(self):
        return numerical_rank(self.corner)


def build_covariance(model, n, normalize_unit_power=True):
    """Construct the slot covariance matrix for a fading model.

    Parameters
    ----------
    model : Flat | Fast | BlockFading | CyclicIsi | TimeFrequency
        Statistical model of the fading process across slots.
    n : int
        Block length (number of time-frequency slots).
    normalize_unit_power : bool
        Rescale so every diagonal entry is exactly 1. The raw cyclic
        multipath construction has diagonal sum(pdp)/n instead; keeping the
        diagonal at 1 preserves the meaning of the average SNR.

    Returns
    -------
    CovarianceMatrix
    """
    if n < 1:
        raise ValueError("block length must be positive")
    if isinstance(model, Flat):
        entries = np.ones((n, n), dtype=complex)
    elif isinstance(model, Fast):
        entries = np.eye(n, dtype=complex)
    elif isinstance(model, BlockFading):
        if model.num_blocks * model.block_len != n:
            raise ValueError("num_blocks * block_len must equal the block length")
        entries = np.kron(np.eye(model.num_blocks), np.ones((model.block_len, model.block_len))).astype(complex)
    elif isinstance(model, CyclicIsi):
        if model.num_taps > n:
            raise ValueError("tap count exceeds the block length")
        profile = np.zeros(n)
        profile[:model.num_taps] = model.power_delay_profile
        fft = unitary_fft(n)
        entries = (fft * profile) @ fft.conj().T
    elif isinstance(model, TimeFrequency):
        spec = model.spec
        if spec.block_len != n:
            raise ValueError("scattering grid does not match the block length")
        slot = np.arange(n)
        t_idx = slot // spec.num_freq
        f_idx = slot % spec.num_freq
        dt = (t_idx[:, None] - t_idx[None, :]) * spec.grid_t
        df = (f_idx[:, None] - f_idx[None, :]) * spec.grid_f
        entries = spec.correlation(dt, df)
    else:
        raise TypeError(f"unknown covariance model: {model!r}")

    if normalize_unit_power:
        diag = np.real(np.diag(entries))
        entries = entries / np.mean(diag)
    return CovarianceMatrix.from_entries(entries)


def circulant_covariance(spec, normalize_unit_power=True):
    """Two-level circulant covariance with eigenvalues sampled from the
    asymptotic spectrum of the time-frequency selective channel.

    The eigenvectors are Kronecker products of DFT columns and the nonzero
    eigenvalues occupy the Doppler-delay index box {0..v-1} x {0..t-1} where
    v and t count the occupied Doppler and delay bins. For the brick-wall
    spectrum the sampled value is constant on the support.
    """
    v = spec.doppler_slots
    t = spec.delay_slots
    if v < 1 or t < 1:
        raise ValueError("channel spread too small for the grid: "
                         f"doppler_slots={v}, delay_slots={t}")
    big_m, big_k = spec.num_time, spec.num_freq
    n = spec.block_len
    if normalize_unit_power:
        level = n / (v * t)
    else:
        level = spec.sigma2 / (spec.grid_t * spec.grid_f * spec.tau0 * spec.nu0)
    lam = np.zeros(n)
    for m in range(v):
        for k in range(t):
            lam[m * big_k + k] = level
    fmat = np.kron(unitary_fft(big_m), unitary_fft(big_k))
    entries = (fmat * lam) @ fmat.conj().T
    return CovarianceMatrix.from_entries(entries)


def sample_channel(cov, dims, rng):
    """Draw one correlated channel realization.

    Spatially white: every transmit-receive pair is an independent process
    across slots with covariance ``cov.entries``. The draw is
    ``sqrt_factor @ white`` where white holds i.i.d. unit-variance
    circularly-symmetric Gaussians.
    """
    n = dims.block_len
    if cov.block_len != n:
        raise ValueError("covariance size does not match the block length")
    white = complex_normal(rng, (n, dims.num_rx, dims.num_tx))
    blocks = np.einsum("nk,kij->nij", cov.sqrt_factor, white)
    return ChannelRealization(blocks=blocks, dims=dims)


def sample_channel_batch(cov, dims, count, rng):
    """Vectorized helper: ``count`` draws as one (count, N, M_R, M_T) array."""
    n = dims.block_len
    if cov.block_len != n:
        raise ValueError("covariance size does not match the block length")
    white = complex_normal(rng, (count, n, dims.num_rx, dims.num_tx))
    return np.einsum("nk,ckij->cnij", cov.sqrt_factor, white)


def build_block_circulant(taps, n):
    """Assemble the block-circulant channel matrix of a cyclic multipath link.

    Parameters
    ----------
    taps : sequence of num_taps matrices, each num_rx x num_tx
    n : int
        Block length; must exceed the tap count.

    Returns
    -------
    BlockCirculant
        Includes the corner submatrix whose rank, multiplied by n, gives the
        rank of the full matrix: the first transmit block-column when
        num_tx <= num_rx, otherwise the last receive block-row restricted to
        the trailing num_taps block-columns.
    """
    taps = np.asarray(taps, dtype=complex)
    if taps.ndim != 3:
        raise ValueError("taps must be a sequence of matrices")
    num_taps, num_rx, num_tx = taps.shape
    if n <= num_taps:
        raise ValueError("block length must exceed the tap count")
    full = np.zeros((n * num_rx, n * num_tx), dtype=complex)
    for i in range(n):
        for j in range(n):
            lag = (i - j) % n
            if lag < num_taps:
                full[i * num_rx:(i + 1) * num_rx, j * num_tx:(j + 1) * num_tx] = taps[lag]
    if num_tx <= num_rx:
        corner = full[:num_taps * num_rx, :num_tx].T
    else:
        corner = full[(n - 1) * num_rx:, (n - num_taps) * num_tx:]
    return BlockCirculant(taps=taps, full=full, corner=corner)


def expected_rank(model, n):
    """Rank of the covariance implied by the model definition.

    For the time-frequency model this is the rank of the circulant
    surrogate (occupied Doppler bins times occupied delay bins); the
    two-level Toeplitz matrix built by ``build_covariance`` generically has
    full numerical rank at finite block length.
    """
    if isinstance(model, Flat):
        return 1
    if isinstance(model, Fast):
        return n
    if isinstance(model, BlockFading):
        return model.num_blocks
    if isinstance(model, CyclicIsi):
        return sum(1 for p in model.power_delay_profile if p > 0)
    if isinstance(model, TimeFrequency):
        return model.spec.doppler_slots * model.spec.delay_slots
    raise TypeError(f"unknown covariance model: {model!r}")
