import json

import numpy as np
import pytest

from dmtlab.channel import (
    BlockFading,
    ChannelDims,
    CovarianceMatrix,
    CyclicIsi,
    Fast,
    Flat,
    ScatteringSpec,
    TimeFrequency,
    build_block_circulant,
    build_covariance,
    circulant_covariance,
    expected_rank,
    sample_channel,
    sample_channel_batch,
)
from dmtlab._util import spawn_rng, unitary_fft


def test_dims_invariants():
    dims = ChannelDims(num_tx=3, num_rx=2, block_len=4)
    assert dims.min_ant == 2
    assert dims.max_ant == 3
    with pytest.raises(ValueError):
        ChannelDims(num_tx=0, num_rx=1, block_len=1)
    with pytest.raises(ValueError):
        ChannelDims(num_tx=1, num_rx=1, block_len=0)


def test_flat_covariance_is_all_ones_rank_one():
    cov = build_covariance(Flat(), 3)
    assert np.allclose(cov.entries, np.ones((3, 3)))
    assert cov.rank == 1
    assert cov.diag_power == pytest.approx(1.0)


def test_block_fading_covariance():
    cov = build_covariance(BlockFading(num_blocks=2, block_len=2), 4)
    expected = np.kron(np.eye(2), np.ones((2, 2)))
    assert np.allclose(cov.entries, expected)
    assert cov.rank == 2
    with pytest.raises(ValueError):
        build_covariance(BlockFading(num_blocks=2, block_len=3), 4)


def test_cyclic_isi_covariance_matches_direct_formula():
    # independent evaluation: R[a, b] = (1/n) sum_l pdp[l] exp(-2j pi (a-b) l / n)
    n, pdp = 4, [1.0, 1.0]
    raw = np.zeros((n, n), dtype=complex)
    for a in range(n):
        for b in range(n):
            raw[a, b] = sum(p * np.exp(-2j * np.pi * (a - b) * l / n)
                            for l, p in enumerate(pdp)) / n
    expected = raw * n / sum(pdp)

    cov = build_covariance(CyclicIsi(2, (1.0, 1.0)), n)
    assert np.allclose(cov.entries, expected, atol=1e-12)
    # closed form from the same evaluation: (1 + exp(-j pi (a-b)/2)) / 2
    a, b = 1, 0
    assert cov.entries[a, b] == pytest.approx((1 + np.exp(-1j * np.pi * (a - b) / 2)) / 2)
    assert cov.rank == 2
    assert np.allclose(np.diag(cov.entries), 1.0)


def test_cyclic_isi_eigvectors_are_fft_columns():
    n, pdp = 6, (2.0, 0.5, 1.0)
    cov = build_covariance(CyclicIsi(3, pdp), n)
    fft = unitary_fft(n)
    scale = n / sum(pdp)
    for l, power in enumerate(pdp):
        col = fft[:, l]
        assert np.allclose(cov.entries @ col, power * scale * col, atol=1e-10)


def test_cyclic_isi_rejects_degenerate_profiles():
    with pytest.raises(ValueError):
        CyclicIsi(2, (0.0, 0.0))
    with pytest.raises(ValueError):
        CyclicIsi(2, (1.0, -0.5))
    with pytest.raises(ValueError):
        build_covariance(CyclicIsi(5, (1.0,) * 5), 4)


def test_expected_ranks_across_models():
    cases = [
        (Flat(), 6, 1),
        (Fast(), 6, 6),
        (BlockFading(3, 2), 6, 3),
        (CyclicIsi(3, (1.0, 0.0, 2.0)), 6, 2),
    ]
    for model, n, rho in cases:
        cov = build_covariance(model, n)
        assert cov.rank == rho == expected_rank(model, n)
        assert np.allclose(np.diag(cov.entries), 1.0)
        # PSD square root reproduces the matrix
        recon = cov.sqrt_factor @ cov.sqrt_factor.conj().T
        assert np.allclose(recon, cov.entries, atol=1e-10)


def test_scattering_spec_validation():
    with pytest.raises(ValueError):
        ScatteringSpec(tau0=1.0, nu0=1.5, grid_t=0.5, grid_f=0.5, num_time=2, num_freq=2)
    with pytest.raises(ValueError):
        # grid too coarse for the Doppler spread
        ScatteringSpec(tau0=0.1, nu0=0.5, grid_t=3.0, grid_f=1.0, num_time=2, num_freq=2)
    spec = ScatteringSpec.from_normalized(0.5, 0.5, 4, 4)
    assert spec.block_len == 16
    assert spec.doppler_slots == 2
    assert spec.delay_slots == 2


def test_brickwall_correlation_matches_quadrature():
    from scipy import integrate

    spec = ScatteringSpec(tau0=0.4, nu0=0.6, grid_t=1.0, grid_f=1.0, num_time=2, num_freq=2)
    level = spec.sigma2 / (spec.tau0 * spec.nu0)
    for dt, df in [(0.0, 0.0), (0.7, 0.3), (1.5, -2.0), (-0.4, 0.9)]:
        re = integrate.dblquad(lambda nu, tau: level * np.cos(2 * np.pi * (nu * dt - tau * df)),
                               0, spec.tau0, 0, spec.nu0)[0]
        im = integrate.dblquad(lambda nu, tau: level * np.sin(2 * np.pi * (nu * dt - tau * df)),
                               0, spec.tau0, 0, spec.nu0)[0]
        assert spec.correlation(dt, df) == pytest.approx(re + 1j * im, abs=1e-10)


def test_time_frequency_covariance_structure():
    spec = ScatteringSpec.from_normalized(0.5, 0.5, 3, 4)
    cov = build_covariance(TimeFrequency(spec), 12)
    assert np.allclose(np.diag(cov.entries), 1.0)
    # two-level Toeplitz: entry depends only on slot index differences
    k = spec.num_freq
    for n1 in range(12):
        for n2 in range(12):
            m1, f1 = divmod(n1, k)
            m2, f2 = divmod(n2, k)
            ref = spec.correlation((m1 - m2) * spec.grid_t, (f1 - f2) * spec.grid_f)
            assert cov.entries[n1, n2] == pytest.approx(ref, abs=1e-12)


def test_circulant_covariance_examples():
    spec = ScatteringSpec.from_normalized(0.5, 0.5, 4, 4)
    cov = circulant_covariance(spec)
    assert cov.block_len == 16
    assert cov.rank == 4
    assert np.allclose(np.diag(cov.entries), 1.0)

    # degenerate single-slot grid: nu0*T = tau0*F = 1 with spread product 1/4
    single_spec = ScatteringSpec(tau0=0.5, nu0=0.5, grid_t=2.0, grid_f=2.0,
                                 num_time=1, num_freq=1)
    single = circulant_covariance(single_spec)
    assert single.block_len == 1
    assert single.rank == 1
    assert single.entries[0, 0] == pytest.approx(1.0)

    mixed = circulant_covariance(ScatteringSpec.from_normalized(0.5, 0.25, 4, 8))
    assert mixed.rank == 2 * 2
    # eigenvalue multiset agrees with a dense eigensolver on the built matrix
    dense = np.linalg.eigvalsh(np.asarray(mixed.entries))
    nonzero = np.sort(dense)[-mixed.rank:]
    assert np.allclose(np.sort(mixed.eigvals), nonzero, atol=1e-10)
    assert np.allclose(nonzero, 32 / 4)  # constant level n/(v*t)


def test_circulant_covariance_degenerate_spread():
    spec = ScatteringSpec.from_normalized(0.05, 0.5, 4, 4)
    with pytest.raises(ValueError):
        circulant_covariance(spec)


def test_sample_channel_empirical_covariance_identity():
    dims = ChannelDims(2, 2, 4)
    cov = build_covariance(Fast(), 4)
    draws = sample_channel_batch(cov, dims, 100_000, spawn_rng(11))
    # each scalar subchannel across slots: covariance ~ identity
    flat = draws.reshape(100_000, 4, -1)
    est = np.einsum("cnp,cmp->nm", flat, flat.conj()) / (100_000 * flat.shape[2])
    assert np.linalg.norm(est - np.eye(4)) / np.linalg.norm(np.eye(4)) < 0.02


def test_sample_channel_flat_blocks_identical():
    dims = ChannelDims(2, 3, 5)
    cov = build_covariance(Flat(), 5)
    real = sample_channel(cov, dims, spawn_rng(3))
    for blk in real.blocks[1:]:
        assert np.allclose(blk, real.blocks[0], atol=1e-12)


def test_sample_channel_block_fading_structure():
    dims = ChannelDims(1, 1, 4)
    cov = build_covariance(BlockFading(2, 2), 4)
    draws = sample_channel_batch(cov, dims, 100_000, spawn_rng(7))[:, :, 0, 0]
    # constant within blocks
    assert np.allclose(draws[:, 0], draws[:, 1], atol=1e-10)
    assert np.allclose(draws[:, 2], draws[:, 3], atol=1e-10)
    # uncorrelated across blocks
    corr = np.mean(draws[:, 0] * draws[:, 2].conj())
    assert abs(corr) < 0.02


def test_sample_channel_deterministic_for_seed():
    dims = ChannelDims(2, 2, 3)
    cov = build_covariance(Fast(), 3)
    a = sample_channel(cov, dims, spawn_rng(42, 5)).blocks
    b = sample_channel(cov, dims, spawn_rng(42, 5)).blocks
    assert np.array_equal(a, b)


def test_jensen_stack_shapes():
    rng = spawn_rng(0)
    tall = ChannelDims(num_tx=2, num_rx=3, block_len=4)
    cov = build_covariance(Fast(), 4)
    real = sample_channel(cov, tall, rng)
    assert real.jensen_stack().shape == (2, 4 * 3)
    wide = ChannelDims(num_tx=3, num_rx=2, block_len=4)
    real = sample_channel(cov, wide, rng)
    assert real.jensen_stack().shape == (2, 4 * 3)
    assert real.stacked().shape == (2, 12)


@pytest.mark.parametrize("mt,mr", [(2, 2), (1, 2), (3, 2)])
def test_block_circulant_rank_identity_random(mt, mr):
    rng = spawn_rng(19, mt, mr)
    n, taps = 4, 2
    for _ in range(20):
        mats = (rng.standard_normal((taps, mr, mt)) + 1j * rng.standard_normal((taps, mr, mt))) / np.sqrt(2)
        bc = build_block_circulant(mats, n)
        assert bc.rank == n * bc.corner_rank
        assert bc.corner.shape == (min(mt, mr), taps * max(mt, mr))


def test_block_circulant_example_dimensions():
    rng = spawn_rng(4)
    mats = (rng.standard_normal((2, 2, 2)) + 1j * rng.standard_normal((2, 2, 2)))
    bc = build_block_circulant(mats, 4)
    assert bc.full.shape == (8, 8)
    assert bc.rank == 8
    assert bc.corner_rank == 2


def test_block_circulant_zero_and_single_tap():
    zero = build_block_circulant(np.zeros((2, 2, 2)), 4)
    assert zero.rank == 0
    assert zero.corner_rank == 0

    rng = spawn_rng(5)
    single = (rng.standard_normal((1, 2, 2)) + 1j * rng.standard_normal((1, 2, 2)))
    bc = build_block_circulant(single, 3)
    # block diagonal with identical blocks
    assert bc.rank == 3 * np.linalg.matrix_rank(single[0])
    off = bc.full[2:4, 0:2]
    assert np.allclose(off, 0.0)
    with pytest.raises(ValueError):
        build_block_circulant(single, 1)


def test_block_circulant_structure_contract():
    rng = spawn_rng(6)
    taps = rng.standard_normal((2, 1, 1)) + 1j * rng.standard_normal((2, 1, 1))
    bc = build_block_circulant(taps, 5)
    for i in range(5):
        for j in range(5):
            lag = (i - j) % 5
            ref = taps[lag, 0, 0] if lag < 2 else 0.0
            assert bc.full[i, j] == pytest.approx(ref)


def test_covariance_json_round_trip(tmp_path):
    cov = build_covariance(CyclicIsi(2, (1.0, 0.5)), 4)
    path = tmp_path / "cov.json"
    cov.save(path)
    loaded = CovarianceMatrix.load(path)
    assert np.allclose(loaded.entries, cov.entries, atol=1e-12)
    assert loaded.rank == cov.rank
    # file content is valid JSON with the documented keys
    payload = json.loads(path.read_text())
    assert set(payload) == {"n", "entries"}


def test_covariance_rejects_non_hermitian():
    bad = np.array([[1.0, 1.0], [0.0, 1.0]], dtype=complex)
    with pytest.raises(ValueError):
        CovarianceMatrix.from_entries(bad)
