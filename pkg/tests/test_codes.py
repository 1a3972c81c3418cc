import numpy as np
import pytest

from dmtlab.channel import ChannelDims, CyclicIsi, Fast, Flat, build_covariance
from dmtlab.codes import (
    Codebook,
    criterion_threshold,
    block_fading_check,
    delta_decomposition,
    effective_difference,
    min_entry_criterion,
    pairwise_min_products,
    permutation_codebook,
    qam_family,
    search_permutations,
    stacked_isi_difference,
    verify_dmt_criterion,
    verify_rank_r0,
    xi_metric,
)
from dmtlab._util import spawn_rng, unitary_fft


def _scalar_codebook(words, snr=10.0, r=0.0, num_rx=1):
    words = np.asarray(words, dtype=complex)[:, None, :]
    dims = ChannelDims(1, num_rx, words.shape[2])
    return Codebook(words=words, snr=snr, mux_rate=r, dims=dims)


def _random_cov(rng, n, rho):
    # random rank-rho PSD, rescaled to the unit diagonal the type requires
    mat = rng.standard_normal((n, rho)) + 1j * rng.standard_normal((n, rho))
    raw = mat @ mat.conj().T
    scale = 1.0 / np.sqrt(np.real(np.diag(raw)))
    from dmtlab.channel import CovarianceMatrix
    return CovarianceMatrix.from_entries(raw * np.outer(scale, scale))


# -- QAM families ------------------------------------------------------------

def test_qam_zero_rate_single_point():
    fam = qam_family(100.0, 0.0)
    assert len(fam) == 1
    assert fam.points[0] == 0.0


def test_qam_sixteen_point_geometry():
    fam = qam_family(16.0, 1.0)
    assert fam.per_dim == 4
    assert len(fam) == 16
    assert fam.min_dist_sq == pytest.approx(2.0 / 16.0)
    # minimum pairwise distance achieves the declared value
    stats = pairwise_min_products(fam.points[:, None], 1)
    assert stats.entry_min == pytest.approx(0.125)
    assert np.max(np.abs(fam.points) ** 2) == pytest.approx(0.5625)


def test_qam_points_stay_in_unit_disk():
    rng = spawn_rng(21)
    for _ in range(30):
        snr = float(rng.uniform(1, 10_000))
        r = float(rng.uniform(0, 2))
        fam = qam_family(snr, r)
        assert np.max(np.abs(fam.points)) <= 1.0 + 1e-12


# -- permutation codebooks ---------------------------------------------------

def test_identity_permutation_code_repeats_symbol():
    fam = qam_family(16.0, 1.0)
    code = permutation_codebook(fam, [range(16), range(16)])
    assert code.words.shape == (16, 2)
    assert np.allclose(code.words[:, 0], code.words[:, 1])


def test_permutation_code_all_entries_nonzero():
    fam = qam_family(16.0, 0.5)
    rng = spawn_rng(22)
    perms = [rng.permutation(len(fam)) for _ in range(2)]
    code = permutation_codebook(fam, perms)
    words = code.words
    for i in range(len(fam)):
        for j in range(i + 1, len(fam)):
            assert np.all(np.abs(words[i] - words[j]) > 0)


def test_permutation_code_rejects_non_bijection():
    fam = qam_family(4.0, 1.0)
    with pytest.raises(ValueError):
        permutation_codebook(fam, [[0, 0, 1, 2], range(4)])


def test_pairwise_min_products_matches_double_loop():
    rng = spawn_rng(23)
    words = rng.standard_normal((7, 3)) + 1j * rng.standard_normal((7, 3))
    stats = pairwise_min_products(words, 2)
    best_full = np.inf
    best_two = np.inf
    best_entry = np.inf
    for i in range(7):
        for j in range(i + 1, 7):
            d2 = np.sort(np.abs(words[i] - words[j]) ** 2)
            best_full = min(best_full, d2.prod())
            best_two = min(best_two, d2[:2].prod())
            best_entry = min(best_entry, d2[0])
    assert stats.full_min == pytest.approx(best_full, rel=1e-12)
    assert stats.msmall_min == pytest.approx(best_two, rel=1e-12)
    assert stats.entry_min == pytest.approx(best_entry, rel=1e-12)


# -- permutation search ------------------------------------------------------

def test_search_two_point_family_is_exhaustive_optimum():
    # snr, r chosen so the family has exactly 2 points per dimension = 4...
    # use r small so per_dim rounds to 2 -> but exhaustive cap needs tiny size;
    # force a 2-point-per-dim family via snr=4, r=1 (per_dim=2, 4 points).
    search = search_permutations([4.0], 1.0, 2, budget=10, master_seed=0)
    entry = search.entries[0]
    assert entry.method == "exhaustive"
    fam = qam_family(4.0, 1.0)
    # brute-force oracle over every pair of permutations
    import itertools
    best = -np.inf
    for p0 in itertools.permutations(range(4)):
        for p1 in itertools.permutations(range(4)):
            words = np.stack([fam.points[list(p0)], fam.points[list(p1)]], axis=1)
            best = max(best, pairwise_min_products(words, 2).full_min)
    assert entry.min_product == pytest.approx(best, rel=1e-12)


def test_search_single_slot_reports_min_distance():
    search = search_permutations([16.0], 1.0, 1, budget=5, master_seed=0)
    entry = search.entries[0]
    assert entry.min_product == pytest.approx(qam_family(16.0, 1.0).min_dist_sq)


def test_search_meets_threshold_example():
    search = search_permutations([16.0], 1.0, 2, budget=400, master_seed=1, epsilon=0.5)
    entry = search.entries[0]
    assert entry.min_product >= criterion_threshold(16.0, 1.0, 0.5)
    assert entry.passes
    code = search.codebook_at(16.0)
    assert code.words.shape == (16, 2)


def test_search_failure_is_flagged_not_raised():
    # a 100-word code over 4 slots cannot hold the full product above the
    # rate threshold at this SNR; the miss must surface as a flag, not an
    # exception, with the threshold recorded alongside the best-found value
    search = search_permutations([100.0], 1.0, 4, budget=60, master_seed=2,
                                 epsilon=0.5)
    entry = search.entries[0]
    assert entry.threshold == pytest.approx(100.0 ** -1.5)
    assert entry.passes == (entry.min_product >= entry.threshold)
    assert not entry.passes
    assert len(entry.perms) == 4


# -- effective differences ---------------------------------------------------

def test_effective_difference_flat_equals_gram():
    cov = build_covariance(Flat(), 4)
    rng = spawn_rng(24)
    e = rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4))
    eff = effective_difference(cov, e)
    assert np.allclose(eff.matrix, e.conj().T @ e, atol=1e-12)


def test_effective_difference_fast_is_diagonal():
    cov = build_covariance(Fast(), 4)
    rng = spawn_rng(25)
    e = rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4))
    eff = effective_difference(cov, e)
    assert np.allclose(eff.matrix, np.diag(np.sum(np.abs(e) ** 2, axis=0)), atol=1e-12)


def test_effective_difference_matches_explicit_stack():
    # eigenvalues agree with the Gram of (sqrt_factor^T kron I) diag(e_n)
    rng = spawn_rng(26)
    for trial in range(100):
        n, mt, rho = 4, 2, 2
        cov = _random_cov(spawn_rng(26, trial), n, rho)
        e = rng.standard_normal((mt, n)) + 1j * rng.standard_normal((mt, n))
        eff = effective_difference(cov, e)
        sqrt_t = cov.sqrt_factor.T  # transposed PSD root: sqrt_t @ sqrt_t^H = cov^T
        lift = np.kron(sqrt_t, np.eye(mt))
        diag_e = np.zeros((n * mt, n), dtype=complex)
        for slot in range(n):
            diag_e[slot * mt:(slot + 1) * mt, slot] = e[:, slot]
        upsilon = lift @ diag_e
        oracle = np.linalg.eigvalsh(upsilon.conj().T @ upsilon)
        assert np.allclose(np.linalg.eigvalsh(eff.matrix), oracle,
                           atol=1e-10 * max(1.0, np.max(oracle)))


def test_hadamard_rank_bound_property():
    rng = spawn_rng(27)
    for trial in range(50):
        n, mt = 6, 2
        rho = int(rng.integers(1, 4))
        cov = _random_cov(spawn_rng(27, trial), n, rho)
        e = rng.standard_normal((mt, n)) + 1j * rng.standard_normal((mt, n))
        eff = effective_difference(cov, e)
        assert eff.rank <= rho * mt


def test_trace_bound_property():
    rng = spawn_rng(28)
    for model, n in [(Flat(), 4), (Fast(), 4), (CyclicIsi(2, (1.0, 0.3)), 4)]:
        cov = build_covariance(model, n)
        mt = 2
        e = rng.standard_normal((mt, n)) + 1j * rng.standard_normal((mt, n))
        e *= np.sqrt(4 * n * mt) / np.linalg.norm(e)  # maximal energy difference
        eff = effective_difference(cov, e)
        trace = np.real(np.trace(eff.matrix))
        assert trace == pytest.approx(np.sum(np.abs(e) ** 2), rel=1e-10)
        assert eff.nonzero_eigs[-1] <= 4 * mt * n * (1 + 1e-9)


# -- xi metric ---------------------------------------------------------------

def test_xi_flat_siso_is_squared_norm():
    cov = build_covariance(Flat(), 3)
    e = np.array([0.3 - 0.2j, 0.5j, -0.4])
    book = _scalar_codebook([np.zeros(3), e])
    xi = xi_metric(book, cov)
    assert xi.value == pytest.approx(np.sum(np.abs(e) ** 2), rel=1e-10)


def test_xi_flat_matches_min_determinant():
    rng = spawn_rng(29)
    n, mt = 4, 2
    cov = build_covariance(Flat(), n)
    words = rng.standard_normal((5, mt, n)) + 1j * rng.standard_normal((5, mt, n))
    words *= 0.3
    book = Codebook(words=words, snr=10.0, mux_rate=0.0, dims=ChannelDims(mt, 2, n))
    xi = xi_metric(book, cov)
    dets = []
    for i in range(5):
        for j in range(i + 1, 5):
            e = words[i] - words[j]
            dets.append(np.real(np.linalg.det(e @ e.conj().T)))
    assert xi.value == pytest.approx(min(dets), rel=1e-9)


def test_xi_fast_siso_is_min_entry():
    cov = build_covariance(Fast(), 3)
    rng = spawn_rng(30)
    words = 0.5 * (rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3)))
    book = _scalar_codebook(words)
    xi = xi_metric(book, cov)
    stats = pairwise_min_products(words, 1)
    assert xi.value == pytest.approx(stats.entry_min, rel=1e-9)


def test_xi_requires_enough_block_length():
    cov = build_covariance(Fast(), 3)  # rank 3
    words = np.zeros((2, 2, 3))
    words[1, 0, 0] = 1.0
    book = Codebook(words=words, snr=4.0, mux_rate=0.0, dims=ChannelDims(2, 2, 3))
    with pytest.raises(ValueError):
        xi_metric(book, cov)  # needs n >= rank * num_tx = 6


# -- criteria ----------------------------------------------------------------

def test_verify_rank_r0_cases():
    n = 4
    cov = build_covariance(CyclicIsi(2, (1.0, 1.0)), n)  # rank 2
    e_good = np.ones((1, n)) * (0.4 + 0.1j)
    book = _scalar_codebook([np.zeros(n), e_good[0]])
    report = verify_rank_r0(book, cov)
    assert report["passed"]
    assert report["expected_rank"] == 2

    cov_fast = build_covariance(Fast(), 3)
    e_holed = np.array([0.5, 0.0, 0.5])
    book = _scalar_codebook([np.zeros(3), e_holed])
    report = verify_rank_r0(book, cov_fast)
    assert not report["passed"]
    assert report["failures"][0]["rank"] == 2  # one zero entry drops the rank


def test_verify_dmt_criterion_r0_full_rank_passes():
    cov = build_covariance(CyclicIsi(2, (1.0, 1.0)), 4)
    words = np.stack([np.zeros(4), 0.5 * np.ones(4)])
    book = _scalar_codebook(words, r=0.0)
    report = verify_dmt_criterion(lambda snr: book, cov, [10.0, 100.0, 1000.0], 0.5)
    assert report["passed"]


def test_verify_dmt_criterion_rank_deficit_fails():
    # same symbol on both antennas with no precoding: rank-1 Gram
    n = 4
    cov = build_covariance(CyclicIsi(2, (1.0, 1.0)), n)
    rng = spawn_rng(31)
    row = 0.4 * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    words = np.stack([np.zeros((2, n)), np.stack([row, row])])
    book = Codebook(words=words, snr=10.0, mux_rate=0.0, dims=ChannelDims(2, 2, n))
    report = verify_dmt_criterion(lambda snr: book, cov, [10.0], 0.5)
    assert not report["passed"]
    assert report["per_snr"][0]["xi"] == pytest.approx(0.0, abs=1e-12)


def test_delta_decomposition_properties():
    rng = spawn_rng(32)
    n, mt = 4, 2
    # zero difference
    cov = _random_cov(spawn_rng(32, 0), n, 2)
    delta, rank = delta_decomposition(cov, np.zeros((mt, n)))
    assert rank == 0 and np.allclose(delta, 0)
    # flat rank-1 covariance: rank equals the difference rank
    cov_flat = build_covariance(Flat(), n)
    e = rng.standard_normal((mt, n)) + 1j * rng.standard_normal((mt, n))
    _, rank = delta_decomposition(cov_flat, e)
    assert rank == np.linalg.matrix_rank(e)
    # eigenvalue identity against the Hadamard route
    for trial in range(100):
        cov = _random_cov(spawn_rng(32, trial + 1), n, int(1 + trial % 3))
        e = rng.standard_normal((mt, n)) + 1j * rng.standard_normal((mt, n))
        delta, _ = delta_decomposition(cov, e)
        lhs = np.linalg.eigvalsh(delta.conj().T @ delta)
        rhs = np.linalg.eigvalsh(effective_difference(cov, e).matrix)
        assert np.allclose(lhs, rhs, atol=1e-10 * max(1.0, rhs[-1]))


def test_stacked_isi_difference_single_tap():
    rng = spawn_rng(33)
    e_t = rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4))
    stacked, rank = stacked_isi_difference(e_t, 1, "cyclic")
    assert np.allclose(stacked, e_t)
    assert rank == np.linalg.matrix_rank(e_t)


def test_stacked_isi_cyclic_matches_eigen_route():
    # rank of the cyclic stack equals the rank of the eigen-weighted stack
    # built from the multicarrier covariance of a frequency-domain difference
    rng = spawn_rng(34)
    n, taps, mt = 6, 2, 2
    cov = build_covariance(CyclicIsi(taps, (1.0,) * taps), n)
    fft = unitary_fft(n)
    for _ in range(25):
        e_time = rng.standard_normal((mt, n)) + 1j * rng.standard_normal((mt, n))
        e_freq = e_time @ fft
        _, rank_direct = stacked_isi_difference(e_time, taps, "cyclic")
        _, rank_eigen = delta_decomposition(cov, e_freq)
        assert rank_direct == rank_eigen


def test_stacked_isi_linear_mode():
    e_t = np.zeros((1, 5), dtype=complex)
    e_t[0, 0] = 1.0 + 0.5j
    stacked, rank = stacked_isi_difference(e_t, 3, "linear")
    assert stacked.shape == (3, 5)
    assert rank == 3
    bad = np.ones((1, 5))
    with pytest.raises(ValueError):
        stacked_isi_difference(bad, 3, "linear")


def test_block_fading_multiset_identity_random():
    rng = spawn_rng(35)
    n, blocks, mt = 4, 2, 2
    words = 0.3 * (rng.standard_normal((4, mt, n)) + 1j * rng.standard_normal((4, mt, n)))
    book = Codebook(words=words, snr=10.0, mux_rate=0.0, dims=ChannelDims(mt, 2, n))
    report = block_fading_check(book, blocks)
    assert report["multiset_ok"]
    assert report["max_multiset_err"] < 1e-10


def test_block_fading_scalar_global_is_min_over_blocks():
    rng = spawn_rng(36)
    n, blocks = 4, 2
    words = 0.4 * (rng.standard_normal((5, 1, n)) + 1j * rng.standard_normal((5, 1, n)))
    book = Codebook(words=words, snr=10.0, mux_rate=0.0, dims=ChannelDims(1, 1, n))
    report = block_fading_check(book, blocks)
    assert report["global_xi"].value == pytest.approx(
        min(report["per_block_min_products"]), rel=1e-9)


def test_block_fading_per_block_pass_global_fail():
    # two blocks, each difference has eigenvalues {small, large}: per-block
    # products pass a small*large threshold while the global two smallest
    # multiply to small**2
    small, large = 0.01, 1.0
    b0 = np.diag([np.sqrt(small), np.sqrt(large)]).astype(complex)
    b1 = np.diag([np.sqrt(large), np.sqrt(small)]).astype(complex)
    word = np.concatenate([b0, b1], axis=1)  # 2 x 4
    words = np.stack([np.zeros((2, 4), dtype=complex), word])
    book = Codebook(words=words, snr=10.0, mux_rate=0.0, dims=ChannelDims(2, 2, 4))
    report = block_fading_check(book, 2)
    threshold = small * large * 0.5
    assert all(p >= threshold for p in report["per_block_min_products"])
    assert report["global_xi"].value == pytest.approx(small ** 2, rel=1e-9)
    assert report["global_xi"].value < threshold


def test_min_entry_criterion_permutation_code_passes():
    def gen(snr):
        fam = qam_family(snr, 0.5)
        rng = spawn_rng(37, int(snr))
        perms = [rng.permutation(len(fam)) for _ in range(3)]
        return permutation_codebook(fam, perms).as_codebook(num_rx=2)

    report = min_entry_criterion(gen, [10.0, 100.0], epsilon=0.1)
    assert report["passed"]
    for row in report["per_snr"]:
        fam = qam_family(row["snr"], 0.5)
        assert row["min_entry"] == pytest.approx(fam.min_dist_sq, rel=1e-9)


def test_min_entry_criterion_zero_entry_fails():
    words = np.array([[0.1, 0.2], [0.1, 0.5]])  # equal in slot 0
    book = _scalar_codebook(words, snr=10.0, r=0.5)
    report = min_entry_criterion(lambda snr: book, [10.0], epsilon=0.1)
    assert not report["passed"]
    assert report["per_snr"][0]["min_entry"] == 0.0


def test_min_entry_criterion_threshold_arithmetic():
    snr, r = 100.0, 0.5
    value = snr ** (-r + 0.2)
    e = np.sqrt(value) * np.ones(2)
    book = _scalar_codebook(np.stack([np.zeros(2), e]), snr=snr, r=r)
    report = min_entry_criterion(lambda s: book, [snr], epsilon=0.1)
    assert report["passed"]


def test_ostrowski_sandwich_property():
    rng = spawn_rng(38)
    for trial in range(100):
        n = 5
        rho = int(rng.integers(1, n + 1))
        cov = _random_cov(spawn_rng(38, trial), n, rho)
        e = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        eff = effective_difference(cov, e[None, :])
        scaled = np.linalg.eigvalsh(eff.matrix)
        base = np.zeros(n)
        base[n - cov.rank:] = cov.eigvals
        lo, hi = np.min(np.abs(e) ** 2), np.max(np.abs(e) ** 2)
        assert np.all(scaled >= lo * base - 1e-9)
        assert np.all(scaled <= hi * base + 1e-9 * max(1.0, hi * base[-1]))


def test_codebook_json_round_trip():
    rng = spawn_rng(39)
    words = 0.4 * (rng.standard_normal((3, 2, 4)) + 1j * rng.standard_normal((3, 2, 4)))
    book = Codebook(words=words, snr=25.0, mux_rate=0.75, dims=ChannelDims(2, 2, 4))
    clone = Codebook.from_json(book.to_json(), num_rx=2)
    assert np.allclose(clone.words, book.words)
    assert clone.snr == book.snr
    assert clone.mux_rate == book.mux_rate


def test_codebook_peak_power_enforced():
    words = np.full((1, 1, 2), 2.0, dtype=complex)  # energy 8 > n*mt = 2
    with pytest.raises(ValueError):
        Codebook(words=words, snr=10.0, mux_rate=0.0, dims=ChannelDims(1, 1, 2))
