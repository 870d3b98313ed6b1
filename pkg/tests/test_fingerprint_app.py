import numpy as np
import numpy.testing as npt
import pytest

from app.errors import ConfigurationError, DimensionMismatchError, FormatError
from app.models.system import ArrayGeometry, OFDMConfig
from channel_app import PathSet, sfcrm, steering
from conftest import make_path
from fingerprint_app import (
    Fingerprint,
    FingerprintKind,
    adcpm_exact,
    adcpm_mc,
    awgn_contaminate,
    denoise,
    dft_phase_shifted,
    dft_truncated,
    flatten_fingerprint,
    monte_carlo_power,
    reshape_fingerprint,
    sfcpm_exact,
    sfcpm_mc,
    to_angle_delay,
)
from fingerprint_app.codec import (
    decode_fingerprint,
    encode_fingerprint,
    export_fingerprint_csv,
    load_fingerprint,
    save_fingerprint,
)
from fingerprint_app.theory import (
    SupportPrediction,
    angle_domain_cir,
    concentration_fraction,
    dirichlet,
    limit_window_fraction,
    predict_support,
    predict_supports,
    support_mask,
)


@pytest.mark.parametrize("M", [1, 2, 3, 4, 8, 13, 32])
def test_phase_shifted_dft_is_unitary(M):
    V = dft_phase_shifted(M)
    npt.assert_allclose(V.conj().T @ V, np.eye(M), atol=1e-10)


@pytest.mark.parametrize("Nc, Ng", [(16, 16), (64, 16), (128, 32)])
def test_truncated_dft_has_orthonormal_columns(Nc, Ng):
    F = dft_truncated(Nc, Ng)
    assert F.shape == (Nc, Ng)
    npt.assert_allclose(F.conj().T @ F, np.eye(Ng), atol=1e-10)


def test_dft_arguments():
    with pytest.raises(ConfigurationError):
        dft_phase_shifted(0)
    with pytest.raises(ConfigurationError):
        dft_truncated(16, 32)


def test_on_grid_path_is_one_hot():
    geom = ArrayGeometry(M=8, N=16)
    ofdm = OFDMConfig(Nc=64, Ng=16)
    # m̄ = 4 + 4 cos θ = 6, n̄ = 8 + 8 sin θ cos φ = 11
    path = make_path(0.5, 3 / 8, 5.0)
    G = to_angle_delay(sfcrm(PathSet((path,)), np.array([1.0]), geom, ofdm), geom, ofdm)
    expected = np.zeros((geom.antennas, ofdm.Ng))
    expected[6 * 16 + 11, 5] = 1.0
    npt.assert_allclose(np.abs(G), expected, atol=1e-9)

    cir = np.abs(angle_domain_cir(steering(geom, path.theta, path.phi), geom))
    assert np.argmax(cir) == 6 * 16 + 11
    assert cir.max() == pytest.approx(1.0)


def test_to_angle_delay_rejects_shape(geom, ofdm):
    with pytest.raises(DimensionMismatchError):
        to_angle_delay(np.zeros((geom.antennas + 1, ofdm.Nc)), geom, ofdm)


def test_parseval_closed_form(geom, ofdm, integer_paths):
    adcpm = adcpm_exact(integer_paths, geom, ofdm)
    sfcpm = sfcpm_exact(integer_paths, geom, ofdm)
    assert adcpm.omega.shape == (geom.antennas, ofdm.Ng)
    assert sfcpm.omega.shape == (geom.antennas, ofdm.Nc)
    assert adcpm.omega.sum() == pytest.approx(integer_paths.total_power, rel=1e-9)
    assert sfcpm.omega.sum() / (geom.antennas * ofdm.Nc) == pytest.approx(integer_paths.total_power, rel=1e-9)


def test_sfcpm_closed_form_is_flat(geom, ofdm, integer_paths):
    omega = sfcpm_exact(integer_paths, geom, ofdm).omega
    npt.assert_allclose(omega, integer_paths.total_power)


def test_monte_carlo_draws_agree_between_kinds(geom, ofdm, integer_paths):
    adcpm = adcpm_mc(integer_paths, geom, ofdm, 500, np.random.default_rng(7))
    sfcpm = sfcpm_mc(integer_paths, geom, ofdm, 500, np.random.default_rng(7))
    assert adcpm.omega.sum() == pytest.approx(sfcpm.omega.sum() / (geom.antennas * ofdm.Nc), rel=1e-9)


def test_monte_carlo_converges(geom, ofdm):
    paths = PathSet((make_path(0.31, 0.17, 3.4, 0.6), make_path(-0.58, 0.05, 9.7, 0.4)))
    exact = adcpm_exact(paths, geom, ofdm).omega
    estimate = adcpm_mc(paths, geom, ofdm, 10_000, np.random.default_rng(0)).omega
    assert np.linalg.norm(estimate - exact) / np.linalg.norm(exact) < 0.05


@pytest.mark.slow
def test_monte_carlo_error_shrinks_with_sqrt_n(geom, ofdm):
    paths = PathSet((make_path(0.31, 0.17, 3.4, 0.6), make_path(-0.58, 0.05, 9.7, 0.4)))
    exact = adcpm_exact(paths, geom, ofdm).omega
    errors = {}
    for n in (10_000, 100_000):
        estimate = adcpm_mc(paths, geom, ofdm, n, np.random.default_rng(n)).omega
        errors[n] = np.linalg.norm(estimate - exact) / np.linalg.norm(exact)
    assert errors[100_000] < 0.017
    ratio = errors[10_000] / errors[100_000]
    assert np.sqrt(10) / 2 < ratio < 2 * np.sqrt(10)


def test_monte_carlo_is_reproducible(geom, ofdm, integer_paths):
    a = monte_carlo_power(integer_paths, geom, ofdm, 50, np.random.default_rng(3), snr_db=10.0)
    b = monte_carlo_power(integer_paths, geom, ofdm, 50, np.random.default_rng(3), snr_db=10.0)
    npt.assert_array_equal(a.omega, b.omega)
    assert a.kind is FingerprintKind.ADCPM


def test_monte_carlo_needs_samples(geom, ofdm, integer_paths, rng):
    with pytest.raises(ConfigurationError):
        monte_carlo_power(integer_paths, geom, ofdm, 0, rng)


def test_awgn_level(rng):
    H = np.ones((64, 128), dtype=complex)
    noisy = awgn_contaminate(H, 10.0, rng)
    assert np.mean(np.abs(noisy - H) ** 2) == pytest.approx(0.1, rel=0.05)
    with pytest.raises(ConfigurationError):
        awgn_contaminate(H, np.inf, rng)


def test_reshape_layout():
    omega = np.arange(4 * 8 * 3, dtype=float).reshape(32, 3)
    x = reshape_fingerprint(omega, 8)
    assert x.shape == (4, 8, 3)
    assert x[2, 5, 1] == omega[2 * 8 + 5, 1]
    npt.assert_array_equal(flatten_fingerprint(x), omega)
    with pytest.raises(DimensionMismatchError):
        reshape_fingerprint(omega, 5)


def test_denoise():
    x = np.array([[0.0, 0.01, 0.5], [1.0, 0.02, 0.019]])
    out = denoise(x, 0.02)
    npt.assert_array_equal(out, [[0.0, 0.0, 0.5], [1.0, 0.02, 0.0]])
    npt.assert_array_equal(x[1], [1.0, 0.02, 0.019])
    with pytest.raises(ConfigurationError):
        denoise(x, 1.5)


def test_denoise_empty():
    out = denoise(np.zeros((0, 3)), 0.1)
    assert out.shape == (0, 3)


def test_fingerprint_validation():
    with pytest.raises(DimensionMismatchError):
        Fingerprint(np.ones((31, 4)), FingerprintKind.ADCPM, 4, 8)
    with pytest.raises(ConfigurationError):
        Fingerprint(-np.ones((32, 4)), FingerprintKind.ADCPM, 4, 8)


# ── codec ──

@pytest.fixture
def fingerprint(geom, ofdm, integer_paths):
    return adcpm_exact(integer_paths, geom, ofdm)


def test_fingerprint_file(tmp_path, fingerprint):
    size = save_fingerprint(fingerprint, tmp_path / "a.fp")
    assert size == 16 + 13 + fingerprint.omega.size * 8
    loaded = load_fingerprint(tmp_path / "a.fp")
    assert (loaded.M, loaded.N, loaded.kind) == (4, 8, FingerprintKind.ADCPM)
    npt.assert_array_equal(loaded.omega, fingerprint.omega)


def test_decode_returns_position(fingerprint):
    data = encode_fingerprint(fingerprint)
    _, pos = decode_fingerprint(data + data, len(data))
    assert pos == 2 * len(data)


def test_decode_errors(tmp_path, fingerprint):
    data = encode_fingerprint(fingerprint)
    with pytest.raises(FormatError):
        decode_fingerprint(b"NOTAFPRT" + data[8:])
    with pytest.raises(FormatError):
        decode_fingerprint(data[:-8])
    with pytest.raises(FormatError):
        decode_fingerprint(data[:10])
    bad_kind = bytearray(data)
    bad_kind[28] = 7
    with pytest.raises(FormatError):
        decode_fingerprint(bytes(bad_kind))
    (tmp_path / "b.fp").write_bytes(data + b"\x00")
    with pytest.raises(FormatError):
        load_fingerprint(tmp_path / "b.fp")


def test_export_csv(tmp_path, fingerprint):
    export_fingerprint_csv(fingerprint, tmp_path / "fp.csv")
    lines = (tmp_path / "fp.csv").read_text().splitlines()
    assert lines[0].split(",")[:2] == ["angle_index", "col_0"]
    assert len(lines) == 1 + 32


# ── concentration ──

def test_dirichlet():
    assert dirichlet(8, 0.0) == pytest.approx(1.0)
    assert dirichlet(8, np.pi / 8) == pytest.approx(0.0, abs=1e-12)
    npt.assert_allclose(dirichlet(4, np.array([0.0, np.pi])), [1.0, -1.0])
    with pytest.raises(ConfigurationError):
        dirichlet(0, 0.1)


def test_predict_support():
    geom = ArrayGeometry(M=8, N=16)
    s = predict_support(make_path(0.5, 3 / 8, 5.0), geom, OFDMConfig(Nc=64, Ng=16))
    assert (s.m_bar, s.n_bar, s.r) == pytest.approx((6.0, 11.0, 5.0))


def test_support_mask_wraps_angles():
    mask = support_mask((4, 4, 8), [SupportPrediction(0.0, 0.0, 0.0, 1.0)], 1)
    assert mask.sum() == 3 * 3 * 2
    assert mask[3, 3, 0] and mask[1, 1, 1]
    assert not mask[2, 2, 0]
    with pytest.raises(ConfigurationError):
        support_mask((4, 4, 8), [], 1)
    with pytest.raises(ConfigurationError):
        support_mask((4, 4, 8), [SupportPrediction(0.0, 0.0, 0.0, 1.0)], -1)


def test_on_grid_concentration_is_complete():
    geom = ArrayGeometry(M=8, N=16)
    ofdm = OFDMConfig(Nc=64, Ng=16)
    paths = PathSet((make_path(0.5, 3 / 8, 2.0, 0.5), make_path(-0.25, -0.5, 7.0, 0.3)))
    omega = adcpm_exact(paths, geom, ofdm).omega
    fraction = concentration_fraction(omega, predict_supports(paths, geom, ofdm), 0, geom)
    assert fraction == pytest.approx(1.0, abs=1e-9)


def test_off_grid_concentration_grows_with_window(geom, ofdm):
    paths = PathSet((make_path(0.31, 0.17, 3.4),))
    omega = adcpm_exact(paths, geom, ofdm).omega
    supports = predict_supports(paths, geom, ofdm)
    fractions = [concentration_fraction(omega, supports, w, geom) for w in (0, 1, 2)]
    assert fractions[0] < 1.0
    assert fractions[0] < fractions[1] <= fractions[2] + 1e-12


def test_limit_window_fraction():
    assert limit_window_fraction((0.0, 0.0, 0.0), 0) == pytest.approx(1.0)
    assert limit_window_fraction((0.0,), 1) == pytest.approx(1.0)
    assert limit_window_fraction((0.5,), 0) == pytest.approx(4 / np.pi ** 2)
    assert limit_window_fraction((0.25, 0.3), 1) < limit_window_fraction((0.25, 0.3), 2)
    with pytest.raises(ConfigurationError):
        limit_window_fraction((0.6,), 1)
    with pytest.raises(ConfigurationError):
        limit_window_fraction((0.1,), -1)


@pytest.mark.parametrize("M, N, Nc", [(8, 16, 64), (16, 32, 256)])
def test_off_grid_path_keeps_its_limit_fraction(M, N, Nc):
    geom = ArrayGeometry(M=M, N=N)
    ofdm = OFDMConfig(Nc=Nc, Ng=Nc // 4)
    # support at (3M/4 + 0.25, 5N/8 + 0.3, Nc/16 + 0.2)
    path = make_path(2 * (0.75 + 0.25 / M) - 1, 2 * (0.625 + 0.3 / N) - 1, Nc / 16 + 0.2)
    paths = PathSet((path,))
    omega = adcpm_exact(paths, geom, ofdm).omega
    supports = predict_supports(paths, geom, ofdm)
    assert (supports[0].m_bar, supports[0].n_bar) == pytest.approx((0.75 * M + 0.25, 0.625 * N + 0.3))
    assert concentration_fraction(omega, supports, 0, geom) < 0.95
    assert concentration_fraction(omega, supports, 1, geom) >= limit_window_fraction((0.25, 0.3, 0.2), 1) - 1e-12
