import numpy as np
import numpy.testing as npt
import pytest

from app.errors import ConfigurationError, DimensionMismatchError, GuardIntervalError
from app.models.system import OFDMConfig
from channel_app import (
    PathParam,
    PathSet,
    delay_response,
    sample_gains,
    sfcrm,
    steering,
    steering_horizontal,
    steering_vertical,
)
from channel_app.scene import generate_scene, load_scene, paths_for_position, save_scene

BOUNDS = ((0.0, -5.0, 0.0), (10.0, 5.0, 9.0))
BS = (-100.0, 0.0, 25.0)


def test_steering_is_kronecker_of_axes(geom):
    theta, phi = 1.1, 0.4
    e = steering(geom, theta, phi)
    assert e.shape == (geom.antennas,)
    npt.assert_allclose(np.abs(e), 1.0)
    npt.assert_allclose(e, np.kron(steering_vertical(geom, theta), steering_horizontal(geom, theta, phi)))


def test_steering_batches_over_angles(geom):
    thetas, phis = np.array([0.3, 1.2, 2.0]), np.array([0.1, 1.5, 2.8])
    batch = steering(geom, thetas, phis)
    assert batch.shape == (3, geom.antennas)
    npt.assert_allclose(batch[1], steering(geom, thetas[1], phis[1]))


def test_path_validation():
    with pytest.raises(ConfigurationError):
        PathParam(0.5, 0.5, 1.0, 0.0)
    with pytest.raises(ConfigurationError):
        PathParam(0.5, 0.5, -1.0, 1.0)
    with pytest.raises(ConfigurationError):
        PathSet(())


def test_check_guard(integer_paths):
    integer_paths.check_guard(OFDMConfig(Nc=64, Ng=16))
    with pytest.raises(ConfigurationError):
        integer_paths.check_guard(OFDMConfig(Nc=64, Ng=8))


def test_sfcrm_single_path(geom, ofdm):
    path = PathParam(0.9, 1.3, 4.25, 1.0)
    H = sfcrm(PathSet((path,)), np.array([0.5 - 0.25j]), geom, ofdm)
    expected = (0.5 - 0.25j) * np.outer(steering(geom, path.theta, path.phi), delay_response(ofdm, path.r))
    assert H.shape == (geom.antennas, ofdm.Nc)
    npt.assert_allclose(H, expected)


def test_sfcrm_stack_matches_single(geom, ofdm, integer_paths, rng):
    gains = sample_gains(integer_paths, rng, size=4)
    stack = sfcrm(integer_paths, gains, geom, ofdm)
    assert stack.shape == (4, geom.antennas, ofdm.Nc)
    npt.assert_allclose(stack[2], sfcrm(integer_paths, gains[2], geom, ofdm))


def test_sfcrm_rejects_gain_count(geom, ofdm, integer_paths):
    with pytest.raises(DimensionMismatchError):
        sfcrm(integer_paths, np.ones(2), geom, ofdm)


def test_gain_power(integer_paths, rng):
    gains = sample_gains(integer_paths, rng, size=20000)
    npt.assert_allclose(np.mean(np.abs(gains) ** 2, axis=0), integer_paths.sigma2, rtol=0.05)


# ── scenes ──

def test_scene_is_seeded():
    a = generate_scene(BOUNDS, BS, n_scatterers=10, seed=3)
    b = generate_scene(BOUNDS, BS, n_scatterers=10, seed=3)
    c = generate_scene(BOUNDS, BS, n_scatterers=10, seed=4)
    assert a == b
    assert a != c


def test_scene_rejects_bad_input():
    with pytest.raises(ConfigurationError):
        generate_scene(BOUNDS, BS, n_scatterers=0)
    with pytest.raises(ConfigurationError):
        generate_scene(((0, 0, 0), (0, 1, 1)), BS)


def test_paths_share_angles_across_positions():
    scene = generate_scene(BOUNDS, BS, n_scatterers=8, seed=1)
    ofdm = OFDMConfig()
    a = paths_for_position(scene, (1.0, 0.0, 1.5), ofdm)
    b = paths_for_position(scene, (2.0, 1.0, 1.5), ofdm)
    assert len(a) == len(b) == 8
    npt.assert_allclose(a.theta, b.theta)
    npt.assert_allclose(a.phi, b.phi)
    assert a.total_power == pytest.approx(1.0)
    assert np.all(a.r < ofdm.Ng)
    assert not np.allclose(a.r, b.r)


def test_snapped_delays_are_integers():
    scene = generate_scene(BOUNDS, BS, n_scatterers=8, seed=1)
    paths = paths_for_position(scene, (5.0, 0.0, 4.5), OFDMConfig(), snap_delays=True)
    npt.assert_array_equal(paths.r, np.rint(paths.r))


def test_position_outside_scene():
    scene = generate_scene(BOUNDS, BS, n_scatterers=4)
    with pytest.raises(ConfigurationError):
        paths_for_position(scene, (20.0, 0.0, 1.0), OFDMConfig())


def test_every_path_beyond_guard():
    scene = generate_scene(BOUNDS, BS, n_scatterers=4)
    # the base station alone is over 100 m away: at least 6 samples of delay
    with pytest.raises(GuardIntervalError):
        paths_for_position(scene, (5.0, 0.0, 1.0), OFDMConfig(Nc=4, Ng=1))


def test_scene_file(tmp_path):
    scene = generate_scene(BOUNDS, BS, n_scatterers=5, seed=2)
    save_scene(scene, tmp_path / "scene.json")
    assert load_scene(tmp_path / "scene.json") == scene
