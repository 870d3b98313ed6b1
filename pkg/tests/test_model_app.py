import json

import numpy as np
import numpy.testing as npt
import pytest

from app.errors import ConfigurationError, DimensionMismatchError, FormatError, NumericalError, ShapeChainError
from model_app.builders import build_2dcnn, build_3dcnn, build_inception3d, build_miniature_3dcnn
from model_app.spec import Network2DSpec, NetworkSpec
from model_app.storage import BLOB_NAME, MANIFEST_NAME, load_model, save_model
from model_app.training import predict, total_loss, train

TINY = dict(branch_channels=2, branch_layers=1, merge_channels=4, inception_base=2)


@pytest.fixture
def tiny_net():
    return build_3dcnn(NetworkSpec(**TINY, seed=5).for_input(2, 4, 8))


def test_desk_shape_chain():
    net = build_3dcnn(NetworkSpec().for_input(4, 8, 32))
    shapes = dict(net.layer_shapes)
    assert shapes["refinement.branches"] == (4, 8, 16, 16)
    assert shapes["refinement.pool"] == (4, 4, 8, 16)
    assert shapes["stage.pool"] == (4, 4, 4, 32)
    assert shapes["final.pool"] == (2, 2, 2, 128)
    assert shapes["head.linear"] == (3,)
    out = net.forward(np.zeros((2, 4, 8, 32, 1), dtype=np.float32))
    assert out.shape == (2, 3)


def test_linear_array_spec():
    spec = NetworkSpec().for_input(1, 32, 32)
    assert spec.right_kernel == (1, 1, 7)
    assert spec.final_pool[0] == 1
    net = build_3dcnn(spec)
    assert net.forward(np.ones((1, 1, 32, 32, 1), dtype=np.float32)).shape == (1, 3)


def test_literal_spec_that_does_not_fit():
    with pytest.raises(ShapeChainError) as excinfo:
        build_3dcnn(NetworkSpec(input_dims=(1, 2, 4)))
    assert excinfo.value.layer.startswith("refinement")


def test_spec_validation():
    with pytest.raises(ValueError):
        NetworkSpec(left_kernel=(1, 3, 6))
    with pytest.raises(ValueError):
        NetworkSpec(left_kernel=(1, 7, 3))


def test_inception_width():
    block = build_inception3d(2, 5, base=3)
    assert block.infer_shape((4, 4, 4, 5)) == (4, 4, 4, 24)
    with pytest.raises(ShapeChainError):
        build_inception3d(0, 5)


def test_scaled_2d_spec():
    spec = Network2DSpec.scaled_for(32, 32)
    assert spec.kernel_scale == pytest.approx(0.25)
    assert spec.conv_kernels == (3, 1, 1)
    assert spec.pool_window == 2 and spec.final_pool_window == 2
    assert spec.inception_kernel == 3


def test_2dcnn_builds_on_small_images():
    spec = Network2DSpec.scaled_for(32, 16, conv_channels=(4, 4, 4), inception_base=2)
    net = build_2dcnn(spec)
    assert net.input_shape == (32, 16, 1, 1)
    assert net.forward(np.ones((2, 32, 16, 1, 1), dtype=np.float32)).shape == (2, 3)


def test_miniature_network_is_float64():
    net = build_miniature_3dcnn(NetworkSpec(**TINY).for_input(2, 4, 8))
    assert all(p.dtype == np.float64 for p in net.parameters().values())


# ── model files ──

def test_model_file(tmp_path, tiny_net, rng):
    tiny_net.set_target_scaling([1.0, 2.0, 3.0], [0.5, 0.5, 2.0])
    x = rng.uniform(size=(3, 2, 4, 8, 1)).astype(np.float32)
    tiny_net.forward(x, training=True)  # moves the running statistics
    expected = predict(tiny_net, x)

    size = save_model(tiny_net, tmp_path / "model", {"epochs": 0})
    assert size == sum(p.stat().st_size for p in (tmp_path / "model").iterdir())
    manifest = json.loads((tmp_path / "model" / MANIFEST_NAME).read_text())
    assert manifest["kind"] == "cnn3d"
    assert manifest["parameter_count"] == tiny_net.parameter_count

    loaded = load_model(tmp_path / "model")
    for key, value in tiny_net.parameters().items():
        npt.assert_array_equal(loaded.parameters()[key], value)
    npt.assert_array_equal(predict(loaded, x), expected)


def test_model_file_errors(tmp_path, tiny_net):
    with pytest.raises(FormatError):
        load_model(tmp_path / "nothing")
    save_model(tiny_net, tmp_path / "model")
    (tmp_path / "model" / BLOB_NAME).write_bytes(b"\x00" * 6)
    with pytest.raises(FormatError):
        load_model(tmp_path / "model")
    (tmp_path / "model" / BLOB_NAME).write_bytes(b"\x00" * 8)
    with pytest.raises(FormatError):
        load_model(tmp_path / "model")


# ── training ──

def _toy_data(rng, n=8):
    x = rng.uniform(size=(n, 2, 4, 8, 1)).astype(np.float32)
    y = rng.uniform(-5.0, 5.0, size=(n, 3))
    return x, y


def test_training_is_reproducible(rng):
    x, y = _toy_data(rng)
    logs, params = [], []
    for _ in range(2):
        net = build_3dcnn(NetworkSpec(**TINY, seed=1).for_input(2, 4, 8))
        logs.append(train(net, x, y, epochs=2, batch_size=4, seed=9, log_every=0))
        params.append(net.parameters())
    assert logs[0].epoch_losses == logs[1].epoch_losses
    for key, value in params[0].items():
        npt.assert_array_equal(value, params[1][key])


def test_training_arguments(tiny_net, rng):
    x, y = _toy_data(rng)
    with pytest.raises(ConfigurationError):
        train(tiny_net, x[:0], y[:0])
    with pytest.raises(ConfigurationError):
        train(tiny_net, x, y, epochs=0)
    with pytest.raises(DimensionMismatchError):
        train(tiny_net, x, y[:4])
    with pytest.raises(DimensionMismatchError):
        predict(tiny_net, np.zeros((1, 4, 4, 8, 1)))


def test_non_finite_loss(tiny_net, rng):
    x, y = _toy_data(rng)
    x[0, 0, 0, 0, 0] = np.nan
    with pytest.raises(NumericalError):
        train(tiny_net, x, y, epochs=1, batch_size=8, log_every=0)


def test_first_adam_steps_do_not_increase_the_loss(rng):
    x, y = _toy_data(rng)
    net = build_miniature_3dcnn(NetworkSpec(**TINY, seed=2).for_input(2, 4, 8))
    log = train(net, x, y, epochs=50, batch_size=8, learning_rate=1e-4, lam=0.0, log_every=0)
    assert len(log.step_losses) == 50
    assert np.all(np.diff(log.step_losses) <= 0)


def test_weight_decay_raises_the_initial_loss(rng):
    x, y = _toy_data(rng)
    losses = []
    for lam in (0.0, 1e-2):
        net = build_miniature_3dcnn(NetworkSpec(**TINY, seed=3).for_input(2, 4, 8))
        net.set_target_scaling(y.mean(axis=0), y.std(axis=0))
        losses.append(total_loss(net, x, y, lam))
    assert losses[1] > losses[0]


@pytest.mark.slow
def test_overfits_a_small_batch(rng):
    x, y = _toy_data(rng)
    spec = NetworkSpec(branch_channels=4, branch_layers=1, merge_channels=8, inception_base=4, seed=5)
    net = build_3dcnn(spec.for_input(2, 4, 8))
    log = train(net, x, y, epochs=500, batch_size=8, learning_rate=5e-3, lam=0.0, log_every=0)
    assert log.epoch_losses[-1] < log.epoch_losses[0]
    errors = np.linalg.norm(predict(net, x) - y, axis=1)
    assert errors.mean() <= 0.1
