import json

import pytest
from pydantic import ValidationError

from app.errors import ConfigurationError, LocalizerError, NumericalError, ShapeChainError
from app.models.experiment import ExperimentConfig, Method, apply_overrides, load_experiment_config
from app.models.system import ArrayGeometry, OFDMConfig


def test_half_wavelength_default():
    geom = ArrayGeometry(M=2, N=3)
    assert geom.d_v == geom.d_h == pytest.approx(geom.lambda_c / 2)
    assert geom.antennas == 6
    assert ArrayGeometry(d_v=0.1).d_v == 0.1


def test_guard_longer_than_symbol():
    with pytest.raises(ValidationError):
        OFDMConfig(Nc=16, Ng=32)


def test_overrides():
    data = apply_overrides({"training": {"epochs": 5}}, ["training.epochs=7", "method=wknn", "area.planes=[2.0]"])
    assert data == {"training": {"epochs": 7}, "method": "wknn", "area": {"planes": [2.0]}}
    with pytest.raises(ConfigurationError):
        apply_overrides({}, ["=3"])
    with pytest.raises(ConfigurationError):
        apply_overrides({"method": "wknn"}, ["method.k=3"])


def test_load_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"wknn_k": 6, "geometry": {"M": 2, "N": 16}}))
    config = load_experiment_config(path, ["method=wknn"])
    assert config.method is Method.WKNN
    assert config.wknn_k == 6 and config.geometry.antennas == 32
    assert config.fingerprint_columns() == 32
    assert config.network_spec().input_dims == (2, 16, 32)


def test_config_errors(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_experiment_config(tmp_path / "bad.json")
    with pytest.raises(ConfigurationError):
        load_experiment_config(tmp_path / "missing.json")
    with pytest.raises(ConfigurationError):
        load_experiment_config(None, ["area.planes=[12.0]"])
    with pytest.raises(ConfigurationError):
        load_experiment_config(None, ["fingerprint.kind=csi"])


def test_config_hash_is_canonical():
    a = ExperimentConfig()
    b = ExperimentConfig.model_validate(json.loads(a.canonical_json()))
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != a.with_updates(seed=1).config_hash()


def test_sfcpm_columns():
    config = ExperimentConfig.model_validate({"fingerprint": {"kind": "sfcpm"}})
    assert config.fingerprint_columns() == config.ofdm.Nc


def test_exit_codes():
    assert ConfigurationError("x").exit_code == 1
    assert NumericalError("x").exit_code == 3
    assert isinstance(ShapeChainError("conv", "too big"), LocalizerError)
    assert str(ShapeChainError("conv", "too big")) == "conv: too big"
