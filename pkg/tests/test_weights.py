"""Round-trip and validation tests for the model weights container."""

import numpy as np
import pytest
import torch
from torch import nn

from ctxredraw import weights as w
from ctxredraw.validation import FormatError, ValidationError


def _sample_tensors():
    rng = np.random.default_rng(0)
    return {
        "encoder.conv1.weight": rng.normal(size=(4, 3, 3, 3)).astype(np.float32),
        "encoder.conv1.bias": rng.normal(size=(4,)).astype(np.float32),
        "head.weight": rng.normal(size=(2, 4)).astype(np.float64),
    }


def test_round_trip_exact(tmp_path):
    tensors = _sample_tensors()
    path = tmp_path / "model.weights"
    w.save_weights(path, tensors, meta={"kind": "test", "widths": [4, 2]})
    loaded, meta = w.load_weights(path)
    assert meta == {"kind": "test", "widths": [4, 2]}
    assert list(loaded) == list(tensors)
    for name, arr in tensors.items():
        assert loaded[name].dtype == arr.dtype
        assert np.array_equal(loaded[name], arr)


def test_save_accepts_torch_tensors(tmp_path):
    path = tmp_path / "t.weights"
    w.save_weights(path, {"a": torch.arange(6, dtype=torch.float32).reshape(2, 3)})
    loaded, _ = w.load_weights(path)
    assert np.array_equal(loaded["a"], np.arange(6, dtype=np.float32).reshape(2, 3))


def test_bytes_deterministic(tmp_path):
    tensors = _sample_tensors()
    p1 = tmp_path / "a.weights"
    p2 = tmp_path / "b.weights"
    w.save_weights(p1, tensors, meta={"seed": 1})
    w.save_weights(p2, tensors, meta={"seed": 1})
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.weights"
    path.write_bytes(b"not a weights file\n")
    with pytest.raises(FormatError):
        w.load_weights(path)


def test_truncated_payload_rejected(tmp_path):
    path = tmp_path / "trunc.weights"
    w.save_weights(path, _sample_tensors())
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(FormatError):
        w.load_weights(path)


def test_load_into_module_validates_names_and_shapes(tmp_path):
    module = nn.Linear(4, 2)
    path = tmp_path / "lin.weights"
    w.save_weights(path, module.state_dict())
    loaded, _ = w.load_weights(path)
    # happy path
    w.load_state_into(nn.Linear(4, 2), loaded)
    # wrong shape
    with pytest.raises(ValidationError):
        w.load_state_into(nn.Linear(5, 2), loaded)
    # missing name
    bad = dict(loaded)
    del bad["bias"]
    with pytest.raises(ValidationError):
        w.load_state_into(nn.Linear(4, 2), bad)
    # extra name
    extra = dict(loaded)
    extra["spurious"] = np.zeros(1, dtype=np.float32)
    with pytest.raises(ValidationError):
        w.load_state_into(nn.Linear(4, 2), extra)


def test_load_into_module_applies_values():
    module = nn.Linear(3, 2)
    tensors = {
        "weight": np.full((2, 3), 0.5, dtype=np.float32),
        "bias": np.array([1.0, -1.0], dtype=np.float32),
    }
    w.load_state_into(module, tensors)
    assert torch.allclose(module.weight, torch.full((2, 3), 0.5))
    assert torch.allclose(module.bias, torch.tensor([1.0, -1.0]))
