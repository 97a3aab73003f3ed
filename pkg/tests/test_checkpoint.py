import numpy as np
import pytest

from ialseg.checkpoint import (
    CheckpointError,
    load_checkpoint,
    load_params_into,
    save_checkpoint,
    save_params,
)
from ialseg.net import ParamStore

rng = np.random.default_rng(31337)


def test_round_trip_is_bitwise(tmp_path):
    tensors = {
        "a.weight": rng.normal(size=(3, 3, 2, 4)).astype(np.float32),
        "a.bias": rng.normal(size=4).astype(np.float32),
        "b": rng.normal(size=(7,)).astype(np.float64),
        "scalarish": np.array([1.5], dtype=np.float32),
    }
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, tensors)
    again = load_checkpoint(path)
    assert list(again) == list(tensors)
    for name in tensors:
        assert again[name].dtype == tensors[name].dtype
        np.testing.assert_array_equal(again[name], tensors[name])
    # identical content writes identical bytes
    path2 = tmp_path / "model2.ckpt"
    save_checkpoint(path2, tensors)
    assert path.read_bytes() == path2.read_bytes()


def test_rejects_unsupported_dtype(tmp_path):
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "x.ckpt", {"n": np.zeros(3, dtype=np.int32)})


def test_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTAMODEL" + b"\x00" * 20)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_rejects_truncated_file(tmp_path):
    tensors = {"w": rng.normal(size=(5, 5)).astype(np.float32)}
    path = tmp_path / "t.ckpt"
    save_checkpoint(path, tensors)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 7])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_param_store_round_trip(tmp_path):
    store = ParamStore()
    store.register("w", rng.normal(size=(2, 3)).astype(np.float32))
    store.register("b", rng.normal(size=3).astype(np.float32), l2_exempt=True)
    path = tmp_path / "s.ckpt"
    save_params(path, store)

    other = ParamStore()
    other.register("w", np.zeros((2, 3), dtype=np.float32))
    other.register("b", np.zeros(3, dtype=np.float32), l2_exempt=True)
    load_params_into(other, path)
    np.testing.assert_array_equal(other["w"].value, store["w"].value)
    np.testing.assert_array_equal(other["b"].value, store["b"].value)


def test_load_into_mismatched_store_fails(tmp_path):
    store = ParamStore()
    store.register("w", np.zeros((2, 2), dtype=np.float32))
    path = tmp_path / "s.ckpt"
    save_params(path, store)
    other = ParamStore()
    other.register("w", np.zeros((3, 3), dtype=np.float32))
    with pytest.raises(ValueError):
        load_params_into(other, path)
