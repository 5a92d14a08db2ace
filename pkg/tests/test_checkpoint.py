import json
import struct

import numpy as np
import pytest

from srb import model as M
from srb.checkpoint import MAGIC, dumps, load_checkpoint, loads, save_checkpoint
from srb.errors import CheckpointError, DataError

CFG = M.ModelConfig(vocab_size=11, embed_dim=3, hidden_dim=4, gate_hidden_dim=2)


@pytest.fixture
def params():
    p = M.init_params(CFG, seed=1)
    rng = np.random.default_rng(0)
    for t in p.values():
        t.values = rng.normal(size=t.shape).astype(np.float32)
    return p


def test_save_load_save_is_byte_identical(tmp_path, params):
    save_checkpoint(tmp_path / "a.srb", params, {"epoch": 3})
    loaded, extra = load_checkpoint(tmp_path / "a.srb")
    save_checkpoint(tmp_path / "b.srb", loaded, extra)
    assert (tmp_path / "a.srb").read_bytes() == (tmp_path / "b.srb").read_bytes()
    assert extra == {"epoch": 3}
    for name in params:
        np.testing.assert_array_equal(loaded[name].values, params[name].values)
        assert loaded[name].dtype == np.float32


def test_layout(params):
    blob = dumps(params)
    assert blob[:4] == MAGIC
    (n,) = struct.unpack("<Q", blob[4:12])
    manifest = json.loads(blob[12:12 + n])
    assert manifest["config"] == CFG.to_dict()
    first = manifest["params"][0]
    body = blob[12 + n:]
    count = int(np.prod(first["shape"]))
    values = np.frombuffer(body, dtype="<f4", count=count, offset=first["offset"])
    np.testing.assert_array_equal(values.reshape(first["shape"]), params[first["name"]].values)
    total = sum(int(np.prod(e["shape"])) for e in manifest["params"])
    assert len(body) == 4 * total


def test_bad_magic(params):
    with pytest.raises(CheckpointError):
        loads(b"XXXX" + dumps(params)[4:])


def test_truncated(params):
    with pytest.raises(CheckpointError):
        loads(dumps(params)[:-8])


def test_incompatible_config(params):
    other = M.ModelConfig(vocab_size=12, embed_dim=3, hidden_dim=4, gate_hidden_dim=2)
    with pytest.raises(CheckpointError, match="vocab_size"):
        loads(dumps(params), expect=other)


def test_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "none.srb")
