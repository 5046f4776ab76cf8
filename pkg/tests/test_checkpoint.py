import json
import struct
import zlib

import numpy as np
import pytest

from flowtpp import checkpoint
from flowtpp.errors import CorruptCheckpoint, VersionMismatch
from flowtpp.ingest import encode_arrays
from flowtpp.model import TempoNetConfig, forward_loss, train, train_two_stage

from .helpers import random_dataset

CFG = TempoNetConfig(K=2, H=6, src_hidden=4, epochs=1,
                     embedding_dims={"src_ip": 2, "dst_ip": 2, "protocol": 1, "src_port": 2, "dst_port": 2})


@pytest.fixture(scope="module")
def trained():
    ds = random_dataset(np.random.default_rng(0), 60)
    return ds, train(ds, CFG)


def test_round_trip_bitwise(trained, tmp_path):
    ds, ck = trained
    path = tmp_path / "m.tpnt"
    checkpoint.save(ck, path)
    back = checkpoint.load(path)
    assert back.params.keys() == ck.params.keys()
    for k in ck.params:
        assert back.params[k].tobytes() == ck.params[k].tobytes()
    assert back.config == ck.config and back.tasks == ck.tasks
    assert back.vocabularies.to_dict() == ck.vocabularies.to_dict()
    assert back.metadata == ck.metadata and back.aux == ck.aux
    # the loaded model scores a fixed batch identically
    a = forward_loss(ck.build(), encode_arrays(ds, ck.vocabularies)).as_dict()
    b = forward_loss(back.build(), encode_arrays(ds, back.vocabularies)).as_dict()
    assert a == b
    assert checkpoint.to_bytes(back) == path.read_bytes()


def test_layout(trained):
    _, ck = trained
    buf = checkpoint.to_bytes(ck)
    assert buf[:4] == b"TPNT"
    version, n = struct.unpack_from("<IQ", buf, 4)
    assert version == ck.format_version
    manifest = json.loads(buf[16:16 + n])
    assert struct.unpack_from("<I", buf, 16 + n)[0] == zlib.crc32(buf[16:16 + n])
    pos = 16 + n + 4
    for entry in manifest["tensors"]:
        size = 8 * int(np.prod(entry["shape"]))
        arr = np.frombuffer(buf[pos:pos + size], dtype="<f8").reshape(entry["shape"])
        np.testing.assert_array_equal(arr, ck.params[entry["name"]])
        pos += size
    assert pos == len(buf)


def test_truncated(trained):
    buf = checkpoint.to_bytes(trained[1])
    for cut in (3, 20, len(buf) // 2, len(buf) - 1):
        with pytest.raises(CorruptCheckpoint):
            checkpoint.from_bytes(buf[:cut])
    with pytest.raises(CorruptCheckpoint):
        checkpoint.from_bytes(buf + b"\0")


def test_bit_flip(trained):
    buf = bytearray(checkpoint.to_bytes(trained[1]))
    buf[-5] ^= 0x01
    with pytest.raises(CorruptCheckpoint):
        checkpoint.from_bytes(bytes(buf))
    buf = bytearray(checkpoint.to_bytes(trained[1]))
    buf[30] ^= 0x01
    with pytest.raises(CorruptCheckpoint):
        checkpoint.from_bytes(bytes(buf))


def test_version_bump(trained):
    buf = bytearray(checkpoint.to_bytes(trained[1]))
    struct.pack_into("<I", buf, 4, trained[1].format_version + 1)
    with pytest.raises(VersionMismatch):
        checkpoint.from_bytes(bytes(buf))


def rewrite_manifest(buf, edit):
    _, n = struct.unpack_from("<IQ", buf, 4)
    manifest = json.loads(buf[16:16 + n])
    edit(manifest)
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    return buf[:4] + struct.pack("<IQ", 1, len(blob)) + blob + struct.pack("<I", zlib.crc32(blob)) + buf[16 + n + 4:]


def test_shape_manifest_verified(trained):
    buf = checkpoint.to_bytes(trained[1])

    def reshape(m):
        t = next(e for e in m["tensors"] if e["name"] == "enc.b")
        t["shape"] = [t["shape"][0] // 2, 2]

    with pytest.raises(CorruptCheckpoint):
        checkpoint.from_bytes(rewrite_manifest(buf, reshape))
    with pytest.raises(CorruptCheckpoint):
        checkpoint.from_bytes(rewrite_manifest(buf, lambda m: m.pop("vocabularies")))


def test_not_a_checkpoint(tmp_path):
    path = tmp_path / "x.tpnt"
    path.write_bytes(b"hello world, not a model")
    with pytest.raises(CorruptCheckpoint):
        checkpoint.load(path)


def test_two_stage_checkpoints_round_trip(tmp_path):
    ds = random_dataset(np.random.default_rng(1), 40)
    for ck in train_two_stage(ds, CFG):
        path = tmp_path / f"s{ck.stage}.tpnt"
        checkpoint.save(ck, path)
        back = checkpoint.load(path)
        assert back.stage == ck.stage and back.tasks == ck.tasks
