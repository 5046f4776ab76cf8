"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"TPNT"                      magic
    u32   format_version
    u64   manifest length in bytes
    ...   manifest: UTF-8 JSON (sorted keys)
    u32   CRC-32 of the manifest bytes
    ...   tensor payloads, float64 little-endian, C order, manifest order

The manifest holds the model configuration, vocabularies, feature scalers,
auxiliary statistics, training metadata and, under ``"tensors"``, one
``{"name", "shape", "crc32"}`` entry per parameter array. The file must end
exactly after the last payload.
"""
from __future__ import annotations

import json
import os
import struct
import zlib

import numpy as np

from .errors import CorruptCheckpoint, VersionMismatch
from .ingest import Vocabularies
from .model import FORMAT_VERSION, ModelCheckpoint, TempoNet, TempoNetConfig

MAGIC = b"TPNT"


def to_bytes(ckpt: ModelCheckpoint) -> bytes:
    tensors, payload = [], []
    for name, arr in ckpt.params.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "crc32": zlib.crc32(data)})
        payload.append(data)
    manifest = {
        "config": ckpt.config.to_dict(),
        "vocabularies": ckpt.vocabularies.to_dict(),
        "scalers": {k: list(v) for k, v in ckpt.scalers.items()},
        "tasks": list(ckpt.tasks),
        "stage": ckpt.stage,
        "aux": ckpt.aux,
        "metadata": ckpt.metadata,
        "tensors": tensors,
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    head = MAGIC + struct.pack("<IQ", ckpt.format_version, len(blob)) + blob + struct.pack("<I", zlib.crc32(blob))
    return head + b"".join(payload)


def from_bytes(buf: bytes) -> ModelCheckpoint:
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise CorruptCheckpoint("not a checkpoint file (bad magic)")
    version, n = struct.unpack_from("<IQ", buf, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    start = 16
    if start + n + 4 > len(buf):
        raise CorruptCheckpoint("truncated manifest")
    blob = buf[start:start + n]
    (crc,) = struct.unpack_from("<I", buf, start + n)
    if zlib.crc32(blob) != crc:
        raise CorruptCheckpoint("manifest checksum mismatch")
    try:
        manifest = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"unreadable manifest: {exc}") from exc

    try:
        return _from_manifest(manifest, buf, start + n + 4, version)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"malformed manifest: {exc!r}") from exc


def _from_manifest(manifest, buf, pos, version) -> ModelCheckpoint:
    params = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        data = buf[pos:pos + nbytes]
        if len(data) != nbytes:
            raise CorruptCheckpoint(f"truncated payload for {entry['name']}")
        if zlib.crc32(data) != entry["crc32"]:
            raise CorruptCheckpoint(f"checksum mismatch for {entry['name']}")
        params[entry["name"]] = np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(shape)
        pos += nbytes
    if pos != len(buf):
        raise CorruptCheckpoint(f"{len(buf) - pos} trailing bytes after payload")

    ckpt = ModelCheckpoint(
        config=TempoNetConfig.from_dict(manifest["config"]),
        vocabularies=Vocabularies.from_dict(manifest["vocabularies"]),
        scalers={k: tuple(v) for k, v in manifest["scalers"].items()},
        params=params,
        tasks=tuple(manifest["tasks"]),
        stage=manifest["stage"],
        aux=manifest["aux"],
        metadata=manifest["metadata"],
        format_version=version,
    )
    _verify_shapes(ckpt)
    return ckpt


def _verify_shapes(ckpt: ModelCheckpoint):
    # parameter_shapes only reads structure; the loaded params stand in for the instance
    params = dict(ckpt.params)
    params.setdefault("enc.W", np.zeros((4, 1)))
    params.setdefault("enc.b", np.zeros(4))
    net = TempoNet(ckpt.config, ckpt.vocabularies.sizes(), ckpt.tasks, ckpt.scalers, params=params)
    expected = {k: tuple(v) for k, v in net.parameter_shapes().items()}
    got = {k: tuple(v.shape) for k, v in ckpt.params.items()}
    if got != expected:
        diff = sorted(set(expected) ^ set(got)) or sorted(k for k in got if got[k] != expected[k])
        raise CorruptCheckpoint(f"parameter manifest does not match the model layout: {diff}")


def save(ckpt: ModelCheckpoint, path):
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(to_bytes(ckpt))
    os.replace(tmp, path)


def load(path) -> ModelCheckpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
