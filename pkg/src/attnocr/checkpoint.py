"""Binary checkpoint format.

Layout, all little-endian::

    b"AOCR"  u32 version  u32 tensor_count
    per tensor: u16 name_len, name (UTF-8), u8 rank, u32 dims[rank], f32 values (row-major)

The step counter and config hash are stored as ``meta/*`` tensors holding
16-bit chunks, which f32 represents exactly. The model config travels in a
JSON sidecar (``<path>.json``) so a checkpoint can be reloaded on its own.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"AOCR"
VERSION = 1


class CheckpointError(Exception):
    pass


def write_tensors(path, tensors):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            arr = np.asarray(arr)
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensors(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    pos = 12
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(dims)
        pos += 4 * size
        out[name] = arr.astype(np.float32)
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes")
    return out


def _u64_to_chunks(x):
    return np.array([(x >> (16 * k)) & 0xFFFF for k in range(4)], dtype=np.float32)


def _chunks_to_u64(a):
    return sum(int(v) << (16 * k) for k, v in enumerate(np.asarray(a)))


@dataclass
class Checkpoint:
    params: dict                        # name -> f32 array (raw weights)
    velocity: dict = field(default_factory=dict)
    polyak: dict = field(default_factory=dict)
    step: int = 0
    config_hash: int = 0
    model_config: dict | None = None
    train_config: dict | None = None

    def weights(self, which="polyak"):
        if which == "polyak" and self.polyak:
            return self.polyak
        if which not in ("polyak", "raw"):
            raise ValueError(f"unknown weight set {which!r}")
        return self.params

    def tensors(self):
        out = {}
        for prefix, group in (("param/", self.params), ("velocity/", self.velocity), ("polyak/", self.polyak)):
            for k, v in group.items():
                out[prefix + k] = np.asarray(v, dtype=np.float32)
        out["meta/step"] = _u64_to_chunks(self.step)
        out["meta/config_hash"] = _u64_to_chunks(self.config_hash)
        return out

    def save(self, path):
        write_tensors(path, self.tensors())
        with open(path + ".json", "w", encoding="utf-8") as f:
            json.dump({"model_config": self.model_config, "train_config": self.train_config,
                       "config_hash": f"{self.config_hash:016x}", "step": self.step},
                      f, indent=2, sort_keys=True, ensure_ascii=False)
        return path

    @classmethod
    def load(cls, path):
        t = read_tensors(path)
        ck = cls({}, {}, {})
        groups = {"param/": ck.params, "velocity/": ck.velocity, "polyak/": ck.polyak}
        for name, arr in t.items():
            for prefix, group in groups.items():
                if name.startswith(prefix):
                    group[name[len(prefix):]] = arr
                    break
        if "meta/step" in t:
            ck.step = _chunks_to_u64(t["meta/step"])
        if "meta/config_hash" in t:
            ck.config_hash = _chunks_to_u64(t["meta/config_hash"])
        try:
            with open(path + ".json", encoding="utf-8") as f:
                side = json.load(f)
            ck.model_config = side.get("model_config")
            ck.train_config = side.get("train_config")
        except FileNotFoundError:
            pass
        return ck
