"""Tensor container files and key=value manifests.

Container layout (all integers little-endian):

    bytes 0..3   magic "TGCT"
    byte  4      version, currently 1 (float32 payload)
    bytes 5..8   extent count, uint32
    then         one uint32 per extent
    then         the scalars, raw IEEE-754 float32

Checkpoints are directories holding one container per named tensor plus a
``manifest.txt`` of ``key = value`` lines.
"""

import os
import struct

import numpy as np

from tgansc.engine.tensor import Tensor
from tgansc.errors import FormatError

MAGIC = b"TGCT"
VERSION = 1


def save_tensor(path, array):
    data = array.data if isinstance(array, Tensor) else np.asarray(array)
    data = np.ascontiguousarray(data, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(struct.pack("<I", data.ndim))
        fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
        fh.write(data.astype("<f4", copy=False).tobytes())


def load_tensor(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r} at byte 0")
    if len(blob) < 9:
        raise FormatError(f"{path}: truncated header at byte {len(blob)}")
    version = blob[4]
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    ndim = struct.unpack_from("<I", blob, 5)[0]
    header_end = 9 + 4 * ndim
    if len(blob) < header_end:
        raise FormatError(f"{path}: truncated extent list at byte {len(blob)}")
    shape = struct.unpack_from(f"<{ndim}I", blob, 9)
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    expected = header_end + 4 * count
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload length mismatch at byte {len(blob)} (expected {expected})"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=header_end, count=count)
    return data.reshape(shape).astype(np.float32)


def save_tensor_dict(dirpath, tensors):
    os.makedirs(dirpath, exist_ok=True)
    for name, t in tensors.items():
        save_tensor(os.path.join(dirpath, f"{name}.tgct"), t)


def load_tensor_dict(dirpath):
    out = {}
    for fname in sorted(os.listdir(dirpath)):
        if fname.endswith(".tgct"):
            out[fname[: -len(".tgct")]] = load_tensor(os.path.join(dirpath, fname))
    return out


def write_manifest(path, items):
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in items.items():
            fh.write(f"{key} = {value}\n")


def read_manifest(path):
    items = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            items[key.strip()] = value.strip()
    return items
