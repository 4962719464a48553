"""Binary checkpoint format.

Layout (all integers little-endian):

    magic      4 bytes  "CLDL"
    version    u32      currently 1
    digest     32 bytes sha256 over the canonical topology JSON
    seed       u64      run seed
    n_tensors  u32
    per tensor: ndim u32, dims u32 * ndim, float64 data (little-endian)
    n_state    u32      optional trainer-state tensors (same encoding)

Loading refuses a file whose topology digest does not match the model it is
being loaded into; round-tripping reproduces bit-identical weights.
"""

import hashlib
import json
import struct
from dataclasses import asdict

import numpy as np

from .backprop import all_weight_tensors

MAGIC = b"CLDL"
VERSION = 1


class CheckpointError(ValueError):
    """Raised on malformed files or topology mismatches."""


def topology_digest(net, heads):
    desc = {
        "input_shape": list(net.input_shape),
        "layers": [asdict(s) for s in net.specs],
        "heads": [
            {"index": h.index, "attach": h.attach, "layers": [asdict(s) for s in h.net.specs]}
            for h in heads
        ],
    }
    blob = json.dumps(desc, sort_keys=True, default=list).encode()
    return hashlib.sha256(blob).digest()


def _write_tensors(f, tensors):
    f.write(struct.pack("<I", len(tensors)))
    for t in tensors:
        f.write(struct.pack("<I", t.ndim))
        f.write(struct.pack(f"<{t.ndim}I", *t.shape))
        f.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def _read_exact(f, n):
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint (wanted {n} bytes, got {len(buf)})")
    return buf


def _read_tensors(f):
    (count,) = struct.unpack("<I", _read_exact(f, 4))
    tensors = []
    for _ in range(count):
        (ndim,) = struct.unpack("<I", _read_exact(f, 4))
        shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(_read_exact(f, 8 * size), dtype="<f8")
        tensors.append(data.reshape(shape).astype(np.float64))
    return tensors


def save_checkpoint(path, net, heads, seed, trainer_state=None):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(topology_digest(net, heads))
        f.write(struct.pack("<Q", seed))
        _write_tensors(f, all_weight_tensors(net, heads))
        _write_tensors(f, trainer_state or [])


def load_checkpoint(path, net, heads):
    """Fill the model's weights from a checkpoint; returns (seed, state)."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r} (expected {MAGIC!r})")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        digest = _read_exact(f, 32)
        if digest != topology_digest(net, heads):
            raise CheckpointError("topology digest mismatch: checkpoint was written for a different model")
        (seed,) = struct.unpack("<Q", _read_exact(f, 8))
        tensors = _read_tensors(f)
        state = _read_tensors(f)
        if f.read(1):
            raise CheckpointError("trailing bytes after checkpoint payload")
    targets = all_weight_tensors(net, heads)
    if len(tensors) != len(targets):
        raise CheckpointError(f"tensor count {len(tensors)} != model weight count {len(targets)}")
    for dst, src in zip(targets, tensors):
        if dst.shape != src.shape:
            raise CheckpointError(f"weight shape {src.shape} != model shape {dst.shape}")
        dst[...] = src
    return seed, state
