"""On-disk formats: ensemble checkpoints and adversarial batches.

Checkpoint layout::

    b"DISSENT1"                      8-byte magic
    uint64 little-endian             header length in bytes
    header                           UTF-8 JSON (sorted keys)
    member blocks                    per member: hidden_weights, hidden_bias,
                                     softmax_weights, softmax_bias as
                                     little-endian float64, row-major

An adversarial batch is a directory holding ``manifest.json`` plus raw
little-endian float64 blocks ``originals.f64`` and ``adversarials.f64``.
"""
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .attacks import AdvBatch, AttackSpec
from .ensemble import Ensemble
from .nn import MlpParams

MAGIC = b"DISSENT1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(ensemble, extra=None):
    d_in, hidden, k = ensemble.arch
    header = {
        "format": FORMAT_VERSION,
        "arch": [d_in, hidden, k],
        "n_members": ensemble.n_members,
        "lam": ensemble.train_meta.get("lam"),
        "eta": ensemble.train_meta.get("eta"),
        "seed": ensemble.train_meta.get("seed"),
    }
    if extra:
        header["extra"] = extra
    head = json.dumps(header, sort_keys=True).encode()
    blocks = [MAGIC, struct.pack("<Q", len(head)), head]
    for m in ensemble.members:
        blocks.extend(a.astype("<f8").tobytes() for a in m.arrays())
    return b"".join(blocks)


def write_once(path, data):
    """Create ``path``; refuses to replace an existing file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "xb" if isinstance(data, bytes) else "x"
    with open(path, mode) as fh:
        fh.write(data)
    return path


def save_checkpoint(ensemble, path, extra=None):
    return write_once(path, checkpoint_bytes(ensemble, extra))


def model_id(ensemble):
    """Short content hash identifying an ensemble's parameters."""
    return hashlib.sha256(checkpoint_bytes(ensemble)).hexdigest()[:16]


def parse_checkpoint(raw):
    if raw[:8] != MAGIC:
        raise CheckpointError("not a dissent checkpoint (bad magic)")
    if len(raw) < 16:
        raise CheckpointError("truncated checkpoint header")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    d_in, hidden, k = header["arch"]
    shapes = [(d_in, hidden), (hidden,), (hidden, k), (k,)]
    per_member = sum(int(np.prod(s)) for s in shapes)
    payload = len(raw) - 16 - hlen
    if payload != 8 * per_member * header["n_members"]:
        raise CheckpointError("checkpoint payload does not match its header")
    body = np.frombuffer(raw, dtype="<f8", offset=16 + hlen)
    members, pos = [], 0
    for _ in range(header["n_members"]):
        arrays = []
        for s in shapes:
            size = int(np.prod(s))
            arrays.append(body[pos:pos + size].astype(np.float64).reshape(s))
            pos += size
        members.append(MlpParams(*arrays))
    meta = {key: header[key] for key in ("seed", "lam", "eta") if header.get(key) is not None}
    return Ensemble(members, meta), header


def load_checkpoint(path):
    return parse_checkpoint(Path(path).read_bytes())[0]


def save_adv_batch(batch, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_once(directory / "originals.f64", batch.originals.astype("<f8").tobytes())
    write_once(directory / "adversarials.f64", batch.adversarials.astype("<f8").tobytes())
    manifest = {
        "format": FORMAT_VERSION,
        "shape": list(batch.originals.shape),
        "attack": batch.attack.to_dict(),
        "source_model_id": batch.source_model_id,
        "labels": batch.labels.tolist(),
        "success": batch.success.tolist(),
        "per_example_l2": batch.per_example_l2.tolist(),
    }
    write_once(directory / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
    return directory


def load_adv_batch(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    shape = tuple(manifest["shape"])

    def block(name):
        arr = np.fromfile(directory / name, dtype="<f8")
        if arr.size != shape[0] * shape[1]:
            raise ValueError(f"{name}: expected {shape[0] * shape[1]} values, found {arr.size}")
        return arr.reshape(shape).astype(np.float64)

    return AdvBatch(
        block("originals.f64"),
        block("adversarials.f64"),
        manifest["labels"],
        AttackSpec(**manifest["attack"]),
        manifest["source_model_id"],
        manifest["success"],
    )
