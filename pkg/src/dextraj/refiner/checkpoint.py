"""Versioned checkpoint container for the refiner.

A checkpoint is a text header followed by raw little-endian float64 tensor
data, so identical training runs serialize to identical bytes (the file
carries no timestamps and no pickle framing):

    dextraj-checkpoint 1
    stage pretrain
    epoch 7
    seed 0
    next_epoch 8
    config <name> <value>          (one line per architecture field)
    train <name> <value>           (one line per training field)
    tensor <param name> <n_elems> <dim0> <dim1> ...
    ...
    blob
    <concatenated raw float64 bytes, header order>

The shuffle RNG is stateless (each epoch reseeds from (seed, epoch)), so
`seed` plus `next_epoch` is its complete state.
"""

import io
from dataclasses import fields

import numpy as np
import torch

from .model import RefinerConfig, TrajectoryRefiner

_MAGIC = "dextraj-checkpoint"
_VERSION = 1


class CheckpointError(ValueError):
    pass


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def save_checkpoint(path, net: TrajectoryRefiner, epoch: int, stage: str,
                    seed: int, train_fields: dict | None = None) -> None:
    """Write `net` and its run position to `path` (byte-deterministic)."""
    head = io.StringIO()
    head.write(f"{_MAGIC} {_VERSION}\n")
    head.write(f"stage {stage}\n")
    head.write(f"epoch {epoch}\n")
    head.write(f"seed {seed}\n")
    head.write(f"next_epoch {epoch + 1}\n")
    for f in fields(net.config):
        head.write(f"config {f.name} {_fmt(getattr(net.config, f.name))}\n")
    for k in sorted(train_fields or {}):
        head.write(f"train {k} {_fmt(train_fields[k])}\n")
    blobs = []
    for name, tensor in net.state_dict().items():
        arr = tensor.detach().numpy()
        if arr.dtype != np.float64:
            raise CheckpointError(f"non-double parameter {name!r}")
        dims = " ".join(str(s) for s in arr.shape)
        head.write(f"tensor {name} {arr.size} {dims}".rstrip() + "\n")
        blobs.append(arr.astype("<f8").tobytes(order="C"))
    head.write("blob\n")
    with open(path, "wb") as fh:
        fh.write(head.getvalue().encode("ascii"))
        for b in blobs:
            fh.write(b)


def _parse_config(pairs: dict) -> RefinerConfig:
    kwargs = {}
    for f in fields(RefinerConfig):
        if f.name not in pairs:
            raise CheckpointError(f"checkpoint missing config field {f.name!r}")
        cast = float if f.type in (float, "float") else int
        kwargs[f.name] = cast(pairs[f.name])
    return RefinerConfig(**kwargs)


def load_checkpoint(path):
    """Read a checkpoint; returns (net, info dict).

    info carries: stage, epoch, seed, next_epoch, train (dict of echoed
    training fields, as strings).
    """
    with open(path, "rb") as fh:
        data = fh.read()
    nl = data.index(b"\nblob\n")
    header = data[: nl + 1].decode("ascii").splitlines()
    blob = data[nl + len(b"\nblob\n"):]
    first = header[0].split()
    if len(first) != 2 or first[0] != _MAGIC:
        raise CheckpointError("not a checkpoint file")
    if int(first[1]) != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {first[1]}")

    info = {"train": {}}
    cfg_pairs = {}
    tensor_specs = []
    for line in header[1:]:
        parts = line.split()
        if parts[0] == "config":
            cfg_pairs[parts[1]] = parts[2]
        elif parts[0] == "train":
            info["train"][parts[1]] = parts[2]
        elif parts[0] == "tensor":
            name, n = parts[1], int(parts[2])
            shape = tuple(int(s) for s in parts[3:])
            tensor_specs.append((name, n, shape))
        elif parts[0] in ("stage",):
            info["stage"] = parts[1]
        elif parts[0] in ("epoch", "seed", "next_epoch"):
            info[parts[0]] = int(parts[1])
        else:
            raise CheckpointError(f"unknown header line {line!r}")

    config = _parse_config(cfg_pairs)
    net = TrajectoryRefiner(config)
    state = {}
    off = 0
    for name, n, shape in tensor_specs:
        nbytes = n * 8
        if off + nbytes > len(blob):
            raise CheckpointError("checkpoint blob truncated")
        arr = np.frombuffer(blob[off: off + nbytes], dtype="<f8").reshape(shape)
        state[name] = torch.from_numpy(arr.copy())
        off += nbytes
    if off != len(blob):
        raise CheckpointError("checkpoint blob has trailing bytes")
    net.load_state_dict(state)
    return net, info
