"""Single-file parameter checkpoints.

Layout::

    ELBERT1\\n
    <config field>=<value>\\n           one line per ModelConfig field
    array=<name>:<d0>x<d1>...\\n        one line per tensor, in storage order
    end\\n
    <raw data>                         every tensor flattened row-major as
                                       little-endian float64, same order

Scalar-shaped tensors use an empty shape (``array=name:``).  A zero-length
tensor such as ``exit_logits`` for a depth-1 model is written as ``:0``.
"""

from __future__ import annotations

from dataclasses import fields

import numpy as np
import torch

from .data import atomic_write_bytes
from .errors import ParseError
from .model import ModelConfig, SharedEncoderClassifier

MAGIC = "ELBERT1"
_LE_F64 = np.dtype("<f8")


def _shape_str(shape) -> str:
    return "x".join(str(s) for s in shape)


def dumps(params: SharedEncoderClassifier) -> bytes:
    cfg = params.cfg
    lines = [MAGIC]
    lines += [f"{f.name}={getattr(cfg, f.name)}" for f in fields(cfg)]
    named = list(params.named_parameters())
    lines += [f"array={name}:{_shape_str(p.shape)}" for name, p in named]
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("ascii")
    payload = b"".join(p.detach().to(torch.float64).numpy().astype(_LE_F64).tobytes() for _, p in named)
    return header + payload


def save_checkpoint(params: SharedEncoderClassifier, path) -> None:
    atomic_write_bytes(path, dumps(params))


def _parse_header(blob: bytes):
    pos = 0
    config, arrays = {}, []
    lineno = 0
    while True:
        end = blob.find(b"\n", pos)
        if end < 0:
            raise ParseError("header is not terminated by 'end'", lineno + 1)
        line = blob[pos:end].decode("ascii")
        pos = end + 1
        lineno += 1
        if lineno == 1:
            if line != MAGIC:
                raise ParseError(f"bad magic {line!r}", 1)
            continue
        if line == "end":
            return config, arrays, pos
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError(f"expected key=value, got {line!r}", lineno)
        if key == "array":
            name, _, shape = value.partition(":")
            arrays.append((name, tuple(int(s) for s in shape.split("x")) if shape else ()))
        else:
            config[key] = value


def _coerce(cfg_fields: dict) -> ModelConfig:
    defaults = ModelConfig()
    kwargs = {}
    for f in fields(ModelConfig):
        if f.name in cfg_fields:
            kind = type(getattr(defaults, f.name))
            kwargs[f.name] = kind(cfg_fields[f.name])
    return ModelConfig(**kwargs)


def array_sizes(blob: bytes) -> dict:
    """Bytes occupied by each stored tensor."""
    _, arrays, _ = _parse_header(blob)
    return {name: int(np.prod(shape, dtype=np.int64)) * _LE_F64.itemsize for name, shape in arrays}


def loads(blob: bytes) -> SharedEncoderClassifier:
    config, arrays, pos = _parse_header(blob)
    cfg = _coerce(config)
    params = SharedEncoderClassifier(cfg)
    named = dict(params.named_parameters())
    if [n for n, _ in arrays] != list(named):
        raise ParseError("stored tensors do not match the model layout")
    with torch.no_grad():
        for name, shape in arrays:
            count = int(np.prod(shape, dtype=np.int64))
            data = np.frombuffer(blob, dtype=_LE_F64, count=count, offset=pos)
            pos += count * _LE_F64.itemsize
            target = named[name]
            if tuple(target.shape) != shape:
                raise ParseError(f"{name}: stored shape {shape} != {tuple(target.shape)}")
            target.copy_(torch.from_numpy(data.reshape(shape).copy()).to(target.dtype))
    if pos != len(blob):
        raise ParseError(f"{len(blob) - pos} trailing bytes after the last tensor")
    params.eval()
    return params


def load_checkpoint(path) -> SharedEncoderClassifier:
    with open(path, "rb") as f:
        return loads(f.read())
