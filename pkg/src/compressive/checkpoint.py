"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    magic  b"CMPTRSF\\0"
    u32    format version
    u32    block count
    block* u32 name length, name (utf-8), u8 kind,
           kind 0 (array): u8 dtype code, u32 ndim, u64 dims..., u64 nbytes, data
           kind 1 (json):  u64 nbytes, utf-8 text
    sha256 of every preceding byte

Arrays are stored as little-endian IEEE-754 (int64 for index data). Block
order is the order of insertion, so save -> load -> save is byte-identical.
"""

import hashlib
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .compression import CompressionSpec
from .errors import CheckpointError
from .memory import MemoryState
from .model import CompressiveTransformer, ModelConfig

MAGIC = b"CMPTRSF\x00"
VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<i8"): 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def encode_blocks(blocks):
    parts = [MAGIC, struct.pack("<II", VERSION, len(blocks))]
    for name, value in blocks.items():
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        if isinstance(value, np.ndarray):
            arr = np.ascontiguousarray(value)
            dtype = arr.dtype.newbyteorder("<")
            if dtype not in _DTYPE_CODES:
                raise CheckpointError(f"unsupported dtype {arr.dtype} for block {name}")
            data = arr.astype(dtype, copy=False).tobytes()
            parts.append(struct.pack("<BBI", 0, _DTYPE_CODES[dtype], arr.ndim))
            parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            parts.append(struct.pack("<Q", len(data)))
            parts.append(data)
        else:
            text = json.dumps(value, sort_keys=True, separators=(",", ":")).encode("utf-8")
            parts.append(struct.pack("<BQ", 1, len(text)))
            parts.append(text)
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode_blocks(raw):
    if len(raw) < len(MAGIC) + 8 + 32 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch: checkpoint is corrupted")
    version, count = struct.unpack_from("<II", body, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    pos = len(MAGIC) + 8
    blocks = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos: pos + name_len].decode("utf-8")
            pos += name_len
            kind = body[pos]
            pos += 1
            if kind == 0:
                code, ndim = struct.unpack_from("<BI", body, pos)
                pos += 5
                shape = struct.unpack_from(f"<{ndim}Q", body, pos)
                pos += 8 * ndim
                (nbytes,) = struct.unpack_from("<Q", body, pos)
                pos += 8
                arr = np.frombuffer(body[pos: pos + nbytes], dtype=_CODE_DTYPES[code])
                blocks[name] = arr.reshape(shape).copy()
                pos += nbytes
            elif kind == 1:
                (nbytes,) = struct.unpack_from("<Q", body, pos)
                pos += 8
                blocks[name] = json.loads(body[pos: pos + nbytes].decode("utf-8"))
                pos += nbytes
            else:
                raise CheckpointError(f"unknown block kind {kind}")
    except (struct.error, KeyError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    if pos != len(body):
        raise CheckpointError("trailing bytes after last block")
    return blocks


def config_to_dict(config):
    return asdict(config)


def config_from_dict(d):
    d = dict(d)
    d["compression"] = CompressionSpec(**d["compression"])
    return ModelConfig(**d)


def _state_blocks(state):
    out = {"memory.meta": {"mem_fill": state.mem_fill, "cmem_fill": state.cmem_fill,
                           "steps": state.steps, "n_layers": state.n_layers}}
    for i in range(state.n_layers):
        out[f"memory.mem.{i}"] = state.mem[i].data
        out[f"memory.cmem.{i}"] = state.cmem[i].data
        out[f"memory.usage.{i}"] = state.usage[i]
    return out


def state_from_blocks(blocks):
    meta = blocks["memory.meta"]
    n = meta["n_layers"]
    mode = ag.precision_of(blocks["memory.mem.0"].dtype) if n else ag.get_precision()
    with ag.precision(mode):
        return _state(blocks, meta, n)


def _state(blocks, meta, n):
    return MemoryState(
        mem=[Tensor(blocks[f"memory.mem.{i}"]) for i in range(n)],
        cmem=[Tensor(blocks[f"memory.cmem.{i}"]) for i in range(n)],
        usage=[blocks[f"memory.usage.{i}"].astype(np.float64) for i in range(n)],
        mem_fill=meta["mem_fill"],
        cmem_fill=meta["cmem_fill"],
        steps=meta["steps"],
    )


def build_blocks(model, trainer=None, run_config=None, extra=None):
    blocks = {
        "config": {"model": config_to_dict(model.config), "run": run_config or {}},
        "meta": {
            "step": trainer.step if trainer is not None else 0,
            "precision": model.embedding.dtype.name,
            "dropout_rng": model.dropout_rng.bit_generator.state,
            "adam_t": {} if trainer is None else {
                "transformer": trainer.transformer.adam.t,
                "compression": trainer.compression.adam.t,
            },
            **(extra or {}),
        },
    }
    for name, tensor in model.parameters().items():
        blocks[f"param.{name}"] = tensor.data
    if trainer is not None:
        blocks.update(trainer.transformer.adam.state_arrays("opt.transformer"))
        blocks.update(trainer.compression.adam.state_arrays("opt.compression"))
        blocks.update(_state_blocks(trainer.state))
    return blocks


def save_checkpoint(path, model, trainer=None, run_config=None, extra=None):
    raw = encode_blocks(build_blocks(model, trainer, run_config, extra))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(raw)
    tmp.replace(path)
    return path


def load_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return decode_blocks(path.read_bytes())


def model_from_blocks(blocks):
    config = config_from_dict(blocks["config"]["model"])
    mode = "double" if blocks["meta"].get("precision") == "float64" else "single"
    with ag.precision(mode):
        model = CompressiveTransformer(config, seed=0)
    params = {k[len("param."):]: v for k, v in blocks.items() if k.startswith("param.")}
    model.load_parameters(params)
    rng_state = blocks["meta"].get("dropout_rng")
    if rng_state is not None:
        model.dropout_rng.bit_generator.state = rng_state
    return model


def restore_trainer(blocks, trainer):
    """Load optimizer moments, memory state and the step counter into ``trainer``."""
    meta = blocks["meta"]
    trainer.step = meta["step"]
    adam_t = meta.get("adam_t", {})
    trainer.transformer.adam.load_state_arrays("opt.transformer", blocks, adam_t.get("transformer", 0))
    trainer.compression.adam.load_state_arrays("opt.compression", blocks, adam_t.get("compression", 0))
    if "memory.meta" in blocks:
        trainer.state = state_from_blocks(blocks)
    return trainer
