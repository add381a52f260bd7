"""Model checkpoint serialization (magic ``RSFL``, version 1).

Layout, all little-endian::

    "RSFL" | u8 version
    field section: model sizes (tags 1..8)
    parameter blobs, f32, in named_arrays() declaration order
    field section: optimizer scalars (lr, betas, eps, step)
    optimizer m then v blobs, f32, same order as the parameters
    u64 training-step counter
    u32 CRC-32 of every preceding byte

Array shapes are not stored; they are recomputed from the model sizes,
so a truncated or padded file fails either the length check or the
checksum. The checksum is verified before any parsing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

from . import binio
from .binio import _TYPE_F32, _TYPE_F64, _TYPE_U32, _TYPE_U64
from .errors import FileFormatError
from .vectorfield import AdamState, ModelConfig, VectorFieldParams

_MAGIC = b"RSFL"
_VERSION = 1

_CONFIG_TAGS = [
    (1, "vocab_size", _TYPE_U32),
    (2, "channels", _TYPE_U32),
    (3, "embed_dim", _TYPE_U32),
    (4, "hidden_dim", _TYPE_U32),
    (5, "num_layers", _TYPE_U32),
    (6, "context_window", _TYPE_U32),
    (7, "time_embed_dim", _TYPE_U32),
    (8, "uncond_prob", _TYPE_F32),
    (9, "pos_embed_dim", _TYPE_U32),
]

_ADAM_TAGS = [
    (1, "lr", _TYPE_F64),
    (2, "beta1", _TYPE_F64),
    (3, "beta2", _TYPE_F64),
    (4, "eps", _TYPE_F64),
    (5, "step", _TYPE_U64),
]


@dataclass
class Checkpoint:
    """A trained (or freshly initialized) model plus its optimizer state."""

    params: VectorFieldParams
    adam: AdamState
    train_step: int

    @property
    def config(self) -> ModelConfig:
        return self.params.config


def _param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    shapes = [
        ("token_embedding", (cfg.vocab_size, cfg.embed_dim)),
        ("null_embedding", (cfg.embed_dim,)),
    ]
    for i, ((wi, wo), (b,)) in enumerate(cfg.layer_shapes()):
        shapes.append((f"layer{i}_weight", (wi, wo)))
        shapes.append((f"layer{i}_bias", (b,)))
    shapes.append(("output_weight", (cfg.hidden_dim, cfg.channels)))
    shapes.append(("output_bias", (cfg.channels,)))
    return shapes


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    cfg = ckpt.config
    parts = [_MAGIC, struct.pack("<B", _VERSION)]
    parts.append(
        binio.pack_fields([(tag, ftype, getattr(cfg, name)) for tag, name, ftype in _CONFIG_TAGS])
    )
    for _, arr in ckpt.params.named_arrays():
        parts.append(binio.pack_array_f32(arr))
    adam = ckpt.adam
    parts.append(
        binio.pack_fields([(tag, ftype, getattr(adam, name)) for tag, name, ftype in _ADAM_TAGS])
    )
    for name, _ in ckpt.params.named_arrays():
        parts.append(binio.pack_array_f32(adam.m[name]))
    for name, _ in ckpt.params.named_arrays():
        parts.append(binio.pack_array_f32(adam.v[name]))
    parts.append(struct.pack("<Q", ckpt.train_step))
    return binio.with_checksum(b"".join(parts))


def checkpoint_from_bytes(blob: bytes) -> Checkpoint:
    payload = binio.verify_checksum(blob)
    if payload[:4] != _MAGIC:
        raise FileFormatError(f"bad magic {payload[:4]!r}, expected {_MAGIC!r}")
    if len(payload) < 5:
        raise FileFormatError("truncated header")
    version = payload[4]
    if version != _VERSION:
        raise FileFormatError(f"unsupported checkpoint version {version}")
    offset = 5

    fields, offset = binio.unpack_fields(payload, offset)
    kwargs = {}
    for tag, name, ftype in _CONFIG_TAGS:
        if tag not in fields:
            raise FileFormatError(f"missing model field tag {tag} ({name})")
        kwargs[name] = float(fields[tag]) if ftype == _TYPE_F32 else int(fields[tag])
    try:
        cfg = ModelConfig(**kwargs)
    except ValueError as exc:
        raise FileFormatError(f"invalid model sizes in checkpoint: {exc}") from exc

    shapes = _param_shapes(cfg)
    arrays = {}
    for name, shape in shapes:
        arrays[name], offset = binio.unpack_array_f32(payload, offset, shape)
    params = VectorFieldParams(
        config=cfg,
        token_embedding=arrays["token_embedding"],
        null_embedding=arrays["null_embedding"],
        layer_weights=[arrays[f"layer{i}_weight"] for i in range(cfg.num_layers)],
        layer_biases=[arrays[f"layer{i}_bias"] for i in range(cfg.num_layers)],
        output_weight=arrays["output_weight"],
        output_bias=arrays["output_bias"],
    )

    fields, offset = binio.unpack_fields(payload, offset)
    scalars = {}
    for tag, name, ftype in _ADAM_TAGS:
        if tag not in fields:
            raise FileFormatError(f"missing optimizer field tag {tag} ({name})")
        scalars[name] = int(fields[tag]) if ftype == _TYPE_U64 else float(fields[tag])
    m, v = {}, {}
    for name, shape in shapes:
        m[name], offset = binio.unpack_array_f32(payload, offset, shape)
    for name, shape in shapes:
        v[name], offset = binio.unpack_array_f32(payload, offset, shape)
    adam = AdamState(
        m=m,
        v=v,
        step=scalars["step"],
        lr=scalars["lr"],
        beta1=scalars["beta1"],
        beta2=scalars["beta2"],
        eps=scalars["eps"],
    )

    if offset + 8 > len(payload):
        raise FileFormatError("truncated training-step counter")
    (train_step,) = struct.unpack_from("<Q", payload, offset)
    offset += 8
    if offset != len(payload):
        raise FileFormatError(f"{len(payload) - offset} trailing bytes after checkpoint payload")
    return Checkpoint(params=params, adam=adam, train_step=int(train_step))


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())
