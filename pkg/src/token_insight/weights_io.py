"""Flat tensor-archive file format (TNSA) and the ViT parameter loader.

File layout, byte exact:

    bytes 0..3    magic "TNSA"
    bytes 4..11   header length, 8-byte little-endian unsigned
    header        UTF-8 JSON: name -> {"shape": [...], "offset": o, "nbytes": n}
                  with offsets relative to the payload start
    payload       raw little-endian float32 data, immediately after the header

The writer sorts entries by name and emits compact JSON with sorted
keys, so writing the same tensor map always produces identical bytes.
Only float32 is supported. The format is deliberately trivial so that
any training stack can emit it with a few lines of export code.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .vit import BlockWeights, ViTConfig, ViTWeights

__all__ = [
    "ArchiveError",
    "SchemaError",
    "MAGIC",
    "write_archive",
    "read_archive",
    "encode_archive",
    "decode_archive",
    "canonical_schema",
    "validate_vit_schema",
    "load_vit_weights",
]

MAGIC = b"TNSA"


class ArchiveError(ValueError):
    """Malformed or unreadable tensor archive."""


class SchemaError(ValueError):
    """Tensor map does not match the canonical ViT parameter schema."""


def encode_archive(tensors: Mapping[str, np.ndarray]) -> bytes:
    header: dict[str, dict] = {}
    chunks: list[bytes] = []
    offset = 0
    for name in sorted(tensors):
        if not isinstance(name, str) or not name:
            raise ArchiveError(f"tensor names must be non-empty strings, got {name!r}")
        arr = np.asarray(tensors[name], dtype="<f4")
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        if any(dim < 1 for dim in arr.shape):
            raise ArchiveError(f"tensor {name!r} has non-positive dimension {arr.shape}")
        blob = arr.tobytes()
        header[name] = {"shape": list(arr.shape), "offset": offset, "nbytes": len(blob)}
        chunks.append(blob)
        offset += len(blob)
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header_bytes)) + header_bytes + b"".join(chunks)


def write_archive(tensors: Mapping[str, np.ndarray], path) -> None:
    """Write a name->tensor map; reading the file back yields the same map."""
    Path(path).write_bytes(encode_archive(tensors))


def decode_archive(data: bytes, name: str = "<bytes>") -> dict[str, np.ndarray]:
    if len(data) < 12:
        raise ArchiveError(f"{name}: file too short to be a tensor archive")
    if data[:4] != MAGIC:
        raise ArchiveError(f"{name}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    (header_len,) = struct.unpack("<Q", data[4:12])
    header_end = 12 + header_len
    if header_end > len(data):
        raise ArchiveError(f"{name}: truncated header ({header_len} bytes declared)")
    try:
        header = json.loads(data[12:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"{name}: malformed header ({exc})")
    if not isinstance(header, dict):
        raise ArchiveError(f"{name}: malformed header (expected an object)")

    payload = data[header_end:]
    spans: list[tuple[int, int, str]] = []
    tensors: dict[str, np.ndarray] = {}
    for key, entry in header.items():
        if (
            not isinstance(entry, dict)
            or not isinstance(entry.get("shape"), list)
            or not all(isinstance(d, int) and d >= 1 for d in entry["shape"])
            or not isinstance(entry.get("offset"), int)
            or not isinstance(entry.get("nbytes"), int)
            or entry["offset"] < 0
            or entry["nbytes"] < 0
        ):
            raise ArchiveError(f"{name}: malformed header entry for {key!r}")
        shape = tuple(entry["shape"])
        offset, nbytes = entry["offset"], entry["nbytes"]
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if nbytes != 4 * count:
            raise ArchiveError(
                f"{name}: entry {key!r} declares {nbytes} bytes but shape {shape} needs {4 * count}"
            )
        if offset + nbytes > len(payload):
            raise ArchiveError(
                f"{name}: entry {key!r} extends past the end of the payload (truncated file?)"
            )
        spans.append((offset, offset + nbytes, key))
        flat = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        tensors[key] = flat.reshape(shape).copy()

    spans.sort()
    for (s0, e0, k0), (s1, _e1, k1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise ArchiveError(f"{name}: entries {k0!r} and {k1!r} have overlapping byte ranges")
    return tensors


def read_archive(path) -> dict[str, np.ndarray]:
    """Exact inverse of write_archive."""
    p = Path(path)
    if not p.is_file():
        raise ArchiveError(f"{p}: no such file")
    return decode_archive(p.read_bytes(), name=str(p))


def canonical_schema(config: ViTConfig) -> dict[str, tuple[int, ...]]:
    """Expected tensor names and shapes for a ViT of the given geometry."""
    d = config.dim
    patch_dim = config.patch_size * config.patch_size * 3
    schema: dict[str, tuple[int, ...]] = {
        "patch_embed.weight": (d, patch_dim),
        "patch_embed.bias": (d,),
        "cls_token": (d,),
        "pos_embed": (config.token_count + 1, d),
        "ln_final.weight": (d,),
        "ln_final.bias": (d,),
        "head.weight": (config.num_classes, d),
        "head.bias": (config.num_classes,),
    }
    hidden = config.mlp_ratio * d
    for i in range(config.depth):
        schema[f"blocks.{i}.ln1.weight"] = (d,)
        schema[f"blocks.{i}.ln1.bias"] = (d,)
        schema[f"blocks.{i}.attn.qkv.weight"] = (3 * d, d)
        schema[f"blocks.{i}.attn.qkv.bias"] = (3 * d,)
        schema[f"blocks.{i}.attn.proj.weight"] = (d, d)
        schema[f"blocks.{i}.attn.proj.bias"] = (d,)
        schema[f"blocks.{i}.ln2.weight"] = (d,)
        schema[f"blocks.{i}.ln2.bias"] = (d,)
        schema[f"blocks.{i}.mlp.fc1.weight"] = (hidden, d)
        schema[f"blocks.{i}.mlp.fc1.bias"] = (hidden,)
        schema[f"blocks.{i}.mlp.fc2.weight"] = (d, hidden)
        schema[f"blocks.{i}.mlp.fc2.bias"] = (d,)
    return schema


def _describe(key: str, shape: tuple[int, ...], config: ViTConfig) -> str:
    if key == "pos_embed":
        return (
            f"{shape} (token count {config.token_count} plus the cls slot, "
            f"by embedding dim {config.dim})"
        )
    return str(shape)


def validate_vit_schema(tensors: Mapping[str, np.ndarray], config: ViTConfig) -> ViTWeights:
    """Check the tensor map against the canonical schema and bind it.

    Every canonical key must be present with exactly the expected shape,
    and no unknown keys may appear. Arrays in the returned weight set
    are marked read-only so they can be shared across workers.
    """
    schema = canonical_schema(config)
    for key, expected in schema.items():
        if key not in tensors:
            raise SchemaError(f"missing tensor {key!r} (expected shape {expected})")
        found = tuple(tensors[key].shape)
        if found != expected:
            raise SchemaError(
                f"tensor {key!r} has shape {found}, expected {_describe(key, expected, config)}"
            )
    for key in tensors:
        if key not in schema:
            raise SchemaError(f"unexpected tensor {key!r} not in the canonical schema")

    def frozen(key: str) -> np.ndarray:
        arr = np.ascontiguousarray(np.asarray(tensors[key], dtype=np.float32))
        arr.flags.writeable = False
        return arr

    blocks = tuple(
        BlockWeights(
            ln1_w=frozen(f"blocks.{i}.ln1.weight"),
            ln1_b=frozen(f"blocks.{i}.ln1.bias"),
            qkv_w=frozen(f"blocks.{i}.attn.qkv.weight"),
            qkv_b=frozen(f"blocks.{i}.attn.qkv.bias"),
            proj_w=frozen(f"blocks.{i}.attn.proj.weight"),
            proj_b=frozen(f"blocks.{i}.attn.proj.bias"),
            ln2_w=frozen(f"blocks.{i}.ln2.weight"),
            ln2_b=frozen(f"blocks.{i}.ln2.bias"),
            fc1_w=frozen(f"blocks.{i}.mlp.fc1.weight"),
            fc1_b=frozen(f"blocks.{i}.mlp.fc1.bias"),
            fc2_w=frozen(f"blocks.{i}.mlp.fc2.weight"),
            fc2_b=frozen(f"blocks.{i}.mlp.fc2.bias"),
        )
        for i in range(config.depth)
    )
    return ViTWeights(
        config=config,
        patch_embed_w=frozen("patch_embed.weight"),
        patch_embed_b=frozen("patch_embed.bias"),
        cls_token=frozen("cls_token"),
        pos_embed=frozen("pos_embed"),
        blocks=blocks,
        ln_final_w=frozen("ln_final.weight"),
        ln_final_b=frozen("ln_final.bias"),
        head_w=frozen("head.weight"),
        head_b=frozen("head.bias"),
    )


def load_vit_weights(path, config: ViTConfig) -> ViTWeights:
    """read_archive + validate_vit_schema in one step."""
    return validate_vit_schema(read_archive(path), config)
