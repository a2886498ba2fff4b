"""Bit-exact dataset container.

Single-file binary layout (little endian), documented in
``docs/container_format.md``:

    magic   b"NABS"
    u32     format version (currently 1)
    u32     header JSON length, header JSON bytes, u32 crc32(header JSON)
    N records, each:
        u64 id, u32 label, u8 provenance, H*W*C float32 pixel bytes,
        u32 crc32(record bytes before the crc)
    optional manifest block:  u64 length, JSON bytes, u32 crc32
    optional extras block:    u64 length, JSON bytes, u32 crc32

Pixels are stored as raw float32, so save followed by load reproduces the
split exactly, byte for byte.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path
from typing import BinaryIO

from .dataset import DatasetSplit, LabeledExample, PoisonManifest, Provenance
from .errors import FormatError, IntegrityError

import numpy as np

MAGIC = b"NABS"
VERSION = 1


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated container: expected {n} bytes for {what}, got {len(data)}")
    return data


def _write_json_block(f: BinaryIO, obj: dict) -> None:
    payload = json.dumps(obj, sort_keys=True).encode("utf-8")
    f.write(struct.pack("<Q", len(payload)))
    f.write(payload)
    f.write(struct.pack("<I", zlib.crc32(payload)))


def _read_json_block(f: BinaryIO, what: str) -> dict:
    (length,) = struct.unpack("<Q", _read_exact(f, 8, f"{what} length"))
    payload = _read_exact(f, length, what)
    (crc,) = struct.unpack("<I", _read_exact(f, 4, f"{what} checksum"))
    if crc != zlib.crc32(payload):
        raise IntegrityError(f"{what} block failed its checksum")
    return json.loads(payload.decode("utf-8"))


def save_split(
    split: DatasetSplit,
    path: str | os.PathLike,
    manifest: PoisonManifest | None = None,
    extras: dict | None = None,
) -> None:
    h, w, c = split.image_shape if len(split) else (0, 0, 0)
    header = {
        "name": split.name,
        "class_count": split.class_count,
        "n": len(split),
        "height": h,
        "width": w,
        "channels": c,
        "has_manifest": manifest is not None,
        "has_extras": extras is not None,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(struct.pack("<I", zlib.crc32(header_bytes)))
        for ex in split.examples:
            record = struct.pack("<QIB", ex.id, ex.label, int(ex.provenance))
            record += np.ascontiguousarray(ex.image, dtype=np.float32).tobytes()
            f.write(record)
            f.write(struct.pack("<I", zlib.crc32(record)))
        if manifest is not None:
            _write_json_block(f, manifest.to_json_dict())
        if extras is not None:
            _write_json_block(f, extras)


def load_split(path: str | os.PathLike) -> tuple[DatasetSplit, PoisonManifest | None, dict | None]:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"container file does not exist: {path}")
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise FormatError(f"not a dataset container (bad magic {magic!r})")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise FormatError(f"unsupported container version {version} (expected {VERSION})")
        (header_len,) = struct.unpack("<I", _read_exact(f, 4, "header length"))
        header_bytes = _read_exact(f, header_len, "header")
        (header_crc,) = struct.unpack("<I", _read_exact(f, 4, "header checksum"))
        if header_crc != zlib.crc32(header_bytes):
            raise IntegrityError("header failed its checksum")
        header = json.loads(header_bytes.decode("utf-8"))
        n, h, w, c = header["n"], header["height"], header["width"], header["channels"]
        pixel_bytes = h * w * c * 4
        examples = []
        for i in range(n):
            record = _read_exact(f, 13 + pixel_bytes, f"record {i}")
            (crc,) = struct.unpack("<I", _read_exact(f, 4, f"record {i} checksum"))
            if crc != zlib.crc32(record):
                raise IntegrityError(f"record {i} failed its checksum")
            ex_id, label, prov = struct.unpack("<QIB", record[:13])
            image = np.frombuffer(record[13:], dtype="<f4").reshape(h, w, c).copy()
            examples.append(
                LabeledExample(id=ex_id, image=image, label=label, provenance=Provenance(prov))
            )
        manifest = None
        extras = None
        if header["has_manifest"]:
            manifest = PoisonManifest.from_json_dict(_read_json_block(f, "manifest"))
        if header["has_extras"]:
            extras = _read_json_block(f, "extras")
    split = DatasetSplit(name=header["name"], class_count=header["class_count"], examples=examples)
    return split, manifest, extras
