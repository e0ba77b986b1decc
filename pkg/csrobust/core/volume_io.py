"""
Sectioned little-endian binary files.

KSV1 volumes hold (kspace, sens, target) as interleaved float32 (real, imag), row-major,
coils outermost. CNW1 files hold network weights as plain float32 arrays. Both share the
layout: 4-byte magic, u32 header length L, L bytes of UTF-8 JSON header, payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np
import simplejson

from csrobust.core.datagen import CoilSensitivities
from csrobust.core.errors import MissingInputError, ShapeMismatchError, VolumeParseError

KSV_MAGIC = b"KSV1"
CNW_MAGIC = b"CNW1"
KSV_SECTIONS = ["kspace", "sens", "target"]
PathLike = Union[str, Path]


@dataclass(frozen=True)
class Volume:
    """One acquisition: fully sampled multi-coil k-space, its coil maps and the ground truth."""

    kspace: np.ndarray
    sens: CoilSensitivities
    target: np.ndarray

    @property
    def n(self) -> int:
        return int(self.target.shape[-1])

    @property
    def n_coils(self) -> int:
        return self.sens.n_coils


def _encode_header(header: Dict[str, Any]) -> bytes:
    return simplejson.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _write_atomic(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_suffix(path.suffix + ".tmp")
    with open(tmp_path, "wb") as f:
        f.write(payload)
    tmp_path.replace(path)


def _read_bytes(path: PathLike) -> bytes:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"File not found: {path}")
    return path.read_bytes()


def _split_header(raw: bytes, magic: bytes) -> Tuple[Dict[str, Any], int]:
    if raw[:4] != magic:
        raise VolumeParseError(f"Bad magic {raw[:4]!r}, expected {magic!r}", offset=0)
    if len(raw) < 8:
        raise VolumeParseError("File truncated inside the header length field", offset=4)
    (header_len,) = struct.unpack("<I", raw[4:8])
    end = 8 + header_len
    if len(raw) < end:
        raise VolumeParseError(
            f"File truncated: header declares {header_len} bytes, {len(raw) - 8} available",
            offset=len(raw),
        )
    try:
        header = simplejson.loads(raw[8:end].decode("utf-8"))
    except (UnicodeDecodeError, simplejson.JSONDecodeError) as exc:
        raise VolumeParseError(f"Header is not valid UTF-8 JSON: {exc}", offset=8) from exc
    if not isinstance(header, dict):
        raise VolumeParseError("Header must be a JSON object", offset=8)
    return header, end


def _complex_to_f32(values: np.ndarray) -> bytes:
    values = np.asarray(values)
    interleaved = np.empty(values.shape + (2,), dtype="<f4")
    interleaved[..., 0] = values.real
    interleaved[..., 1] = values.imag
    return interleaved.tobytes(order="C")


def _f32_to_complex(raw: bytes, offset: int, shape: Tuple[int, ...]) -> Tuple[np.ndarray, int]:
    count = int(np.prod(shape)) * 2
    end = offset + 4 * count
    if len(raw) < end:
        raise VolumeParseError(
            f"Payload truncated: section {shape} needs {end - offset} bytes, "
            f"{max(0, len(raw) - offset)} available",
            offset=len(raw),
        )
    pairs = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape + (2,))
    values = pairs[..., 0].astype(np.complex64)
    values.imag = pairs[..., 1]
    return values, end


def write_volume(path: PathLike, kspace: np.ndarray, sens: CoilSensitivities, target: np.ndarray) -> Path:
    """Write one KSV1 file. Values are stored as float32 pairs."""
    kspace = np.asarray(kspace)
    target = np.asarray(target)
    n = int(target.shape[-1])
    if target.shape != (n, n):
        raise ShapeMismatchError(f"Target must be square N x N, got {target.shape}")
    expected = (sens.n_coils, n, n)
    if kspace.shape != expected or sens.maps.shape != expected:
        raise ShapeMismatchError(
            f"Inconsistent shapes: kspace {kspace.shape}, sens {sens.maps.shape}, target {target.shape}"
        )
    header = _encode_header({"n": n, "n_coils": sens.n_coils, "sections": list(KSV_SECTIONS)})
    payload = b"".join(
        [
            KSV_MAGIC,
            struct.pack("<I", len(header)),
            header,
            _complex_to_f32(kspace),
            _complex_to_f32(sens.maps),
            _complex_to_f32(target),
        ]
    )
    path = Path(path)
    _write_atomic(path, payload)
    return path


def read_volume(path: PathLike) -> Volume:
    """Parse a KSV1 file; any structural problem raises VolumeParseError with the byte offset."""
    raw = _read_bytes(path)
    header, offset = _split_header(raw, KSV_MAGIC)
    try:
        n = int(header["n"])
        n_coils = int(header["n_coils"])
        sections = list(header["sections"])
    except (KeyError, TypeError, ValueError) as exc:
        raise VolumeParseError(f"Header misses n/n_coils/sections: {exc}", offset=8) from exc
    if sections != KSV_SECTIONS or n < 1 or n_coils < 1:
        raise VolumeParseError(f"Unsupported header {header}", offset=8)

    kspace, offset = _f32_to_complex(raw, offset, (n_coils, n, n))
    maps, offset = _f32_to_complex(raw, offset, (n_coils, n, n))
    target, offset = _f32_to_complex(raw, offset, (n, n))
    if offset != len(raw):
        raise VolumeParseError(
            f"{len(raw) - offset} trailing bytes after the declared sections", offset=offset
        )
    return Volume(kspace=kspace, sens=CoilSensitivities(maps=maps), target=target)


def read_volume_header(path: PathLike) -> Dict[str, Any]:
    raw = _read_bytes(path)
    header, _ = _split_header(raw, KSV_MAGIC)
    return header


def write_weights(path: PathLike, arrays: Dict[str, np.ndarray], meta: Dict[str, Any]) -> Path:
    """Write named float arrays as a CNW1 file, in insertion order."""
    layers = [{"name": name, "shape": list(np.shape(value))} for name, value in arrays.items()]
    header = _encode_header({"layers": layers, "meta": meta})
    body = b"".join(np.asarray(value, dtype="<f4").tobytes(order="C") for value in arrays.values())
    path = Path(path)
    _write_atomic(path, CNW_MAGIC + struct.pack("<I", len(header)) + header + body)
    return path


def read_weights(path: PathLike) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    raw = _read_bytes(path)
    header, offset = _split_header(raw, CNW_MAGIC)
    layers: List[Dict[str, Any]] = list(header.get("layers", []))
    arrays: Dict[str, np.ndarray] = {}
    for layer in layers:
        shape = tuple(int(s) for s in layer["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if len(raw) < end:
            raise VolumeParseError(f"Weights truncated in layer {layer['name']}", offset=len(raw))
        values = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        arrays[str(layer["name"])] = values.astype(np.float64).reshape(shape)
        offset = end
    if offset != len(raw):
        raise VolumeParseError(f"{len(raw) - offset} trailing bytes after weights", offset=offset)
    return arrays, dict(header.get("meta", {}))
