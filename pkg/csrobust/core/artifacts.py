"""
Artifact persistence: CSV reports, JSON documents and PGM images.

Every file is written to a temporary sibling and then moved into place, so readers never
see a partial artifact. Output bytes depend only on the data, never on timing.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
import simplejson

from csrobust.core.errors import ShapeMismatchError, VolumeParseError

FLOAT_FORMAT = "%.10g"


def _to_builtin(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def dumps_json(payload: Any) -> str:
    return simplejson.dumps(
        payload, sort_keys=True, indent=2, ignore_nan=True, default=_to_builtin
    ) + "\n"


class ArtifactWriter:
    """Writes experiment outputs under one directory."""

    def __init__(self, out_dir: str, logger: Optional[logging.Logger] = None):
        self.out_dir = Path(out_dir)
        self.logger = logger or logging.getLogger(__name__)
        self.written: List[Path] = []

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def _replace(self, name: str, data: bytes) -> Path:
        target = self.path(name)
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp_path = target.with_suffix(target.suffix + ".tmp")
        with open(tmp_path, "wb") as f:
            f.write(data)
        tmp_path.replace(target)
        self.written.append(target)
        self.logger.debug("Wrote %s (%d bytes)", target, len(data))
        return target

    def write_csv(
        self,
        name: str,
        rows: Iterable[Mapping[str, Any]],
        columns: Sequence[str],
    ) -> Path:
        """CSV with exactly ``columns`` as header, in that order, even when empty."""
        frame = pd.DataFrame(list(rows), columns=list(columns))
        text = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        return self._replace(name, text.encode("utf-8"))

    def write_json(self, name: str, payload: Any) -> Path:
        return self._replace(name, dumps_json(payload).encode("utf-8"))

    def write_pgm(self, name: str, image: np.ndarray) -> Path:
        """8-bit binary PGM (P5); float images in [0, 1] are scaled to 0..255."""
        return self._replace(name, encode_pgm(image))


def encode_pgm(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ShapeMismatchError(f"PGM needs a 2D image, got {image.shape}")
    if image.dtype != np.uint8:
        scaled = np.nan_to_num(np.asarray(image, dtype=np.float64), nan=0.0)
        image = np.round(np.clip(scaled, 0.0, 1.0) * 255.0).astype(np.uint8)
    height, width = image.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(image).tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    """Inverse of :func:`encode_pgm` for the header layout it writes."""
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise VolumeParseError("Not a binary PGM written by encode_pgm", 0)
    header_end = len(parts[0]) + len(parts[1]) + len(parts[2]) + 3
    try:
        width, height = (int(v) for v in parts[1].split())
    except ValueError:
        raise VolumeParseError(f"Bad PGM dimensions {parts[1]!r}", len(parts[0]) + 1) from None
    if parts[2] != b"255":
        raise VolumeParseError(f"Unsupported PGM max value {parts[2]!r}", header_end - len(parts[2]) - 1)
    if len(parts[3]) < width * height:
        raise VolumeParseError(
            f"PGM holds {len(parts[3])} pixel bytes, expected {width * height}", header_end + len(parts[3])
        )
    pixels = np.frombuffer(parts[3], dtype=np.uint8, count=width * height)
    return pixels.reshape(height, width)


def read_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path)


def records(frame: pd.DataFrame) -> List[Dict[str, Any]]:
    return frame.to_dict(orient="records")
