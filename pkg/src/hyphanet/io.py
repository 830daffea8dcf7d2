"""Volume files (JSON sidecar + raw payload) and 8/16-bit PGM slices.

A volume ``stack.raw`` is described by ``stack.raw.json``::

    {"dims": [nx, ny, nz], "dtype": "u8" | "f32le", "order": "x-fastest",
     "scale": [sx, sy, sz], "kind": "gray" | "binary"}

The payload is the array in x-fastest (Fortran) order, little-endian.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .volume import Volume

__all__ = [
    "VolumeFileError",
    "header_path",
    "payload_path",
    "load_volume",
    "save_volume",
    "read_pgm",
    "write_pgm",
]

DTYPES = {"u8": np.dtype("u1"), "f32le": np.dtype("<f4")}
ORDER = "x-fastest"


class VolumeFileError(OSError):
    """Malformed, missing or inconsistent volume file."""


def header_path(path) -> Path:
    path = Path(path)
    return path if path.suffix == ".json" else path.with_name(path.name + ".json")


def payload_path(path) -> Path:
    path = Path(path)
    return path.with_suffix("") if path.suffix == ".json" else path


def _field(header: dict, name: str, where: Path):
    if name not in header:
        raise VolumeFileError(f"{where}: header field '{name}' is missing")
    return header[name]


def load_volume(path) -> Volume:
    """Read a volume given either its payload or its sidecar path."""
    hpath, ppath = header_path(path), payload_path(path)
    if not hpath.is_file():
        raise VolumeFileError(f"{hpath}: header file not found")
    if not ppath.is_file():
        raise VolumeFileError(f"{ppath}: payload file not found")
    try:
        header = json.loads(hpath.read_text())
    except json.JSONDecodeError as exc:
        raise VolumeFileError(f"{hpath}: header is not valid JSON ({exc})") from exc
    if not isinstance(header, dict):
        raise VolumeFileError(f"{hpath}: header must be a JSON object")

    dims = _field(header, "dims", hpath)
    if not isinstance(dims, list) or not dims or not all(isinstance(d, int) and d >= 1 for d in dims):
        raise VolumeFileError(f"{hpath}: header field 'dims' must be a list of positive integers, got {dims!r}")
    dtype_name = _field(header, "dtype", hpath)
    if dtype_name not in DTYPES:
        raise VolumeFileError(f"{hpath}: header field 'dtype' has unknown value {dtype_name!r} (expected u8 or f32le)")
    order = header.get("order", ORDER)
    if order != ORDER:
        raise VolumeFileError(f"{hpath}: header field 'order' must be {ORDER!r}, got {order!r}")
    kind = header.get("kind", "gray")
    if kind not in ("gray", "binary"):
        raise VolumeFileError(f"{hpath}: header field 'kind' must be 'gray' or 'binary', got {kind!r}")
    if kind == "binary" and dtype_name != "u8":
        raise VolumeFileError(f"{hpath}: header field 'dtype' must be u8 for binary volumes")
    scale = header.get("scale", [1.0] * len(dims))
    if (
        not isinstance(scale, list)
        or len(scale) != len(dims)
        or not all(isinstance(s, (int, float)) and math.isfinite(s) and s > 0 for s in scale)
    ):
        raise VolumeFileError(f"{hpath}: header field 'scale' must list {len(dims)} positive numbers, got {scale!r}")

    dtype = DTYPES[dtype_name]
    raw = ppath.read_bytes()
    expected = math.prod(dims) * dtype.itemsize
    if len(raw) != expected:
        raise VolumeFileError(
            f"{ppath}: header/payload mismatch: 'dims' {dims} with 'dtype' {dtype_name} "
            f"needs {expected} bytes, payload has {len(raw)}"
        )
    data = np.frombuffer(raw, dtype=dtype).reshape(dims, order="F").astype(dtype.newbyteorder("="))
    try:
        return Volume(data, tuple(scale), kind)
    except ValueError as exc:
        raise VolumeFileError(f"{ppath}: payload inconsistent with header field 'kind' ({exc})") from exc


def save_volume(vol: Volume, path) -> None:
    """Write payload and sidecar; binary and uint8 data go out as u8, everything else as f32le."""
    data = np.asarray(vol.data)
    dtype_name = "u8" if vol.kind == "binary" or data.dtype == np.uint8 else "f32le"
    ppath, hpath = payload_path(path), header_path(path)
    ppath.parent.mkdir(parents=True, exist_ok=True)
    payload = np.asarray(data, dtype=DTYPES[dtype_name]).tobytes(order="F")
    ppath.write_bytes(payload)
    header = {
        "dims": [int(d) for d in data.shape],
        "dtype": dtype_name,
        "order": ORDER,
        "scale": [float(s) for s in vol.scale],
        "kind": vol.kind,
    }
    hpath.write_text(json.dumps(header, sort_keys=True) + "\n")


def _pgm_tokens(buf: bytes, count: int) -> tuple[list[int], int]:
    tokens: list[int] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise VolumeFileError("truncated PGM header")
        tokens.append(int(buf[start:pos]))
    return tokens, pos + 1  # single whitespace byte after maxval


def read_pgm(path) -> np.ndarray:
    """Binary PGM (P5) as a float array indexed ``[x, y]`` with values in [0, 1]."""
    path = Path(path)
    buf = path.read_bytes()
    if buf[:2] != b"P5":
        raise VolumeFileError(f"{path}: not a binary PGM (P5) file")
    try:
        (width, height, maxval), pos = _pgm_tokens(buf[2:], 3)
    except ValueError as exc:
        raise VolumeFileError(f"{path}: malformed PGM header") from exc
    if not 0 < maxval < 65536:
        raise VolumeFileError(f"{path}: PGM maxval {maxval} out of range")
    dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    body = buf[2 + pos:]
    need = width * height * dtype.itemsize
    if len(body) < need:
        raise VolumeFileError(f"{path}: PGM payload has {len(body)} bytes, expected {need}")
    img = np.frombuffer(body[:need], dtype=dtype).reshape(height, width)
    return (img.astype(np.float64) / maxval).T


def write_pgm(img: np.ndarray, path) -> None:
    """Write an ``[x, y]`` array with values in [0, 1] as an 8-bit P5 image."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PGM slices are 2-D, got {img.ndim}-D")
    pix = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8).T
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"P5\n%d %d\n255\n" % (pix.shape[1], pix.shape[0]) + pix.tobytes())
