"""Binary containers, PGM images, CSV and atomic writes."""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_container(magic: bytes, version: int, header: dict, payload: bytes) -> bytes:
    """magic | u32 version | u32 header length | JSON header | payload."""
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return magic + struct.pack("<II", version, len(head)) + head + payload


def read_container(blob: bytes, magic: bytes, version: int):
    if len(blob) < len(magic) + 8 or blob[: len(magic)] != magic:
        raise FormatError(f"missing {magic.decode()} magic bytes")
    off = len(magic)
    got_version, head_len = struct.unpack_from("<II", blob, off)
    if got_version != version:
        raise FormatError(f"unsupported {magic.decode()} version {got_version}")
    off += 8
    try:
        header = json.loads(blob[off: off + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt {magic.decode()} header") from exc
    return header, blob[off + head_len:]


def check_magic(path, magic: bytes) -> None:
    with open(path, "rb") as fh:
        if fh.read(len(magic)) != magic:
            raise FormatError(f"{path}: expected {magic.decode()} file")


# --- PGM -------------------------------------------------------------------

def _pgm_tokens(blob: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(blob[start:pos])
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) or ASCII (P2) 8/16-bit grayscale PGM as float64."""
    blob = Path(path).read_bytes()
    try:
        (magic, w, h, maxval), pos = _pgm_tokens(blob, 4)
        width, height, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header") from exc
    if magic == b"P5":
        dtype = ">u2" if maxval > 255 else "u1"
        n = width * height * np.dtype(dtype).itemsize
        if len(blob) - pos < n:
            raise FormatError(f"{path}: truncated PGM data")
        img = np.frombuffer(blob[pos:pos + n], dtype=dtype)
    elif magic == b"P2":
        img = np.array(blob[pos:].split()[: width * height], dtype=float)
        if img.size != width * height:
            raise FormatError(f"{path}: truncated PGM data")
    else:
        raise FormatError(f"{path}: not a grayscale PGM")
    return img.reshape(height, width).astype(float)


def pgm_bytes(img: np.ndarray) -> bytes:
    """Encode an integer image in [0, 255] as P5 with maxval 255."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM image must be 2-D")
    data = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    head = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii")
    return head + data.tobytes()


# --- CSV -------------------------------------------------------------------

def csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
