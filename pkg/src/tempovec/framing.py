"""CRC-framed append-only files and the tagged binary codec stored inside frames.

Frame layout: ``[u32 length][payload][u32 crc32(payload)]``, little-endian.
A short or CRC-failing frame at the tail is a torn write and ends recovery;
a bad frame followed by valid data is corruption and raises.
"""

from __future__ import annotations

import io
import logging
import os
import struct
import zlib
from pathlib import Path
from typing import Any

import numpy as np

log = logging.getLogger(__name__)

_LEN = struct.Struct("<I")
CODEC_VERSION = 1


class CorruptLogError(Exception):
    def __init__(self, path: str | Path, offset: int, reason: str):
        super().__init__(f"{path}: corrupt frame at byte offset {offset}: {reason}")
        self.path = str(path)
        self.offset = offset


# -- codec -----------------------------------------------------------------
# One tag byte per value: N none, T/F bool, i int64, d float64, s str,
# b bytes, v float32 vector, l list, m map with str keys.

def _enc(obj: Any, out: io.BytesIO) -> None:
    if obj is None:
        out.write(b"N")
    elif obj is True:
        out.write(b"T")
    elif obj is False:
        out.write(b"F")
    elif isinstance(obj, (int, np.integer)):
        out.write(b"i" + struct.pack("<q", int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.write(b"d" + struct.pack("<d", float(obj)))
    elif isinstance(obj, str):
        raw = obj.encode("utf-8")
        out.write(b"s" + _LEN.pack(len(raw)) + raw)
    elif isinstance(obj, bytes):
        out.write(b"b" + _LEN.pack(len(obj)) + obj)
    elif isinstance(obj, np.ndarray):
        arr = np.ascontiguousarray(obj, dtype="<f4").ravel()
        out.write(b"v" + _LEN.pack(arr.shape[0]) + arr.tobytes())
    elif isinstance(obj, (list, tuple)):
        out.write(b"l" + _LEN.pack(len(obj)))
        for item in obj:
            _enc(item, out)
    elif isinstance(obj, dict):
        out.write(b"m" + _LEN.pack(len(obj)))
        for key, val in obj.items():
            raw = key.encode("utf-8")
            out.write(_LEN.pack(len(raw)) + raw)
            _enc(val, out)
    else:
        raise TypeError(f"cannot encode {type(obj).__name__}")


def encode(obj: Any) -> bytes:
    out = io.BytesIO()
    out.write(bytes([CODEC_VERSION]))
    _enc(obj, out)
    return out.getvalue()


def _dec(buf: memoryview, pos: int) -> tuple[Any, int]:
    tag = chr(buf[pos])
    pos += 1
    if tag == "N":
        return None, pos
    if tag == "T":
        return True, pos
    if tag == "F":
        return False, pos
    if tag == "i":
        return struct.unpack_from("<q", buf, pos)[0], pos + 8
    if tag == "d":
        return struct.unpack_from("<d", buf, pos)[0], pos + 8
    if tag in "sbvlm":
        (n,) = _LEN.unpack_from(buf, pos)
        pos += 4
        if tag == "s":
            return bytes(buf[pos : pos + n]).decode("utf-8"), pos + n
        if tag == "b":
            return bytes(buf[pos : pos + n]), pos + n
        if tag == "v":
            end = pos + 4 * n
            if end > len(buf):
                raise ValueError("vector overruns payload")
            return np.frombuffer(buf[pos:end], dtype="<f4").astype(np.float32), end
        if tag == "l":
            items = []
            for _ in range(n):
                item, pos = _dec(buf, pos)
                items.append(item)
            return items, pos
        out = {}
        for _ in range(n):
            (kn,) = _LEN.unpack_from(buf, pos)
            pos += 4
            key = bytes(buf[pos : pos + kn]).decode("utf-8")
            pos += kn
            out[key], pos = _dec(buf, pos)
        return out, pos
    raise ValueError(f"unknown tag {tag!r}")


def decode(payload: bytes) -> Any:
    if not payload or payload[0] != CODEC_VERSION:
        raise ValueError(f"unsupported codec version {payload[:1]!r}")
    buf = memoryview(payload)
    obj, pos = _dec(buf, 1)
    if pos != len(buf):
        raise ValueError(f"{len(buf) - pos} trailing bytes")
    return obj


# -- frames ----------------------------------------------------------------

def frame(payload: bytes) -> bytes:
    return _LEN.pack(len(payload)) + payload + _LEN.pack(zlib.crc32(payload))


def scan_frames(
    data: bytes, path: str | Path = "<memory>", base: int = 0
) -> tuple[list[tuple[int, bytes]], int]:
    """Parse frames from `data`; returns ``(frames, valid_length)``.

    Stops quietly at a torn tail. Raises CorruptLogError when a damaged
    frame is followed by at least one more intact frame. `base` is the file
    offset of ``data[0]`` and only affects error and log messages.
    """
    frames: list[tuple[int, bytes]] = []
    pos, n = 0, len(data)
    while pos < n:
        bad = None
        if pos + 4 > n:
            bad = "short length header"
        else:
            (length,) = _LEN.unpack_from(data, pos)
            end = pos + 4 + length + 4
            if end > n:
                bad = "short frame"
            else:
                payload = data[pos + 4 : pos + 4 + length]
                (crc,) = _LEN.unpack_from(data, pos + 4 + length)
                if crc != zlib.crc32(payload):
                    bad = "crc mismatch"
        if bad is not None:
            if _has_valid_frame_after(data, pos + 1):
                raise CorruptLogError(path, base + pos, bad)
            log.warning("%s: discarding torn tail at offset %d (%s)", path, base + pos, bad)
            return frames, pos
        frames.append((pos, payload))
        pos = end
    return frames, pos


def _has_valid_frame_after(data: bytes, start: int) -> bool:
    # Torn writes only ever damage the final frame. Look for any intact
    # frame beginning later in the file.
    n = len(data)
    for pos in range(start, n - 8 + 1):
        (length,) = _LEN.unpack_from(data, pos)
        end = pos + 8 + length
        if length == 0 or end > n:
            continue
        payload = data[pos + 4 : pos + 4 + length]
        if _LEN.unpack_from(data, pos + 4 + length)[0] == zlib.crc32(payload) and payload[:1] == bytes(
            [CODEC_VERSION]
        ):
            return True
    return False


class FrameFile:
    """Append-only frame file. Opening truncates a torn tail left by a crash."""

    def __init__(self, path: str | Path, durable: bool = True, writable: bool = True):
        self.path = Path(path)
        self.durable = durable
        self.writable = writable
        self._fh = None
        if writable:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if not self.path.exists():
                self.path.touch()
                _fsync_dir(self.path.parent)

    def read_all(self) -> list[tuple[int, bytes]]:
        if not self.path.exists():
            return []
        data = self.path.read_bytes()
        frames, valid = scan_frames(data, self.path)
        if valid < len(data) and self.writable:
            with open(self.path, "r+b") as fh:
                fh.truncate(valid)
                os.fsync(fh.fileno())
        return frames

    def read_from(self, offset: int) -> tuple[list[tuple[int, bytes]], int]:
        """Frames starting at byte `offset`; returns frames and the new end offset."""
        if not self.path.exists():
            return [], offset
        with open(self.path, "rb") as fh:
            fh.seek(offset)
            data = fh.read()
        frames, valid = scan_frames(data, self.path, offset)
        return [(offset + p, pl) for p, pl in frames], offset + valid

    def append(self, payload: bytes) -> int:
        """Append one frame; returns its byte offset."""
        return self.append_many([payload])[0]

    def append_many(self, payloads: list[bytes]) -> list[int]:
        if not self.writable:
            raise PermissionError(f"{self.path} opened read-only")
        if self._fh is None:
            self._fh = open(self.path, "ab")
        start = self._fh.seek(0, os.SEEK_END)
        offsets, blob = [], bytearray()
        for p in payloads:
            offsets.append(start + len(blob))
            blob += frame(p)
        self._fh.write(blob)
        self._fh.flush()
        if self.durable:
            os.fsync(self._fh.fileno())
        return offsets

    def size(self) -> int:
        return self.path.stat().st_size if self.path.exists() else 0

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def _fsync_dir(path: Path) -> None:
    try:
        fd = os.open(path, os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(fd)
    except OSError:
        pass
    finally:
        os.close(fd)


def replace_file(path: Path, data: bytes, durable: bool = True) -> None:
    """Write `data` to a temp file and rename it over `path`."""
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        if durable:
            os.fsync(fh.fileno())
    os.replace(tmp, path)
    if durable:
        _fsync_dir(path.parent)
