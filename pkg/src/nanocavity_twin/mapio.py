"""Channel maps and the NWMAP1 container.

Layout: ``b"NWMAP1\\n"``, a little-endian uint32 header length, the UTF-8
JSON header, the CRC-32 of the header (uint32 LE), then every channel as
row-major little-endian float64 in header order, followed by the CRC-32 of
the payload. The validity mask is stored as the channel ``__mask__``.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"NWMAP1\n"
FORMAT_VERSION = 1
MASK_KEY = "__mask__"

# per-pixel cause codes
MASK_OK = 0
MASK_SOLVER = 1
MASK_LOCK_LOST = 2
MASK_NO_READOUT = 3
MASK_ESTIMATION = 4
MASK_CAUSES = {MASK_OK: "ok", MASK_SOLVER: "solver failure", MASK_LOCK_LOST: "lock lost",
               MASK_NO_READOUT: "measurement vector undefined", MASK_ESTIMATION: "estimation failure"}


class MapFormatError(ValueError):
    pass


@dataclass
class ChannelMap:
    """Named channels on a shared (slow, fast) grid; arrays are (n_slow, n_fast)."""
    axes: tuple
    origin: tuple
    pitch: tuple
    shape: tuple
    channels: dict = field(default_factory=dict)
    units: dict = field(default_factory=dict)
    mask: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        if self.mask is None:
            self.mask = np.zeros(self.shape, dtype=np.uint8)
        for name, arr in self.channels.items():
            if np.shape(arr) != self.shape:
                raise ValueError(f"channel {name!r} has shape {np.shape(arr)}, expected {self.shape}")

    def add(self, name: str, values, unit: str = ""):
        values = np.asarray(values, dtype=float)
        if values.shape != self.shape:
            raise ValueError(f"channel {name!r} has shape {values.shape}, expected {self.shape}")
        self.channels[name] = values
        self.units[name] = unit

    @property
    def valid(self) -> np.ndarray:
        return self.mask == MASK_OK

    def masked(self, name: str) -> np.ndarray:
        """Channel with invalid pixels set to NaN."""
        return np.where(self.valid, self.channels[name], np.nan)

    def coordinates(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.pitch[axis] * np.arange(self.shape[axis])

    @property
    def fast(self) -> np.ndarray:
        return self.coordinates(1)

    @property
    def slow(self) -> np.ndarray:
        return self.coordinates(0)

    def masked_fraction(self) -> float:
        return float(np.mean(self.mask != MASK_OK))


def atomic_write(path, data, mode: str = "wb"):
    """Write to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _header(m: ChannelMap) -> dict:
    return {
        "format": "NWMAP", "version": FORMAT_VERSION,
        "axes": list(m.axes), "origin": [float(v) for v in m.origin], "pitch": [float(v) for v in m.pitch],
        "shape": list(m.shape), "channels": list(m.channels) + [MASK_KEY],
        "units": {k: m.units.get(k, "") for k in m.channels},
        "mask_causes": {str(k): v for k, v in MASK_CAUSES.items()},
        "metadata": m.metadata,
    }


def encode_map(m: ChannelMap) -> bytes:
    head = json.dumps(_header(m), sort_keys=True, separators=(",", ":")).encode()
    arrays = [np.ascontiguousarray(m.channels[k], dtype="<f8") for k in m.channels]
    arrays.append(np.ascontiguousarray(m.mask, dtype="<f8"))
    payload = b"".join(a.tobytes() for a in arrays)
    return b"".join([MAGIC, struct.pack("<I", len(head)), head, struct.pack("<I", zlib.crc32(head)),
                     payload, struct.pack("<I", zlib.crc32(payload))])


def decode_map(blob: bytes) -> ChannelMap:
    if not blob.startswith(MAGIC):
        raise MapFormatError("not an NWMAP1 file (bad magic)")
    pos = len(MAGIC)
    if len(blob) < pos + 4:
        raise MapFormatError("truncated header")
    (n,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if len(blob) < pos + n + 4:
        raise MapFormatError("truncated header")
    head = blob[pos:pos + n]
    (crc,) = struct.unpack_from("<I", blob, pos + n)
    if zlib.crc32(head) != crc:
        raise MapFormatError("header checksum mismatch (corrupted header or unsupported version)")
    try:
        h = json.loads(head)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MapFormatError(f"unreadable header: {exc}") from exc
    if h.get("format") != "NWMAP" or h.get("version") != FORMAT_VERSION:
        raise MapFormatError(f"unsupported map version {h.get('version')!r}")
    pos += n + 4
    shape = tuple(h["shape"])
    size = int(np.prod(shape)) * 8
    names = h["channels"]
    need = size * len(names)
    if len(blob) != pos + need + 4:
        raise MapFormatError(f"payload size {len(blob) - pos - 4} bytes, expected {need}")
    payload = blob[pos:pos + need]
    (pcrc,) = struct.unpack_from("<I", blob, pos + need)
    if zlib.crc32(payload) != pcrc:
        raise MapFormatError("payload checksum mismatch")
    channels = {}
    mask = None
    for i, name in enumerate(names):
        arr = np.frombuffer(payload, dtype="<f8", count=size // 8, offset=i * size).reshape(shape).copy()
        if name == MASK_KEY:
            mask = arr.astype(np.uint8)
        else:
            channels[name] = arr
    return ChannelMap(tuple(h["axes"]), tuple(h["origin"]), tuple(h["pitch"]), shape, channels,
                      dict(h["units"]), mask, h["metadata"])


def write_map(path, m: ChannelMap):
    atomic_write(path, encode_map(m))


def read_map(path) -> ChannelMap:
    return decode_map(Path(path).read_bytes())


def export_channel_text(m: ChannelMap, name: str) -> str:
    """Matrix text export; values keep 17 significant digits."""
    arr = m.mask.astype(float) if name == MASK_KEY else m.channels[name]
    lines = [f"# channel {name} [{m.units.get(name, '')}]",
             f"# rows: {m.axes[0]} from {m.origin[0]!r} step {m.pitch[0]!r}; "
             f"columns: {m.axes[1]} from {m.origin[1]!r} step {m.pitch[1]!r}"]
    lines += [" ".join(f"{v:.17g}" for v in row) for row in arr]
    return "\n".join(lines) + "\n"


def parse_channel_text(text: str) -> np.ndarray:
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    return np.array([[float(v) for v in r] for r in rows])


def export_map_text(m: ChannelMap, directory) -> list:
    directory = Path(directory)
    out = []
    for name in list(m.channels) + [MASK_KEY]:
        p = directory / f"{name.strip('_')}.txt"
        atomic_write(p, export_channel_text(m, name), mode="w")
        out.append(p)
    return out
