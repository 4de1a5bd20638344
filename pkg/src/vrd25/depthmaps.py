"""Depth-map files and box statistics over them.

One pixel-grid convention is shared by the renderer and every reader: pixel
(row i, col j) of an HxW map has center ((j+0.5)/W, (i+0.5)/H) in normalized
image coordinates, and a box covers the pixels whose centers fall inside it
(half-open on the max edges). Keeping both sides on this rule makes the mean
depth inside a box of an isolated synthetic object exactly its surface depth.

File formats: PFM (single channel, negative scale = little-endian, rows
bottom-to-top per the format's convention) or 16-bit binary PGM with a
"# scale <s>" comment line, depth = raw * s.
"""

from __future__ import annotations

import re
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import Box


def pixel_range(lo: float, hi: float, n: int) -> tuple[int, int]:
    """Half-open index range of pixels whose centers lie in [lo, hi) of n cells."""
    start = int(np.ceil(lo * n - 0.5))
    stop = int(np.ceil(hi * n - 0.5))
    return (max(0, start), min(n, stop))


def box_slice(box: Box, width: int, height: int) -> tuple[slice, slice]:
    """(row_slice, col_slice) of the pixels covered by a normalized box."""
    x0, x1 = pixel_range(box.xmin, box.xmax, width)
    y0, y1 = pixel_range(box.ymin, box.ymax, height)
    return (slice(y0, y1), slice(x0, x1))


@dataclass(frozen=True)
class DepthStats:
    """Summary of depth values inside a region: mean, std, min, max."""

    mean: float
    std: float
    min: float
    max: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.mean, self.std, self.min, self.max)


class EmptyRegionError(ValueError):
    """A box covers no pixel centers at the map's resolution."""


def box_depth_stats(depth: np.ndarray, box: Box) -> DepthStats:
    """Raw-value statistics inside a box; no per-image normalization."""
    h, w = depth.shape
    rows, cols = box_slice(box, w, h)
    region = depth[rows, cols]
    if region.size == 0:
        raise EmptyRegionError(f"box {box} covers no pixels on a {w}x{h} map")
    region = region.astype(np.float64)
    return DepthStats(
        mean=float(region.mean()),
        std=float(region.std()),
        min=float(region.min()),
        max=float(region.max()),
    )


def image_depth_stats(depth: np.ndarray) -> DepthStats:
    values = depth.astype(np.float64)
    return DepthStats(
        mean=float(values.mean()),
        std=float(values.std()),
        min=float(values.min()),
        max=float(values.max()),
    )


def mean_box_depth(depth: np.ndarray, box: Box) -> float:
    return box_depth_stats(depth, box).mean


def write_pfm(path: Path | str, depth: np.ndarray) -> None:
    """Write a single-channel little-endian PFM (rows bottom-to-top)."""
    data = np.asarray(depth, dtype="<f4")
    if data.ndim != 2:
        raise ValueError("depth map must be 2-D")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(data).tobytes())


def read_pfm(path: Path | str) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"Pf":
            raise ValueError(f"{path}: not a single-channel PFM (magic {magic!r})")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(w * h * 4), dtype=dtype).reshape(h, w)
    return np.flipud(data).astype(np.float32)


def write_pgm16(path: Path | str, depth: np.ndarray) -> None:
    """Write a binary 16-bit PGM with a scale comment (depth = raw * scale)."""
    data = np.asarray(depth, dtype=np.float64)
    peak = float(data.max())
    scale = peak / 65535.0 if peak > 0 else 1.0
    raw = np.round(data / scale).astype(">u2")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"P5\n")
        f.write(f"# scale {scale!r}\n".encode("ascii"))
        f.write(f"{w} {h}\n65535\n".encode("ascii"))
        f.write(raw.tobytes())


def read_pgm16(path: Path | str) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise ValueError(f"{path}: not a binary PGM")
        scale = None
        line = f.readline()
        while line.startswith(b"#"):
            m = re.match(rb"#\s*scale\s+(\S+)", line)
            if m:
                scale = float(m.group(1))
            line = f.readline()
        if scale is None:
            raise ValueError(f"{path}: missing '# scale' header line")
        w, h = (int(v) for v in line.split())
        maxval = int(f.readline())
        if maxval != 65535:
            raise ValueError(f"{path}: expected 16-bit PGM, maxval {maxval}")
        raw = np.frombuffer(f.read(w * h * 2), dtype=">u2").reshape(h, w)
    return (raw.astype(np.float32)) * np.float32(scale)


def read_depth_map(path: Path | str) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".pfm":
        return read_pfm(path)
    if path.suffix == ".pgm":
        return read_pgm16(path)
    raise ValueError(f"{path}: unknown depth-map extension")


def depth_map_path(directory: Path | str, image_id: str, fmt: str = "pfm") -> Path:
    return Path(directory) / f"{image_id}.{fmt}"


def _png_chunk(tag: bytes, data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data))


def write_png_gray(path: Path | str, gray: np.ndarray) -> None:
    """Write an HxW uint8 array as an 8-bit grayscale PNG."""
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise ValueError("expected an HxW uint8 array")
    height, width = gray.shape
    header = struct.pack(">IIBBBBB", width, height, 8, 0, 0, 0, 0)
    raw = b"".join(b"\x00" + row.tobytes() for row in gray)
    with open(path, "wb") as f:
        f.write(b"\x89PNG\r\n\x1a\n")
        f.write(_png_chunk(b"IHDR", header))
        f.write(_png_chunk(b"IDAT", zlib.compress(raw, 9)))
        f.write(_png_chunk(b"IEND", b""))


def depth_to_gray(depth: np.ndarray) -> np.ndarray:
    """Map a depth map to uint8 for display, nearer surfaces brighter."""
    lo = float(depth.min())
    hi = float(depth.max())
    if hi <= lo:
        return np.full(depth.shape, 128, dtype=np.uint8)
    scaled = (depth.astype(np.float64) - lo) / (hi - lo)
    return np.round(255.0 * (1.0 - scaled)).astype(np.uint8)


class DepthMapStore:
    """Lazy per-image depth-map loader over a directory of .pfm/.pgm files."""

    def __init__(self, directory: Path | str):
        self.directory = Path(directory)
        self._cache: dict[str, np.ndarray] = {}

    def get(self, image_id: str) -> np.ndarray:
        if image_id not in self._cache:
            for fmt in ("pfm", "pgm"):
                p = depth_map_path(self.directory, image_id, fmt)
                if p.exists():
                    self._cache[image_id] = read_depth_map(p)
                    break
            else:
                raise FileNotFoundError(f"no depth map for image {image_id!r} in {self.directory}")
        return self._cache[image_id]

    def __contains__(self, image_id: str) -> bool:
        try:
            self.get(image_id)
            return True
        except FileNotFoundError:
            return False
