"""Grayscale images: container, bilinear sampling and PGM/PPM/PNG input/output."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

# Rec. 601 luma
LUMA = np.array([0.299, 0.587, 0.114])


class ImageFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Row-major intensities in [0, 1]; ``pixels`` has shape (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise ValueError("pixels must be a 2-D array")
        if not np.all(np.isfinite(px)) or px.min(initial=0) < 0 or px.max(initial=0) > 1:
            raise ValueError("pixel values must be finite and within [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def sample(self, u, v) -> np.ndarray:
        """Bilinear lookup with border clamp; pixel (row i, col j) sits at u=j, v=i."""
        u = np.clip(np.asarray(u, dtype=np.float64), 0, self.width - 1)
        v = np.clip(np.asarray(v, dtype=np.float64), 0, self.height - 1)
        x0 = np.minimum(np.floor(u).astype(np.int64), self.width - 2) if self.width > 1 else np.zeros(u.shape, np.int64)
        y0 = np.minimum(np.floor(v).astype(np.int64), self.height - 2) if self.height > 1 else np.zeros(v.shape, np.int64)
        x1 = np.minimum(x0 + 1, self.width - 1)
        y1 = np.minimum(y0 + 1, self.height - 1)
        fx, fy = u - x0, v - y0
        p = self.pixels
        top = p[y0, x0] * (1 - fx) + p[y0, x1] * fx
        bot = p[y1, x0] * (1 - fx) + p[y1, x1] * fx
        return top * (1 - fy) + bot * fy

    def to_uint8(self) -> np.ndarray:
        return np.round(self.pixels * 255.0).astype(np.uint8)

    @classmethod
    def from_uint8(cls, arr) -> "GrayImage":
        arr = np.asarray(arr)
        if arr.ndim == 3:
            arr = arr[..., :3].astype(np.float64) @ LUMA
        return cls(np.asarray(arr, dtype=np.float64) / 255.0)


def read_image(path) -> GrayImage:
    path = Path(path)
    data = path.read_bytes()
    if data[:2] in (b"P5", b"P6"):
        return GrayImage.from_uint8(_read_pnm(data, path))
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "RGB"):
                arr = np.asarray(im)
            elif im.mode == "RGBA":
                arr = np.asarray(im.convert("RGB"))
            else:
                arr = np.asarray(im.convert("L"))
    except OSError as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc
    return GrayImage.from_uint8(arr)


def write_image(image: GrayImage, path) -> None:
    """Write 8-bit PGM (``.pgm``) or PNG (anything else Pillow handles)."""
    path = Path(path)
    arr = image.to_uint8()
    if path.suffix.lower() == ".pgm":
        header = b"P5\n%d %d\n255\n" % (image.width, image.height)
        path.write_bytes(header + arr.tobytes())
    else:
        Image.fromarray(arr, mode="L").save(path)


def _read_pnm(data: bytes, path) -> np.ndarray:
    magic = data[:2]
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos)
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated header")
        tokens.append(int(data[start:pos]))
    pos += 1
    w, h, maxval = tokens
    if maxval != 255:
        raise ImageFormatError(f"{path}: only 8-bit PGM/PPM supported")
    channels = 3 if magic == b"P6" else 1
    need = w * h * channels
    if len(data) - pos < need:
        raise ImageFormatError(f"{path}: expected {need} pixel bytes at byte {pos}")
    arr = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos)
    return arr.reshape(h, w, 3) if channels == 3 else arr.reshape(h, w)
