"""Image ingestion: decode, resize and normalize RGB images.

Readers cover 8-bit PNG (color types 0/2/3/4/6, non-interlaced) and
binary PPM (P6, maxval 255). Grayscale is promoted to three identical
channels and alpha is dropped, so every decoded image is RGB with
pixel values in [0, 1]. Writers emit PPM P6 and 8-bit RGB PNG.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "ImageFormatError",
    "InputImage",
    "IMAGENET_MEAN",
    "IMAGENET_STD",
    "load_image",
    "decode_image",
    "resize_bilinear",
    "normalize",
    "denormalize",
    "save_ppm",
    "save_png",
    "encode_ppm",
    "encode_png",
]

# Channel means/stds of the standard large-scale natural-image corpus;
# the default because the supported checkpoints are pretrained on it.
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class ImageFormatError(ValueError):
    """Unsupported or malformed image data."""


@dataclass(frozen=True)
class InputImage:
    """RGB image with float pixels in [0, 1], row-major HWC."""

    width: int
    height: int
    pixels: np.ndarray  # [H, W, 3] float32

    def __post_init__(self):
        if self.pixels.shape != (self.height, self.width, 3):
            raise ValueError(
                f"pixel buffer shape {self.pixels.shape} does not match "
                f"{self.height}x{self.width}x3"
            )

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> "InputImage":
        pixels = np.ascontiguousarray(np.asarray(pixels, dtype=np.float32))
        h, w = pixels.shape[:2]
        return cls(width=w, height=h, pixels=pixels)


def load_image(path) -> InputImage:
    """Decode a PNG or PPM (P6) file into an InputImage."""
    data = Path(path).read_bytes()
    return decode_image(data, name=str(path))


def decode_image(data: bytes, name: str = "<bytes>") -> InputImage:
    if data.startswith(_PNG_SIGNATURE):
        return _decode_png(data, name)
    if data.startswith(b"P6"):
        return _decode_ppm(data, name)
    raise ImageFormatError(f"{name}: unsupported image format (expected PNG or PPM P6)")


# --- PPM (P6) ---------------------------------------------------------------

def _decode_ppm(data: bytes, name: str) -> InputImage:
    pos = 2  # past "P6"
    fields = []

    def skip_ws(p: int) -> int:
        while p < len(data):
            if data[p:p + 1].isspace():
                p += 1
            elif data[p] == ord("#"):
                while p < len(data) and data[p] != ord("\n"):
                    p += 1
            else:
                break
        return p

    while len(fields) < 3:
        pos = skip_ws(pos)
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{name}: truncated PPM header")
        try:
            fields.append(int(data[start:pos]))
        except ValueError:
            raise ImageFormatError(f"{name}: malformed PPM header field {data[start:pos]!r}")
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ImageFormatError(f"{name}: invalid PPM dimensions {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"{name}: only maxval 255 PPM supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    need = width * height * 3
    raw = data[pos:pos + need]
    if len(raw) < need:
        raise ImageFormatError(f"{name}: PPM pixel data truncated ({len(raw)} of {need} bytes)")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)
    return InputImage.from_array(arr.astype(np.float32) / 255.0)


def encode_ppm(img: InputImage) -> bytes:
    u8 = _to_u8(img.pixels)
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + u8.tobytes()


def save_ppm(img: InputImage, path) -> None:
    Path(path).write_bytes(encode_ppm(img))


# --- PNG ---------------------------------------------------------------------

_PNG_CHANNELS = {0: 1, 2: 3, 3: 1, 4: 2, 6: 4}


def _decode_png(data: bytes, name: str) -> InputImage:
    pos = len(_PNG_SIGNATURE)
    ihdr = None
    palette = None
    idat = bytearray()
    while pos + 8 <= len(data):
        length, ctype = struct.unpack(">I4s", data[pos:pos + 8])
        pos += 8
        chunk = data[pos:pos + length]
        if len(chunk) < length:
            raise ImageFormatError(f"{name}: truncated PNG chunk {ctype!r}")
        pos += length + 4  # skip CRC
        if ctype == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", chunk)
        elif ctype == b"PLTE":
            palette = np.frombuffer(chunk, dtype=np.uint8).reshape(-1, 3)
        elif ctype == b"IDAT":
            idat.extend(chunk)
        elif ctype == b"IEND":
            break
    if ihdr is None:
        raise ImageFormatError(f"{name}: missing PNG IHDR")
    width, height, bitdepth, colortype, _comp, _filt, interlace = ihdr
    if bitdepth != 8:
        raise ImageFormatError(f"{name}: only 8-bit PNG supported, got bit depth {bitdepth}")
    if interlace != 0:
        raise ImageFormatError(f"{name}: interlaced PNG not supported")
    if colortype not in _PNG_CHANNELS:
        raise ImageFormatError(f"{name}: unsupported PNG color type {colortype}")
    if not idat:
        raise ImageFormatError(f"{name}: no PNG pixel data")
    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise ImageFormatError(f"{name}: corrupt PNG pixel data ({exc})")
    channels = _PNG_CHANNELS[colortype]
    stride = width * channels
    if len(raw) < (stride + 1) * height:
        raise ImageFormatError(f"{name}: PNG pixel data truncated")
    flat = _unfilter(raw, height, stride, channels)
    arr = flat.reshape(height, width, channels)
    if colortype == 3:
        if palette is None:
            raise ImageFormatError(f"{name}: palette PNG missing PLTE")
        arr = palette[arr[:, :, 0]]
    elif channels == 2:  # gray + alpha
        arr = np.repeat(arr[:, :, :1], 3, axis=2)
    elif channels == 1:
        arr = np.repeat(arr, 3, axis=2)
    elif channels == 4:
        arr = arr[:, :, :3]
    return InputImage.from_array(arr.astype(np.float32) / 255.0)


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _unfilter(raw: bytes, height: int, stride: int, bpp: int) -> np.ndarray:
    out = np.zeros((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.uint8)
    pos = 0
    for y in range(height):
        ftype = raw[pos]
        row = np.frombuffer(raw, dtype=np.uint8, count=stride, offset=pos + 1).copy()
        pos += stride + 1
        if ftype == 0:
            cur = row
        elif ftype == 1:  # Sub: per-lane prefix sum
            cur = row.astype(np.int64)
            for lane in range(bpp):
                cur[lane::bpp] = np.cumsum(cur[lane::bpp])
            cur = (cur % 256).astype(np.uint8)
        elif ftype == 2:  # Up
            cur = row + prev
        elif ftype == 3:  # Average
            cur = np.empty(stride, dtype=np.uint8)
            for i in range(stride):
                left = int(cur[i - bpp]) if i >= bpp else 0
                cur[i] = (int(row[i]) + (left + int(prev[i])) // 2) & 0xFF
        elif ftype == 4:  # Paeth
            cur = np.empty(stride, dtype=np.uint8)
            for i in range(stride):
                left = int(cur[i - bpp]) if i >= bpp else 0
                ul = int(prev[i - bpp]) if i >= bpp else 0
                cur[i] = (int(row[i]) + _paeth(left, int(prev[i]), ul)) & 0xFF
        else:
            raise ImageFormatError(f"unknown PNG filter type {ftype}")
        out[y] = cur
        prev = cur
    return out


def _png_chunk(ctype: bytes, payload: bytes) -> bytes:
    crc = zlib.crc32(ctype + payload) & 0xFFFFFFFF
    return struct.pack(">I", len(payload)) + ctype + payload + struct.pack(">I", crc)


def encode_png(img: InputImage) -> bytes:
    u8 = _to_u8(img.pixels)
    ihdr = struct.pack(">IIBBBBB", img.width, img.height, 8, 2, 0, 0, 0)
    scanlines = b"".join(b"\x00" + u8[y].tobytes() for y in range(img.height))
    return (
        _PNG_SIGNATURE
        + _png_chunk(b"IHDR", ihdr)
        + _png_chunk(b"IDAT", zlib.compress(scanlines, 9))
        + _png_chunk(b"IEND", b"")
    )


def save_png(img: InputImage, path) -> None:
    Path(path).write_bytes(encode_png(img))


def _to_u8(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)


# --- resize / normalize ------------------------------------------------------

def resize_bilinear(img: InputImage, width: int, height: int) -> InputImage:
    """Bilinear resample with half-pixel center alignment.

    Source coordinates are clamped at the borders, so output values stay
    within the input's value range.
    """
    if width < 1 or height < 1:
        raise ValueError(f"target size must be at least 1x1, got {width}x{height}")
    if width == img.width and height == img.height:
        return InputImage.from_array(img.pixels.copy())

    src = img.pixels
    xs = (np.arange(width, dtype=np.float64) + 0.5) * (img.width / width) - 0.5
    ys = (np.arange(height, dtype=np.float64) + 0.5) * (img.height / height) - 0.5
    xs = np.clip(xs, 0.0, img.width - 1.0)
    ys = np.clip(ys, 0.0, img.height - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, img.width - 1)
    y1 = np.minimum(y0 + 1, img.height - 1)
    fx = (xs - x0).astype(np.float32)[None, :, None]
    fy = (ys - y0).astype(np.float32)[:, None, None]

    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy) + bottom * fy
    return InputImage.from_array(out.astype(np.float32))


def normalize(img: InputImage, mean: Sequence[float] = IMAGENET_MEAN,
              std: Sequence[float] = IMAGENET_STD) -> np.ndarray:
    """Per-channel (x - mean) / std, transposed to a CHW float32 tensor."""
    m = np.asarray(mean, dtype=np.float32)
    s = np.asarray(std, dtype=np.float32)
    if m.shape != (3,) or s.shape != (3,):
        raise ValueError("mean and std must each have 3 components")
    if np.any(s <= 0):
        raise ValueError(f"std components must be positive, got {tuple(s.tolist())}")
    chw = img.pixels.transpose(2, 0, 1)
    return ((chw - m[:, None, None]) / s[:, None, None]).astype(np.float32)


def denormalize(chw: np.ndarray, mean: Sequence[float] = IMAGENET_MEAN,
                std: Sequence[float] = IMAGENET_STD) -> InputImage:
    """Inverse of `normalize`; recovers the HWC pixel image."""
    m = np.asarray(mean, dtype=np.float32)
    s = np.asarray(std, dtype=np.float32)
    hwc = (chw * s[:, None, None] + m[:, None, None]).transpose(1, 2, 0)
    return InputImage.from_array(hwc)
