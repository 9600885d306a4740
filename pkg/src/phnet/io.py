"""On-disk formats: PHT1 tensor files, PGM images, PNG grayscale maps.

PHT1 layout: 8-byte magic ``PHT1\\0\\0\\0\\0``, u8 dtype tag (0=f32, 1=f64),
u8 rank (always 4), four little-endian u32 extents, then the raw
little-endian scalar payload in row-major N,C,H,W order. Round-trips are
bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import InputError

MAGIC = b"PHT1\x00\x00\x00\x00"
_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def save_pht1(path, array):
    arr = np.ascontiguousarray(array)
    if arr.ndim != 4:
        raise InputError(f"PHT1 stores rank-4 tensors, got rank {arr.ndim}")
    if arr.dtype not in _TAG_FOR:
        raise InputError(f"PHT1 stores f32/f64, got {arr.dtype}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BB", _TAG_FOR[arr.dtype], 4))
        fh.write(struct.pack("<4I", *arr.shape))
        fh.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())


def load_pht1(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise InputError(f"{path}: not a PHT1 file")
    tag, rank = struct.unpack_from("<BB", raw, 8)
    if tag not in _DTYPE_TAGS:
        raise InputError(f"{path}: unknown dtype tag {tag}")
    if rank != 4:
        raise InputError(f"{path}: rank {rank} unsupported (PHT1 is rank-4)")
    shape = struct.unpack_from("<4I", raw, 10)
    dtype = _DTYPE_TAGS[tag]
    count = int(np.prod(shape))
    payload = raw[26 : 26 + count * dtype.itemsize]
    if len(payload) != count * dtype.itemsize:
        raise InputError(f"{path}: truncated payload")
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return np.ascontiguousarray(arr.astype(dtype.newbyteorder("=")))


# -- PGM (binary P5, 8 or 16 bit) ---------------------------------------------


def load_pgm(path):
    """Read a binary PGM into a float array in [0, 1], shape (1, H, W)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise InputError(f"{path}: only binary (P5) PGM is supported")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    pixels = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
    img = pixels.reshape(height, width).astype(np.float64) / maxval
    return img[None, :, :]


def save_pgm(path, image, maxval=65535):
    """Write a (H, W) or (1, H, W) array in [0, 1] as binary PGM."""
    img = np.asarray(image)
    if img.ndim == 3:
        img = img[0]
    quant = np.clip(np.rint(img * maxval), 0, maxval)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode()
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(quant.astype(dtype).tobytes())


# -- PNG grayscale (attention maps from external producers) -------------------


def load_png_gray(path):
    """Read a grayscale PNG as a float array in [0, 1], shape (1, H, W)."""
    from PIL import Image

    with Image.open(path) as im:
        gray = im.convert("I") if im.mode in ("I", "I;16") else im.convert("L")
        arr = np.asarray(gray, dtype=np.float64)
        maxval = 65535.0 if im.mode in ("I", "I;16") else 255.0
    return (arr / maxval)[None, :, :]


def save_png_gray(path, image):
    from PIL import Image

    img = np.asarray(image)
    if img.ndim == 3:
        img = img[0]
    quant = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quant, mode="L").save(path)


def load_image(path):
    """Dispatch on extension; returns float (C, H, W) in image units."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pht1":
        arr = load_pht1(path)
        return arr[0]
    if suffix == ".pgm":
        return load_pgm(path)
    if suffix == ".png":
        return load_png_gray(path)
    raise InputError(f"{path}: unsupported image format {suffix!r}")
