"""Image import/export: 8-bit PNG for color/alpha/masks, PFM for depth."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from ..errors import FormatError


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(img: np.ndarray, path: str) -> None:
    """Write HxW (grayscale) or HxWx3 float [0,1] as 8-bit PNG."""
    arr = to_uint8(img)
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode=mode).save(path, format="PNG")


def png_bytes(img: np.ndarray) -> bytes:
    arr = to_uint8(img)
    mode = "L" if arr.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def png16_bytes(img: np.ndarray) -> bytes:
    """16-bit grayscale-stacked PNG of an HxWx3 float image in [0,1].

    Channels are stacked vertically (3H x W) because PIL lacks 16-bit RGB;
    decode with decode_png16. Quantization step is 1/65535.
    """
    q = np.round(np.clip(img, 0.0, 1.0) * 65535.0).astype(np.uint16)
    stacked = q.transpose(2, 0, 1).reshape(3 * img.shape[0], img.shape[1])
    buf = io.BytesIO()
    Image.fromarray(stacked).save(buf, format="PNG")
    return buf.getvalue()


def decode_png16(data: bytes, height: int, width: int) -> np.ndarray:
    arr = np.asarray(Image.open(io.BytesIO(data)), dtype=np.uint16)
    if arr.shape != (3 * height, width):
        raise FormatError(f"16-bit PNG shape {arr.shape} != {(3 * height, width)}")
    return arr.reshape(3, height, width).transpose(1, 2, 0).astype(np.float64) / 65535.0


def quantize16(img: np.ndarray) -> np.ndarray:
    """The float image a png16 round trip yields; used to keep in-process
    and wire-transported guidance inputs identical."""
    q = np.round(np.clip(img, 0.0, 1.0) * 65535.0)
    return q.astype(np.float64) / 65535.0


def load_png(path: str) -> np.ndarray:
    img = Image.open(path)
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[:, :, :3]
    return arr / 255.0


def load_mask_png(path: str) -> np.ndarray:
    """8-bit PNG to binary mask: any nonzero byte is True."""
    arr = np.asarray(Image.open(path))
    if arr.ndim == 3:
        arr = arr[:, :, :3].max(axis=2)
    return arr > 0


def decode_mask_png(data: bytes) -> np.ndarray:
    arr = np.asarray(Image.open(io.BytesIO(data)))
    if arr.ndim == 3:
        arr = arr[:, :, :3].max(axis=2)
    return arr > 0


def save_pfm(depth: np.ndarray, path: str) -> None:
    """Grayscale PFM, float32 little-endian, rows bottom-to-top."""
    depth = np.asarray(depth, dtype="<f4")
    if depth.ndim != 2:
        raise FormatError("PFM export expects an HxW array")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{depth.shape[1]} {depth.shape[0]}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(depth[::-1].tobytes())


def load_pfm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header != b"Pf":
            raise FormatError(f"unsupported PFM header {header!r}")
        w, h = map(int, f.readline().split())
        scale = float(f.readline())
        data = np.frombuffer(f.read(4 * w * h), dtype="<f4" if scale < 0 else ">f4")
    return data.reshape(h, w)[::-1].astype(np.float64)
