"""Image I/O: 8-bit PNG for datasets and a raw float dump for oracle use.

PNG values quantize with round(x * 255); loading divides by 255, so a
save/load round trip is the identity on already-quantized images.

The raw dump is a PPM-style text header followed by binary data:
    line 1: "PFd"            (magic)
    line 2: "<width> <height> <channels>"
followed by little-endian float64 samples, row-major from the top row,
channels interleaved in RGB order. It is bit-exact by construction.
"""

import numpy as np
from PIL import Image

from .errors import LoadError

FLOAT_MAGIC = b"PFd"


def save_png(path, image):
    """Save a float image in [0, 1]; (H, W, 3) color or (H, W) grayscale."""
    arr = np.asarray(image)
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    mode = "RGB" if data.ndim == 3 else "L"
    Image.fromarray(data, mode=mode).save(path)


def load_png(path):
    """Load a PNG as float64 in [0, 1]; color images come back (H, W, 3)."""
    with Image.open(path) as im:
        if im.mode not in ("RGB", "L"):
            im = im.convert("RGB")
        return np.asarray(im, dtype=np.float64) / 255.0


def quantize(image):
    """Round-trip through the 8-bit PNG representation without touching disk."""
    return np.clip(np.round(np.asarray(image) * 255.0), 0, 255) / 255.0


def save_float_image(path, image):
    arr = np.ascontiguousarray(np.asarray(image, dtype="<f8"))
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(FLOAT_MAGIC + b"\n")
        fh.write(f"{w} {h} {c}\n".encode("ascii"))
        fh.write(arr.tobytes())


def load_float_image(path):
    with open(path, "rb") as fh:
        if fh.readline().strip() != FLOAT_MAGIC:
            raise LoadError(f"{path}: not a raw float image dump")
        try:
            w, h, c = (int(v) for v in fh.readline().split())
        except ValueError as e:
            raise LoadError(f"{path}: malformed float image header") from e
        data = fh.read(w * h * c * 8)
        if len(data) != w * h * c * 8:
            raise LoadError(f"{path}: truncated float image data")
        arr = np.frombuffer(data, dtype="<f8").reshape(h, w, c)
    return arr[:, :, 0] if c == 1 else arr.copy()
