"""File formats used by the command line.

2D images are binary PGM (P5, 8 or 16 bit), rescaled to [0, 1] on read.
Volumes are a JSON sidecar header plus a raw little-endian payload::

    {"dims": [nx, ny, nz], "dtype": "f32" | "u8", "order": "x-fastest",
     "byte_order": "little", "data": "volume.raw", "components": 1}

In memory a volume is a numpy array of shape ``(nz, ny, nx)`` (C order, so x
varies fastest on disk). A deformation has ``components`` planes stored one
after the other in x, y, z order; in memory its component ``i`` runs along
array axis ``i`` (so the on-disk order is reversed).
"""

import json
import os

import numpy as np
from PIL import Image

from .exceptions import InvalidArgumentError

__all__ = [
    "FileFormatError",
    "read_pgm",
    "write_pgm",
    "read_volume",
    "write_volume",
    "read_deformation",
    "write_deformation",
    "read_field",
    "write_field",
    "write_mask",
    "write_labels",
]

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


class FileFormatError(OSError):
    """Malformed or unreadable input file."""


def read_pgm(path, normalize=True):
    """PGM image as float64, rescaled to [0, 1] unless `normalize` is False."""
    try:
        with Image.open(path) as im:
            if im.format != "PPM" or im.mode not in ("L", "I", "I;16", "I;16B", "1"):
                raise FileFormatError(f"{path}: not a grayscale PGM image")
            data = np.asarray(im)
            mode = im.mode
    except FileFormatError:
        raise
    except (OSError, ValueError, SyntaxError) as exc:
        raise FileFormatError(f"{path}: {exc}") from exc
    if not normalize:
        return data.copy()
    scale = 255.0 if mode in ("L", "1") else 65535.0
    return data.astype(np.float64) / scale


def write_pgm(path, image, bits=16):
    """Write values in [0, 1] (clipped) as an 8 or 16 bit PGM.

    Integer ``uint8`` / ``uint16`` arrays are written unchanged.
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise InvalidArgumentError(f"PGM images are 2D, got shape {image.shape}")
    if image.dtype == np.uint8 or image.dtype == np.uint16:
        raw = image
    else:
        if bits not in (8, 16):
            raise InvalidArgumentError(f"bits must be 8 or 16, got {bits}")
        top = 255 if bits == 8 else 65535
        raw = np.rint(np.clip(image, 0.0, 1.0) * top).astype(np.uint8 if bits == 8 else np.uint16)
    Image.fromarray(raw).save(path, format="PPM")


def _read_header(path):
    try:
        with open(path) as fh:
            header = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: invalid header ({exc})") from exc
    try:
        dims = [int(n) for n in header["dims"]]
        dtype = _DTYPES[header.get("dtype", "f32")]
        data = header["data"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"{path}: bad header field {exc}") from exc
    if header.get("order", "x-fastest") != "x-fastest" or header.get("byte_order", "little") != "little":
        raise FileFormatError(f"{path}: only x-fastest little-endian volumes are supported")
    if len(dims) != 3 or min(dims) < 1:
        raise FileFormatError(f"{path}: dims must be three positive integers, got {dims}")
    components = int(header.get("components", 1))
    raw_path = os.path.join(os.path.dirname(os.path.abspath(path)), data)
    return dims, dtype, components, raw_path


def _read_payload(path, dims, dtype, components):
    nx, ny, nz = dims
    expected = components * nx * ny * nz * dtype.itemsize
    size = os.path.getsize(path)
    if size != expected:
        raise FileFormatError(f"{path}: payload is {size} bytes, header implies {expected}")
    arr = np.fromfile(path, dtype=dtype)
    return arr.reshape((components, nz, ny, nx))


def _squeeze(arr):
    """Drop a singleton z axis so 2D data stays 2D."""
    return arr[..., 0, :, :] if arr.shape[-3] == 1 else arr


def read_volume(path):
    """Scalar volume as float64 of shape ``(nz, ny, nx)`` (``(ny, nx)`` when nz == 1)."""
    dims, dtype, components, raw_path = _read_header(path)
    if components != 1:
        raise FileFormatError(f"{path}: expected a scalar volume, header has {components} components")
    return _squeeze(_read_payload(raw_path, dims, dtype, 1)[0]).astype(np.float64)


def _write(path, planes, dtype_name):
    """`planes` has shape ``(components, nz, ny, nx)``."""
    dtype = _DTYPES[dtype_name]
    base, _ = os.path.splitext(path)
    raw_path = base + ".raw"
    components, nz, ny, nx = planes.shape
    header = {
        "dims": [nx, ny, nz],
        "dtype": dtype_name,
        "order": "x-fastest",
        "byte_order": "little",
        "data": os.path.basename(raw_path),
        "components": components,
    }
    np.ascontiguousarray(planes, dtype=dtype).tofile(raw_path)
    with open(path, "w") as fh:
        json.dump(header, fh, indent=1)


def _as_zyx(arr):
    arr = np.asarray(arr)
    if arr.ndim == 2:
        return arr[None]
    if arr.ndim == 3:
        return arr
    raise InvalidArgumentError(f"volumes are 2D or 3D, got shape {arr.shape}")


def write_volume(path, volume, dtype="f32"):
    """Write a scalar field; `path` names the JSON header, the payload goes beside it."""
    if dtype not in _DTYPES:
        raise InvalidArgumentError(f"dtype must be one of {sorted(_DTYPES)}, got {dtype!r}")
    _write(path, _as_zyx(volume)[None], dtype)


def write_deformation(path, u):
    """Write a deformation of shape ``(d, *grid)`` as f32 planes in x, y, z order."""
    u = np.asarray(u)
    planes = np.stack([_as_zyx(c) for c in u[::-1]])
    _write(path, planes, "f32")


def read_deformation(path):
    """Inverse of :func:`write_deformation`."""
    dims, dtype, components, raw_path = _read_header(path)
    planes = _read_payload(raw_path, dims, dtype, components).astype(np.float64)
    return np.stack([_squeeze(p) for p in planes[::-1]])


def read_field(path):
    """Read a scalar field from a ``.pgm`` image or a ``.json`` volume header."""
    if str(path).lower().endswith(".pgm"):
        return read_pgm(path)
    return read_volume(path)


def write_field(path, field):
    """Write a float field to PGM (16 bit, clipped to [0, 1]) or f32 volume."""
    if str(path).lower().endswith(".pgm"):
        write_pgm(path, field, bits=16)
    else:
        write_volume(path, field, "f32")


def write_labels(path, labels):
    """Integer labels (0..255) unscaled, as 8 bit PGM or u8 volume."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise InvalidArgumentError("labels must lie in 0..255")
    raw = labels.astype(np.uint8)
    if str(path).lower().endswith(".pgm"):
        write_pgm(path, raw)
    else:
        write_volume(path, raw, "u8")


def write_mask(path, mask):
    """Binary mask; PGM masks are stored as 0/255 so they read back as 0/1."""
    mask = (np.asarray(mask) > 0.5).astype(np.uint8)
    if str(path).lower().endswith(".pgm"):
        write_pgm(path, mask * 255)
    else:
        write_volume(path, mask, "u8")
