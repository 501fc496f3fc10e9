"""Dense grid value types and the binary tensor container.

Grids are plain numpy arrays:

    Image     (H, W, 3)  float, intensities in [0, 1]
    ScoreMap  (H, W, C)  float, pre-softmax scores
    ProbMap   (H, W, C)  float, per-pixel distributions
    LabelMap  (H, W)     uint8, class id or UNLABELED

Most operations also accept a leading batch axis.
"""
import enum
import struct
from pathlib import Path

import numpy as np

UNLABELED = 255

MAGIC = b"DPLT"
VERSION = 1
_HEADER = struct.Struct("<4sBBIII")
# refuse to allocate more than this many elements for one tensor
MAX_ELEMENTS = 1 << 30


class Kind(enum.IntEnum):
    IMAGE = 0
    SCORE = 1
    PROB = 2
    LABEL = 3


class GridError(ValueError):
    """A grid violates its type invariants."""


class TensorFormatError(Exception):
    """Malformed tensor container. ``code`` names the failure."""

    BAD_MAGIC = "bad_magic"
    BAD_VERSION = "bad_version"
    BAD_KIND = "bad_kind"
    DIM_OVERFLOW = "dim_overflow"
    TRUNCATED = "truncated"
    TRAILING = "trailing_bytes"

    def __init__(self, code, message):
        super().__init__(f"{code}: {message}")
        self.code = code


def check_image(img):
    img = np.asarray(img)
    if img.ndim < 3 or img.shape[-1] != 3 or img.shape[-2] < 1 or img.shape[-3] < 1:
        raise GridError(f"image must have shape (..., H, W, 3), got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise GridError("image has non-finite intensities")
    if img.min() < 0 or img.max() > 1:
        raise GridError("image intensities must lie in [0, 1]")
    return img


def check_scores(scores):
    scores = np.asarray(scores)
    if scores.ndim < 3 or scores.shape[-1] < 2:
        raise GridError(f"score map must have shape (..., H, W, C>=2), got {scores.shape}")
    if not np.all(np.isfinite(scores)):
        raise GridError("score map has non-finite entries")
    return scores


def check_probs(p, atol=1e-5):
    p = np.asarray(p)
    if p.ndim < 3 or p.shape[-1] < 2:
        raise GridError(f"prob map must have shape (..., H, W, C>=2), got {p.shape}")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise GridError("prob map has negative or non-finite entries")
    if np.any(np.abs(p.sum(axis=-1, dtype=np.float64) - 1.0) > atol):
        raise GridError("prob map pixels must sum to 1")
    return p


def check_labels(y, num_classes):
    y = np.asarray(y)
    if y.dtype != np.uint8:
        raise GridError(f"label map must be uint8, got {y.dtype}")
    bad = (y != UNLABELED) & (y >= num_classes)
    if np.any(bad):
        raise GridError(f"label values must be < {num_classes} or {UNLABELED}")
    return y


def check_same_shape(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise GridError(f"shape mismatch: {sorted(shapes)}")


def softmax(scores):
    """Per-pixel softmax over the last axis, stabilised by the pixel maximum."""
    scores = check_scores(scores)
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def argmax_labels(p):
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class
    return np.argmax(p, axis=-1).astype(np.uint8)


def _as_storage(data, kind):
    kind = Kind(kind)
    data = np.asarray(data)
    if kind == Kind.LABEL:
        if data.ndim != 2:
            raise GridError(f"label tensor must be 2-D, got shape {data.shape}")
        return data.astype(np.uint8)[:, :, None]
    if data.ndim != 3:
        raise GridError(f"{kind.name.lower()} tensor must be 3-D, got shape {data.shape}")
    if kind == Kind.IMAGE and data.shape[2] != 3:
        raise GridError("image tensor must have 3 channels")
    return data.astype("<f4")


def encode_tensor(data, kind):
    arr = _as_storage(data, kind)
    h, w, c = arr.shape
    header = _HEADER.pack(MAGIC, VERSION, int(kind), h, w, c)
    return header + np.ascontiguousarray(arr).tobytes()


def decode_tensor(buf):
    """Inverse of :func:`encode_tensor`; returns ``(array, Kind)``."""
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise TensorFormatError(TensorFormatError.BAD_MAGIC, "not a DPLT container")
    if len(buf) < _HEADER.size:
        raise TensorFormatError(TensorFormatError.TRUNCATED, "header cut short")
    _, version, kind, h, w, c = _HEADER.unpack_from(buf)
    if version != VERSION:
        raise TensorFormatError(TensorFormatError.BAD_VERSION, f"version {version}")
    try:
        kind = Kind(kind)
    except ValueError:
        raise TensorFormatError(TensorFormatError.BAD_KIND, f"kind {kind}") from None
    count = h * w * c
    if count > MAX_ELEMENTS or (kind == Kind.LABEL and c != 1):
        raise TensorFormatError(TensorFormatError.DIM_OVERFLOW, f"dims {h}x{w}x{c}")
    dtype = np.dtype(np.uint8) if kind == Kind.LABEL else np.dtype("<f4")
    need = _HEADER.size + count * dtype.itemsize
    if len(buf) < need:
        raise TensorFormatError(TensorFormatError.TRUNCATED,
                                f"expected {need} bytes, got {len(buf)}")
    if len(buf) > need:
        raise TensorFormatError(TensorFormatError.TRAILING,
                                f"expected {need} bytes, got {len(buf)}")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=_HEADER.size)
    arr = arr.reshape(h, w, c).copy()
    if kind == Kind.LABEL:
        arr = arr[:, :, 0]
    return arr, kind


def save_tensor(path, data, kind):
    Path(path).write_bytes(encode_tensor(data, kind))


def load_tensor(path):
    return decode_tensor(Path(path).read_bytes())
