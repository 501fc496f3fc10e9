"""Procedural two-domain segmentation benchmark.

Source scenes are flat-coloured shapes on a background with a little
per-pixel texture. Target scenes are drawn the same way, pushed through a
hidden affine colour shift, and corrupted by additive Gaussian noise.

Classes: 0 background, 1 disk, 2 rectangle, 3 stripe band.
"""
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .core_types import Kind, save_tensor

NUM_CLASSES = 4
CLASS_NAMES = ("background", "disk", "rectangle", "stripe")

# rng stream ids, combined with (seed, index)
_SOURCE, _TARGET, _TARGET_NOISE, _EVAL, _EVAL_NOISE = range(5)


def _default_palette():
    return np.array([
        [0.30, 0.55, 0.30],
        [0.80, 0.30, 0.25],
        [0.30, 0.35, 0.75],
        [0.75, 0.70, 0.30],
    ])


def _default_shift_matrix():
    return np.array([
        [0.80, 0.10, 0.00],
        [0.05, 0.80, 0.10],
        [0.00, 0.10, 0.75],
    ])


def _default_shift_bias():
    return np.array([0.15, -0.10, 0.15])


@dataclass
class SceneSpec:
    height: int = 32
    width: int = 32
    num_classes: int = NUM_CLASSES
    palette: np.ndarray = field(default_factory=_default_palette)
    shift_matrix: np.ndarray = field(default_factory=_default_shift_matrix)
    shift_bias: np.ndarray = field(default_factory=_default_shift_bias)
    noise_std: float = 0.03
    texture_std: float = 0.02
    stripe_dim: float = 0.6  # intensity factor on the odd columns of a band
    n_disks: int = 1
    n_rects: int = 1
    n_bands: int = 1
    presence: float = 1.0  # probability each shape instance is drawn
    seed: int = 0

    def __post_init__(self):
        self.palette = np.asarray(self.palette, dtype=np.float64).reshape(self.num_classes, 3)
        self.shift_matrix = np.asarray(self.shift_matrix, dtype=np.float64).reshape(3, 3)
        self.shift_bias = np.asarray(self.shift_bias, dtype=np.float64).reshape(3)
        self.validate()

    def validate(self):
        if self.num_classes != NUM_CLASSES:
            raise ValueError(f"the benchmark has exactly {NUM_CLASSES} classes")
        if self.height < 1 or self.width < 1:
            raise ValueError("image size must be positive")
        pal = self.palette
        for a in range(len(pal)):
            for b in range(a + 1, len(pal)):
                if np.abs(pal[a] - pal[b]).max() < 0.2:
                    raise ValueError(f"palette colours {a} and {b} closer than 0.2")
        if np.linalg.cond(self.shift_matrix) >= 100:
            raise ValueError("hidden shift matrix is (nearly) singular")
        if not 0.0 <= self.presence <= 1.0:
            raise ValueError("presence must lie in [0, 1]")


@dataclass
class DatasetManifest:
    spec: SceneSpec = field(default_factory=SceneSpec)
    n_source: int = 200
    n_target: int = 200
    n_eval: int = 50

    def __post_init__(self):
        if min(self.n_source, self.n_target, self.n_eval) < 1:
            raise ValueError("dataset counts must be >= 1")


def _rng(spec, stream, index):
    return np.random.default_rng([spec.seed, stream, index])


def _draw_scene(spec, rng):
    """Clean source-style scene: (image before clamping, labels)."""
    h, w = spec.height, spec.width
    labels = np.zeros((h, w), dtype=np.uint8)
    rows, cols = np.mgrid[0:h, 0:w]
    stripe = np.zeros((h, w), dtype=bool)

    for _ in range(spec.n_bands):
        if rng.random() >= spec.presence:
            continue
        bw = rng.integers(max(2, w // 8), max(3, w // 4) + 1)
        x0 = rng.integers(0, max(1, w - bw + 1))
        mask = (cols >= x0) & (cols < x0 + bw)
        labels[mask] = 3
        stripe |= mask
    for _ in range(spec.n_rects):
        if rng.random() >= spec.presence:
            continue
        rh = rng.integers(max(2, h // 5), max(3, h // 2) + 1)
        rw = rng.integers(max(2, w // 5), max(3, w // 2) + 1)
        r0 = rng.integers(0, max(1, h - rh + 1))
        c0 = rng.integers(0, max(1, w - rw + 1))
        mask = (rows >= r0) & (rows < r0 + rh) & (cols >= c0) & (cols < c0 + rw)
        labels[mask] = 2
        stripe &= ~mask
    for _ in range(spec.n_disks):
        if rng.random() >= spec.presence:
            continue
        rad = rng.uniform(max(1.5, min(h, w) / 8), max(2.0, min(h, w) / 4))
        ci, cj = rng.uniform(0, h), rng.uniform(0, w)
        mask = (rows - ci) ** 2 + (cols - cj) ** 2 <= rad * rad
        labels[mask] = 1
        stripe &= ~mask

    img = spec.palette[labels]
    odd = stripe & (cols % 2 == 1)
    img[odd] *= spec.stripe_dim
    img = img + spec.texture_std * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0), labels


def apply_shift(spec, img):
    """Hidden colour shift, without clamping or noise."""
    return img @ spec.shift_matrix.T + spec.shift_bias


def invert_shift(spec, img):
    return (img - spec.shift_bias) @ np.linalg.inv(spec.shift_matrix).T


def gen_source(spec, index):
    img, labels = _draw_scene(spec, _rng(spec, _SOURCE, index))
    return img.astype(np.float32), labels


def target_scene(spec, index, split="train"):
    """Noise-free pieces of a target sample.

    Returns ``(source_style, shifted, labels)`` where ``shifted`` is the
    unclamped affine image of ``source_style``.
    """
    stream = _TARGET if split == "train" else _EVAL
    src_style, labels = _draw_scene(spec, _rng(spec, stream, index))
    return src_style, apply_shift(spec, src_style), labels


def gen_target(spec, index, split="train"):
    """Target image and its held-out labels."""
    _, shifted, labels = target_scene(spec, index, split)
    noise_stream = _TARGET_NOISE if split == "train" else _EVAL_NOISE
    noise = spec.noise_std * _rng(spec, noise_stream, index).standard_normal(shifted.shape)
    img = np.clip(np.clip(shifted, 0.0, 1.0) + noise, 0.0, 1.0)
    return img.astype(np.float32), labels


# ---------------------------------------------------------------- on disk

_SPEC_SCALARS = ("height", "width", "num_classes", "noise_std", "texture_std", "stripe_dim",
                 "n_disks", "n_rects", "n_bands", "presence", "seed")
_SPEC_ARRAYS = ("palette", "shift_matrix", "shift_bias")
_INT_KEYS = {"height", "width", "num_classes", "n_disks", "n_rects", "n_bands", "seed"}


def manifest_lines(manifest):
    spec = manifest.spec
    lines = [f"n_source={manifest.n_source}", f"n_target={manifest.n_target}",
             f"n_eval={manifest.n_eval}"]
    d = asdict(spec)
    for key in _SPEC_SCALARS:
        lines.append(f"{key}={d[key]}")
    for key in _SPEC_ARRAYS:
        vals = np.asarray(getattr(spec, key)).reshape(-1)
        lines.append(f"{key}=" + ",".join(repr(float(v)) for v in vals))
    return lines


def parse_manifest(text):
    kv = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    spec_kwargs = {}
    for key in _SPEC_SCALARS:
        if key in kv:
            spec_kwargs[key] = int(kv[key]) if key in _INT_KEYS else float(kv[key])
    for key in _SPEC_ARRAYS:
        if key in kv:
            spec_kwargs[key] = np.array([float(v) for v in kv[key].split(",")])
    return DatasetManifest(spec=SceneSpec(**spec_kwargs),
                           n_source=int(kv.get("n_source", 200)),
                           n_target=int(kv.get("n_target", 200)),
                           n_eval=int(kv.get("n_eval", 50)))


def read_manifest(root):
    return parse_manifest((Path(root) / "manifest.txt").read_text())


def write_dataset(manifest, root):
    """Write the dataset tree under ``root``; rewriting is byte-identical."""
    root = Path(root)
    for sub in ("source", "target", "eval"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    spec = manifest.spec
    for i in range(manifest.n_source):
        img, lbl = gen_source(spec, i)
        save_tensor(root / "source" / f"img_{i:05d}.dplt", img, Kind.IMAGE)
        save_tensor(root / "source" / f"lbl_{i:05d}.dplt", lbl, Kind.LABEL)
    for i in range(manifest.n_target):
        img, _ = gen_target(spec, i, "train")
        save_tensor(root / "target" / f"img_{i:05d}.dplt", img, Kind.IMAGE)
    for i in range(manifest.n_eval):
        img, lbl = gen_target(spec, i, "eval")
        save_tensor(root / "eval" / f"img_{i:05d}.dplt", img, Kind.IMAGE)
        save_tensor(root / "eval" / f"lbl_{i:05d}.dplt", lbl, Kind.LABEL)
    (root / "manifest.txt").write_text("\n".join(manifest_lines(manifest)) + "\n")
    return root
