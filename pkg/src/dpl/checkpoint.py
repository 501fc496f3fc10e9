"""Parameter checkpoints.

A model is stored as one flat f32 ScoreMap-kind container ``model_<tag>.dplt``
holding every parameter tensor back to back, plus a sidecar
``model_<tag>.manifest`` with one ``name H W C`` line per tensor.
"""
from pathlib import Path

import numpy as np

from .core_types import Kind, load_tensor, save_tensor
from . import models

MODEL_TYPES = {
    "segmenter": models.SegmenterParams,
    "translator": models.TranslatorParams,
    "image_disc": models.ImageDiscParams,
    "feat_disc": models.FeatDiscParams,
}


def _dims3(shape):
    shape = tuple(shape) + (1,) * (3 - len(shape))
    return shape[:3]


def save_params(directory, tag, params):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    kind = next(k for k, t in MODEL_TYPES.items() if isinstance(params, t))
    lines = [f"# {kind}"]
    flat = []
    for name, arr in models.param_items(params):
        arr = np.asarray(arr)
        h, w, c = _dims3(arr.shape)
        lines.append(f"{name} {h} {w} {c}")
        flat.append(arr.reshape(-1))
    data = np.concatenate(flat)[None, None, :]
    save_tensor(directory / f"model_{tag}.dplt", data, Kind.SCORE)
    (directory / f"model_{tag}.manifest").write_text("\n".join(lines) + "\n")


# tensor rank per field; the manifest always pads shapes to three dims
_RANK = {
    models.SegmenterParams: {"weight": 2, "bias": 1},
    models.TranslatorParams: {"matrix": 2, "bias": 1},
    models.ImageDiscParams: {"weight": 1, "bias": 0},
    models.FeatDiscParams: {"weight": 1, "bias": 0},
}


def load_params(directory, tag):
    directory = Path(directory)
    lines = (directory / f"model_{tag}.manifest").read_text().splitlines()
    cls = MODEL_TYPES[lines[0].lstrip("# ").strip()]
    data, _ = load_tensor(directory / f"model_{tag}.dplt")
    flat = data.reshape(-1).astype(np.float64)
    out, pos = {}, 0
    for line in lines[1:]:
        name, *dims = line.split()
        dims = [int(d) for d in dims]
        n = int(np.prod(dims))
        out[name] = flat[pos:pos + n].reshape(dims[:_RANK[cls][name]])
        pos += n
    if pos != flat.size:
        raise ValueError(f"manifest for {tag} does not cover the tensor")
    return cls(**out)
