"""Synthetic word images, manifests and preprocessing.

Machine print is rendered on a fixed-advance grid, so every character box is
known exactly: character ``k`` of an ``n``-letter word occupies columns
``[x0 + k*advance, x0 + (k+1)*advance)`` with the word centred on the canvas.
Raw rasters are uint8 with a white (255) background and dark ink.
"""

from __future__ import annotations

import json
import os
import string
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from PIL import Image, ImageDraw, ImageFont
from scipy import ndimage

__all__ = [
    "ALPHABET",
    "DoesNotFit",
    "UnsupportedCharacter",
    "FontSpec",
    "LabeledSample",
    "CorpusStats",
    "encode_label",
    "decode_label",
    "render_machine_print",
    "make_synthetic_handwriting",
    "make_synthetic_corpus",
    "resize",
    "preprocess",
    "split_dataset",
    "write_manifest",
    "read_manifest",
    "to_tensors",
]

ALPHABET = string.ascii_lowercase + string.ascii_uppercase + string.digits
CANVAS = (32, 128)
_CHAR_INDEX = {c: i for i, c in enumerate(ALPHABET)}


class DoesNotFit(ValueError):
    """The label is too long for the canvas (or empty when that is disallowed)."""


class UnsupportedCharacter(ValueError):
    pass


def encode_label(label: str) -> list[int]:
    try:
        return [_CHAR_INDEX[c] for c in label]
    except KeyError as exc:
        raise UnsupportedCharacter(f"character {exc.args[0]!r} is not in the alphabet") from None


def decode_label(indices) -> str:
    return "".join(ALPHABET[i] for i in indices)


@dataclass(frozen=True)
class FontSpec:
    """Monospace rendering parameters.

    ``path=None`` uses DejaVu Sans Mono (bold when ``bold``) shipped with
    matplotlib. ``antialias`` renders grey edge pixels instead of a binary mask.
    """

    path: str | None = None
    size: int = 15
    advance: int = 10
    baseline_offset: int = 0
    bold: bool = True
    antialias: bool = True


@lru_cache(maxsize=8)
def _load_font(path: str | None, size: int, bold: bool = False) -> ImageFont.FreeTypeFont:
    if path is None:
        import matplotlib
        name = "DejaVuSansMono-Bold.ttf" if bold else "DejaVuSansMono.ttf"
        path = os.path.join(matplotlib.get_data_path(), "fonts", "ttf", name)
    return ImageFont.truetype(path, size)


@lru_cache(maxsize=512)
def _glyph(char: str, font_spec: FontSpec, height: int) -> np.ndarray:
    font = _load_font(font_spec.path, font_spec.size, font_spec.bold)
    cell = Image.new("L", (font_spec.advance, height), 255)
    draw = ImageDraw.Draw(cell)
    draw.fontmode = "L" if font_spec.antialias else "1"
    ascent, descent = font.getmetrics()
    x = (font_spec.advance - font.getlength(char)) / 2
    y = (height - ascent - descent) / 2 + font_spec.baseline_offset
    draw.text((round(x), round(y)), char, fill=0, font=font)
    return np.asarray(cell, dtype=np.uint8)


def render_machine_print(label: str, font_spec: FontSpec = FontSpec(), canvas: tuple[int, int] = CANVAS,
                         allow_empty: bool = False) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Render ``label`` in black on white and return the image and per-character column boxes."""
    height, width = canvas
    encode_label(label)
    if not label and not allow_empty:
        raise DoesNotFit("empty label")
    adv = font_spec.advance
    if len(label) * adv > width:
        raise DoesNotFit(f"{label!r} needs {len(label) * adv} columns, canvas has {width}")
    img = np.full(canvas, 255, dtype=np.uint8)
    x0 = (width - len(label) * adv) // 2
    boxes = []
    for k, ch in enumerate(label):
        a = x0 + k * adv
        img[:, a:a + adv] = _glyph(ch, font_spec, height)
        boxes.append((a, a + adv))
    return img, boxes


def make_synthetic_handwriting(mp_image: np.ndarray, distortion_seed: int,
                               strength: float = 1.0) -> np.ndarray:
    """Seeded handwriting stand-in: affine jitter, elastic warp, stroke width change and noise."""
    mp_image = np.asarray(mp_image)
    if strength == 0:
        return mp_image.copy()
    rng = np.random.default_rng(distortion_seed)
    ink = (255.0 - mp_image.astype(np.float64)) / 255.0
    h, w = ink.shape

    shear = rng.normal(0, 0.25) * strength
    angle = rng.normal(0, 0.03) * strength
    scale = 1 + rng.normal(0, 0.05) * strength
    shift = rng.normal(0, 1.5, size=2) * strength
    c, s = np.cos(angle), np.sin(angle)
    # output (row, col) -> input coordinates around the image centre
    mat = np.array([[c, -s], [s, c]]) @ np.array([[1, 0], [shear, 1]]) / scale
    centre = np.array([(h - 1) / 2, (w - 1) / 2])
    offset = centre - mat @ centre + shift
    ink = ndimage.affine_transform(ink, mat, offset=offset, order=1, mode="constant")

    alpha, sigma = 2.5 * strength, 4.0
    dy = ndimage.gaussian_filter(rng.uniform(-1, 1, (h, w)), sigma) * alpha * sigma
    dx = ndimage.gaussian_filter(rng.uniform(-1, 1, (h, w)), sigma) * alpha * sigma
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    ink = ndimage.map_coordinates(ink, [rows + dy, cols + dx], order=1, mode="constant")

    thickness = rng.integers(0, 3)
    if thickness == 1:
        ink = ndimage.grey_dilation(ink, size=(2, 2))
    elif thickness == 2:
        ink = ndimage.grey_dilation(ink, size=(2, 1))

    ink = ink + rng.normal(0, 0.05 * strength, ink.shape)
    ink = np.clip(ink, 0, 1)
    return np.round(255 * (1 - ink)).astype(np.uint8)


@dataclass
class LabeledSample:
    hw_image: np.ndarray
    mp_image: np.ndarray
    label: str
    char_boxes: list[tuple[int, int]]
    source: str = "synthetic"

    def __post_init__(self):
        if len(self.char_boxes) != len(self.label):
            raise ValueError(f"{len(self.char_boxes)} boxes for label {self.label!r}")
        for (a0, a1), (b0, b1) in zip(self.char_boxes, self.char_boxes[1:]):
            if not (a0 < a1 <= b0 < b1):
                raise ValueError(f"boxes must be ordered and disjoint, got {self.char_boxes}")


def make_synthetic_corpus(vocab, n: int, seed: int = 0, font_spec: FontSpec = FontSpec(),
                          strength: float = 1.0) -> list[LabeledSample]:
    """``n`` samples cycling through ``vocab``, each with its own handwriting distortion."""
    samples = []
    for i in range(n):
        label = vocab[i % len(vocab)]
        mp, boxes = render_machine_print(label, font_spec)
        hw = make_synthetic_handwriting(mp, seed * 1_000_003 + i, strength)
        samples.append(LabeledSample(hw, mp, label, boxes))
    return samples


@dataclass(frozen=True)
class CorpusStats:
    mean: float
    std: float
    eps: float = field(default=1e-6, compare=False)

    @classmethod
    def fit(cls, images) -> "CorpusStats":
        pix = np.concatenate([resize(im).ravel() for im in images])
        return cls(float(pix.mean()), float(pix.std()))

    def to_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump({"mean": self.mean, "std": self.std}, fh)

    @classmethod
    def from_json(cls, path: str) -> "CorpusStats":
        with open(path) as fh:
            d = json.load(fh)
        return cls(float(d["mean"]), float(d["std"]))


def resize(raw_image, shape: tuple[int, int] = CANVAS) -> np.ndarray:
    """Bilinear resize to ``shape`` (rows, cols) as float64."""
    arr = np.asarray(raw_image, dtype=np.float32)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"expected a non-empty 2D grayscale raster, got shape {arr.shape}")
    if arr.shape == shape:
        return arr.astype(np.float64)
    out = Image.fromarray(arr, mode="F").resize((shape[1], shape[0]), Image.BILINEAR)
    return np.asarray(out, dtype=np.float64)


def preprocess(raw_image, stats: CorpusStats, shape: tuple[int, int] = CANVAS) -> np.ndarray:
    """Resize to 32 x 128 and standardize with corpus-wide statistics."""
    return (resize(raw_image, shape) - stats.mean) / max(stats.std, stats.eps)


def split_dataset(samples, ratio: float = 0.95, seed: int = 0):
    """Seeded shuffle, then the first ``round(ratio * n)`` items form the training set."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    samples = list(samples)
    perm = np.random.default_rng(seed).permutation(len(samples))
    n_train = int(round(ratio * len(samples)))
    train = [samples[i] for i in perm[:n_train]]
    test = [samples[i] for i in perm[n_train:]]
    return train, test


def write_manifest(samples, out_dir: str, name: str = "manifest.jsonl") -> str:
    """Write PNGs plus a JSON-lines manifest; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        for i, s in enumerate(samples):
            hw_path, mp_path = f"hw_{i:05d}.png", f"mp_{i:05d}.png"
            Image.fromarray(np.asarray(s.hw_image, dtype=np.uint8)).save(os.path.join(out_dir, hw_path))
            Image.fromarray(np.asarray(s.mp_image, dtype=np.uint8)).save(os.path.join(out_dir, mp_path))
            rec = {"hw_path": hw_path, "mp_path": mp_path, "label": s.label,
                   "boxes": [list(map(int, b)) for b in s.char_boxes]}
            fh.write(json.dumps(rec) + "\n")
    return path


def read_manifest(path: str) -> list[LabeledSample]:
    """Load samples listed in a JSON-lines manifest; image paths are relative to the manifest."""
    base = os.path.dirname(os.path.abspath(path))
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                hw = np.asarray(Image.open(os.path.join(base, rec["hw_path"])).convert("L"))
                mp = np.asarray(Image.open(os.path.join(base, rec["mp_path"])).convert("L"))
                boxes = [tuple(b) for b in rec["boxes"]]
                samples.append(LabeledSample(hw, mp, rec["label"], boxes, source="manifest"))
            except (KeyError, json.JSONDecodeError, OSError) as exc:
                raise ValueError(f"{path}:{lineno}: bad manifest record ({exc})") from exc
    return samples


def to_tensors(samples, stats: CorpusStats, dtype=None):
    """Stack samples into standardized (B, 1, 32, 128) tensors.

    Returns ``(hw, mp, labels, boxes)``; boxes are rescaled to the canvas
    width when the raw machine print has another width.
    """
    import torch

    dtype = dtype or torch.float32
    hw = np.stack([preprocess(s.hw_image, stats) for s in samples])[:, None]
    mp = np.stack([preprocess(s.mp_image, stats) for s in samples])[:, None]
    boxes = []
    for s in samples:
        width = np.asarray(s.mp_image).shape[1]
        if width == CANVAS[1]:
            boxes.append([tuple(b) for b in s.char_boxes])
        else:
            f = CANVAS[1] / width
            scaled = [(int(np.floor(a * f)), max(int(np.ceil(b * f)), int(np.floor(a * f)) + 1))
                      for a, b in s.char_boxes]
            boxes.append(scaled)
    labels = [s.label for s in samples]
    return (torch.as_tensor(hw, dtype=dtype), torch.as_tensor(mp, dtype=dtype), labels, boxes)
