"""Manifests, dataset splits, image decoding and the synthetic dataset.

A manifest is UTF-8 JSON Lines, one object per image::

    {"path": "images/000001.png", "ratings": [0, 1, 5, 20, 60, 70, 40, 10, 3, 1]}

``ratings`` holds vote counts for classes 1..10. Relative paths resolve
against the manifest's directory.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, EmptyDataset, ParseError, SchemaError
from .ratings import normalize

N_CLASSES = 10
SPLITS = ("train", "validation", "test")
TRAIN_FRACTION = 0.92


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    ratings: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "ratings", tuple(int(r) for r in self.ratings))
        if len(self.ratings) != N_CLASSES:
            raise SchemaError(f"expected {N_CLASSES} rating counts, got {len(self.ratings)}")
        if any(r < 0 for r in self.ratings) or sum(self.ratings) < 1:
            raise SchemaError("rating counts must be non-negative with at least one vote")

    def distribution(self):
        return normalize(self.ratings)

    def to_json(self) -> str:
        return json.dumps({"path": self.image_path, "ratings": list(self.ratings)})


def parse_manifest(lines) -> list[ManifestEntry]:
    entries = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
        if not isinstance(obj, dict) or "path" not in obj or "ratings" not in obj:
            raise SchemaError('expected an object with "path" and "ratings"', lineno)
        ratings = obj["ratings"]
        if not isinstance(obj["path"], str) or not isinstance(ratings, list):
            raise SchemaError('"path" must be a string and "ratings" an array', lineno)
        if not all(isinstance(r, int) and not isinstance(r, bool) for r in ratings):
            raise SchemaError("ratings must be integers", lineno)
        try:
            entries.append(ManifestEntry(obj["path"], ratings))
        except SchemaError as exc:
            raise SchemaError(str(exc), lineno) from None
    return entries


def load_manifest(path) -> list[ManifestEntry]:
    with open(path, encoding="utf-8") as f:
        return parse_manifest(f)


def write_manifest(path, entries):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for e in entries:
            f.write(e.to_json() + "\n")


def split_sizes(n: int) -> tuple[int, int, int]:
    """Train/validation/test counts for ``n`` items (92/4/4, each split non-empty)."""
    if n < 3:
        raise EmptyDataset(f"need at least 3 entries to split, got {n}")
    n_train = min(int(math.floor(TRAIN_FRACTION * n + 0.5)), n - 2)
    n_val = (n - n_train) // 2
    return n_train, n_val, n - n_train - n_val


@dataclass(frozen=True)
class Sample:
    image_id: str
    image: np.ndarray
    dist: np.ndarray

    @property
    def aspect_ratio(self) -> float:
        h, w = self.image.shape[:2]
        return h / w


@dataclass
class Dataset:
    """Manifest entries with a train/validation/test assignment.

    Images are decoded lazily from ``root`` unless preloaded into ``images``.
    """

    entries: list[ManifestEntry]
    splits: dict[str, list[int]]
    root: Path | None = None
    images: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def split(self, name: str) -> list[ManifestEntry]:
        return [self.entries[i] for i in self.splits[name]]

    def image(self, entry: ManifestEntry) -> np.ndarray:
        img = self.images.get(entry.image_path)
        if img is None:
            path = Path(entry.image_path)
            if self.root is not None and not path.is_absolute():
                path = self.root / path
            img = decode_image(path)
            self.images[entry.image_path] = img
        return img

    def samples(self, name: str) -> list[Sample]:
        return [Sample(e.image_path, self.image(e), e.distribution().probs) for e in self.split(name)]


def split_dataset(entries, seed: int = 0, root=None, images=None) -> Dataset:
    """Seeded shuffle followed by a contiguous 92/4/4 cut."""
    entries = list(entries)
    n_train, n_val, _ = split_sizes(len(entries))
    order = np.random.default_rng(seed).permutation(len(entries)).tolist()
    splits = {
        "train": order[:n_train],
        "validation": order[n_train : n_train + n_val],
        "test": order[n_train + n_val :],
    }
    return Dataset(entries, splits, Path(root) if root is not None else None, dict(images or {}))


def load_dataset(directory, seed: int = 0, manifest: str = "manifest.jsonl") -> Dataset:
    directory = Path(directory)
    return split_dataset(load_manifest(directory / manifest), seed, root=directory)


def decode_image(path) -> np.ndarray:
    """Decode PNG/JPEG into a float32 ``(H, W, 3)`` array in ``[0, 1]``."""
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "JPEG"):
                raise DecodeError(path, f"unsupported format {im.format}")
            im.load()
            rgb = im.convert("RGB")
    except DecodeError:
        raise
    except (OSError, UnidentifiedImageError, SyntaxError, ValueError) as exc:
        raise DecodeError(path, str(exc)) from None
    return np.asarray(rgb, dtype=np.float32) / 255.0


def encode_png(path, img: np.ndarray):
    Image.fromarray(quantize(img)).save(path, format="PNG")


def quantize(img: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(np.asarray(img) * 255.0 + 0.5), 0, 255).astype(np.uint8)


# ------------------------------------------------------------ synthetic data

ASPECT_EDGES = (0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6)


@dataclass(frozen=True)
class Teacher:
    """Fixed labeler from image statistics to a rating distribution.

    The score is an affine function of mean luminance, mean saturation
    (per-pixel channel range), luminance contrast (standard deviation) and
    warmth (mean red minus mean blue), clipped to ``[score_min, score_max]``.
    Luminance carries little weight on purpose: an untrained network already
    tracks brightness, so a brightness-driven teacher would be learned for
    free. The distribution is a Gaussian
    of width ``std`` sampled at classes 1..10, renormalized, with its center
    shifted so the distribution mean equals the score exactly.
    """

    bias: float = 5.5
    w_luminance: float = 0.5
    w_saturation: float = 5.0
    w_contrast: float = -10.0
    w_warmth: float = 3.0
    luminance_ref: float = 0.5
    saturation_ref: float = 0.3
    contrast_ref: float = 0.12
    score_min: float = 2.5
    score_max: float = 8.5
    std: float = 1.5
    raters: int = 1000

    def features(self, img) -> np.ndarray:
        a = np.asarray(img, dtype=np.float64)
        lum = a @ np.array([0.299, 0.587, 0.114])
        sat = a.max(axis=-1) - a.min(axis=-1)
        warmth = (a[..., 0] - a[..., 2]).mean()
        return np.array([lum.mean(), sat.mean(), lum.std(), warmth])

    def score(self, img) -> float:
        lum, sat, con, warmth = self.features(img)
        s = (self.bias + self.w_luminance * (lum - self.luminance_ref)
             + self.w_saturation * (sat - self.saturation_ref)
             + self.w_contrast * (con - self.contrast_ref)
             + self.w_warmth * warmth)
        return float(np.clip(s, self.score_min, self.score_max))

    def distribution_for_score(self, score: float) -> np.ndarray:
        return discretized_gaussian(score, self.std)

    def counts(self, img) -> tuple[int, ...]:
        return to_counts(self.distribution_for_score(self.score(img)), self.raters)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _gauss(center, std, N=N_CLASSES):
    x = np.arange(1, N + 1, dtype=np.float64)
    w = np.exp(-0.5 * ((x - center) / std) ** 2)
    return w / w.sum()


def discretized_gaussian(mean: float, std: float = 1.5, N: int = N_CLASSES) -> np.ndarray:
    """Gaussian over classes 1..N whose (discrete) mean is exactly ``mean``."""
    from scipy.optimize import brentq

    if not 1 < mean < N:
        raise ValueError(f"mean {mean} outside the open class range (1, {N})")
    x = np.arange(1, N + 1, dtype=np.float64)
    center = brentq(lambda c: _gauss(c, std, N) @ x - mean, -2.0 * N, 3.0 * N, xtol=1e-13)
    return _gauss(center, std, N)


def to_counts(probs: np.ndarray, total: int) -> tuple[int, ...]:
    """Largest-remainder rounding of ``probs * total`` to integers summing to ``total``."""
    raw = np.asarray(probs, dtype=np.float64) * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return tuple(int(c) for c in counts)


def _aspect_strata(lo: float, hi: float):
    edges = [lo] + [e for e in ASPECT_EDGES if lo < e < hi] + [hi]
    return list(zip(edges[:-1], edges[1:]))


def _hsv_to_rgb(h, s, v):
    i = int(h * 6.0) % 6
    f = h * 6.0 - math.floor(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    return np.array([(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i])


def render_image(width: int, height: int, rng: np.random.Generator) -> np.ndarray:
    """Procedural picture: tinted oriented gradient, soft blobs and noise."""
    hue = rng.random()
    sat = rng.uniform(0.0, 0.9)
    val = rng.uniform(0.25, 0.85)
    contrast = rng.uniform(0.02, 0.3)
    noise = rng.uniform(0.0, 0.08)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    scale = math.sqrt(width * height)
    theta = rng.uniform(0, math.pi)
    freq = rng.uniform(1.0, 4.0)
    phase = rng.uniform(0, 2 * math.pi)
    wave = np.sin(2 * math.pi * freq * (xx * math.cos(theta) + yy * math.sin(theta)) / scale + phase)
    blobs = np.zeros_like(xx)
    for _ in range(int(rng.integers(1, 4))):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        r = rng.uniform(0.1, 0.3) * scale
        blobs += rng.choice([-1.0, 1.0]) * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * r * r))
    base = _hsv_to_rgb(hue, sat, val)
    accent = _hsv_to_rgb((hue + rng.uniform(0.1, 0.5)) % 1.0, sat, val)
    mix = 0.5 + 0.5 * wave
    img = base * (1 - mix[..., None]) * 0.3 + base * 0.7 + accent * mix[..., None] * 0.3
    img = img + contrast * (0.6 * wave + 0.8 * blobs)[..., None]
    img = img + noise * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0)


@dataclass
class SyntheticDataset:
    entries: list[ManifestEntry]
    images: dict[str, np.ndarray]
    scores: list[float]
    teacher: Teacher

    def dataset(self, seed: int = 0) -> Dataset:
        return split_dataset(self.entries, seed, images=self.images)


def synth_generate(n: int, size_range=(64, 128), aspect_range=(0.4, 2.5), seed: int = 0,
                   out_dir=None, teacher: Teacher = Teacher()) -> SyntheticDataset:
    """Generate ``n`` teacher-labeled images.

    Image ``i`` draws its aspect ratio (height/width) uniformly within
    stratum ``i mod K`` of ``aspect_range`` cut at the bucket edges 0.6,
    0.8, ..., 1.6, so every aspect bucket is represented. The geometric mean
    of width and height is uniform in ``size_range``. Pixels are quantized to
    8 bits before labeling, so a PNG round trip reproduces the labels.

    When ``out_dir`` is given the dataset is also written there as
    ``images/*.png``, ``manifest.jsonl`` and ``teacher-params.json``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    strata = _aspect_strata(*aspect_range)
    entries, images, scores = [], {}, []
    for i in range(n):
        lo, hi = strata[i % len(strata)]
        ratio = rng.uniform(lo, hi)
        side = rng.uniform(*size_range)
        w = max(1, int(round(side / math.sqrt(ratio))))
        h = max(1, int(round(side * math.sqrt(ratio))))
        img = quantize(render_image(w, h, rng)).astype(np.float32) / 255.0
        name = f"images/{i:06d}.png"
        score = teacher.score(img)
        entries.append(ManifestEntry(name, teacher.counts(img)))
        images[name] = img
        scores.append(score)
    synth = SyntheticDataset(entries, images, scores, teacher)
    if out_dir is not None:
        write_synthetic(synth, out_dir, seed=seed, size_range=size_range, aspect_range=aspect_range)
    return synth


def write_synthetic(synth: SyntheticDataset, out_dir, **meta):
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    for name, img in synth.images.items():
        encode_png(out / name, img)
    write_manifest(out / "manifest.jsonl", synth.entries)
    params = {"teacher": synth.teacher.to_dict(), "generator": {k: list(v) if isinstance(v, tuple) else v
                                                                 for k, v in meta.items()}}
    (out / "teacher-params.json").write_text(json.dumps(params, indent=2, sort_keys=True) + "\n")
