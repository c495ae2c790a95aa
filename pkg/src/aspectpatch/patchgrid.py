"""Aspect-ratio-preserving patch geometry.

Images are ``(height, width, 3)`` float arrays with values in ``[0, 1]``.
Local patches are plain crops, so their content keeps the source aspect
ratio; only the global patch is squashed to a square.

All resizes use bilinear interpolation with half-pixel centers, i.e. output
pixel ``o`` samples source coordinate ``(o + 0.5) * n_in / n_out - 0.5``
(clamped to the valid range). No antialiasing is applied.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PatchTooLarge

LOCAL = "local"
GLOBAL = "global"

MP_RANDOM = "mp-random"
MP_LOCAL = "mp-local"
MP_GLOBAL_LOCAL = "mp-globallocal"
STRATEGIES = (MP_RANDOM, MP_LOCAL, MP_GLOBAL_LOCAL)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def as_image(img) -> np.ndarray:
    a = np.asarray(img)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"expected a (height, width, 3) array, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    return a


def aspect_ratio(img) -> float:
    """Height over width."""
    h, w = np.shape(img)[:2]
    return h / w


@dataclass(frozen=True)
class Patch:
    pixels: np.ndarray
    offset: tuple[int, int]  # (x, y) in the coordinates of the image it was cut from
    kind: str = LOCAL
    source: str | None = None

    @property
    def side(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class PatchPlan:
    """How test patches are chosen for one image.

    ``m`` is the number of grid patches per side (MP-Local, MP-GlobalLocal);
    ``n_random`` the number of random crops (MP-Random). Images are first
    rescaled so their shorter edge is ``S``; local patches have side ``P``
    and the global patch side ``G``.
    """

    strategy: str = MP_GLOBAL_LOCAL
    m: int = 3
    n_random: int = 1
    P: int = 299
    S: int = 342
    G: int = 342

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.P > self.S:
            raise ValueError(f"patch side {self.P} exceeds rescale target {self.S}")
        if self.m < 1 or self.n_random < 1:
            raise ValueError("m and n_random must be >= 1")

    @property
    def patch_count(self) -> int:
        if self.strategy == MP_RANDOM:
            return self.n_random
        return self.m**2 + (self.strategy == MP_GLOBAL_LOCAL)


def _axis_taps(n_in: int, n_out: int):
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(img, height: int, width: int) -> np.ndarray:
    img = as_image(img)
    if img.shape[:2] == (height, width):
        return img.copy()
    dtype = img.dtype if np.issubdtype(img.dtype, np.floating) else np.float64
    src = img.astype(np.float64, copy=False)
    i0, i1, t = _axis_taps(src.shape[0], height)
    t = t[:, None, None]
    rows = src[i0] * (1.0 - t) + src[i1] * t
    j0, j1, u = _axis_taps(src.shape[1], width)
    u = u[None, :, None]
    out = rows[:, j0] * (1.0 - u) + rows[:, j1] * u
    return out.astype(dtype, copy=False)


def rescaled_size(width: int, height: int, S: int) -> tuple[int, int]:
    """(width, height) after scaling the shorter edge to ``S``."""
    if width <= height:
        return S, max(S, round_half_up(height * S / width))
    return max(S, round_half_up(width * S / height)), S


def rescale_shorter_edge(img, S: int = 342) -> np.ndarray:
    img = as_image(img)
    h, w = img.shape[:2]
    new_w, new_h = rescaled_size(w, h, S)
    return resize_bilinear(img, new_h, new_w)


def _check_fits(img, P: int):
    h, w = img.shape[:2]
    if w < P or h < P:
        raise PatchTooLarge(f"cannot cut a {P}x{P} patch from a {w}x{h} image")


def crop(img, x: int, y: int, P: int, source=None) -> Patch:
    return Patch(img[y : y + P, x : x + P].copy(), (int(x), int(y)), LOCAL, source)


def random_offset(width: int, height: int, P: int, rng: np.random.Generator) -> tuple[int, int]:
    x = int(rng.integers(0, width - P + 1))
    y = int(rng.integers(0, height - P + 1))
    return x, y


def random_crop(img, P: int, rng: np.random.Generator, source=None) -> Patch:
    """Square crop at a uniformly random in-bounds offset."""
    img = as_image(img)
    _check_fits(img, P)
    h, w = img.shape[:2]
    x, y = random_offset(w, h, P, rng)
    return crop(img, x, y, P, source)


def grid_offsets(dim: int, P: int, m: int) -> list[int]:
    """Equal-interval offsets along one axis; a single patch is centered."""
    span = dim - P
    if span < 0:
        raise PatchTooLarge(f"patch side {P} exceeds image extent {dim}")
    if m == 1:
        return [span // 2]
    return [round_half_up(i * span / (m - 1)) for i in range(m)]


def grid_crops(img, P: int, m: int, source=None) -> list[Patch]:
    """``m * m`` patches at equal intervals, row-major."""
    img = as_image(img)
    _check_fits(img, P)
    h, w = img.shape[:2]
    xs = grid_offsets(w, P, m)
    ys = grid_offsets(h, P, m)
    return [crop(img, x, y, P, source) for y in ys for x in xs]


def global_patch(img, G: int = 342, source=None) -> Patch:
    """The whole image resized (anisotropically) to ``G x G``."""
    return Patch(resize_bilinear(img, G, G), (0, 0), GLOBAL, source)


def horizontal_flip(img) -> np.ndarray:
    return as_image(img)[:, ::-1].copy()


def select_test_patches(img, plan: PatchPlan, rng: np.random.Generator | None = None,
                        source=None, rescaled: bool = False) -> list[Patch]:
    """Patches used to score one image under ``plan``.

    The image is rescaled to shorter edge ``plan.S`` first unless
    ``rescaled`` says this already happened. ``rng`` is only consumed by
    MP-Random.
    """
    img = as_image(img)
    if not rescaled:
        img = rescale_shorter_edge(img, plan.S)
    if plan.strategy == MP_RANDOM:
        if rng is None:
            raise ValueError("MP-Random needs a random generator")
        return [random_crop(img, plan.P, rng, source) for _ in range(plan.n_random)]
    patches = grid_crops(img, plan.P, plan.m, source)
    if plan.strategy == MP_GLOBAL_LOCAL:
        patches.append(global_patch(img, plan.G, source))
    return patches
