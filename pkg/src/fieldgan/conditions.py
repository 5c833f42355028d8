"""Condition derivation and encoding.

A condition is one of five forms derived from a source image or given as
text: the color image itself, grayscale, a Sobel edge sketch, a 1/16-scale
low-resolution image, or a token string.  Any condition is encoded into a
unit-norm global feature vector by an :class:`Encoder`; the bundled
:class:`ToyEncoder` is a deterministic seeded linear map that keeps the whole
conditioning path testable without pre-trained weights, and any object with
the same ``dim``/``encode`` surface can replace it.

All derivations are pure: input images are never mutated.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

CONDITION_KINDS = ("color", "gray", "sketch", "lowres", "text")

LOW_RES_RATIO = 16
SKETCH_THRESHOLD = 0.25

_LUMA = np.array([0.299, 0.587, 0.114])
_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T


@dataclass(frozen=True)
class Condition:
    """A single condition input: an image variant or a text string."""

    kind: str
    image: np.ndarray | None = None
    text: str | None = None

    def __post_init__(self):
        if self.kind not in CONDITION_KINDS:
            raise ValueError(f"unknown condition kind {self.kind!r}")
        if self.kind == "text":
            if not self.text or not self.text.strip():
                raise ValueError("text condition must be a non-empty string")
        else:
            img = self.image
            if img is None or img.ndim != 3:
                raise ValueError(f"{self.kind} condition needs an HxWxC image")
            if img.min() < 0.0 or img.max() > 1.0:
                raise ValueError("condition pixel values must lie in [0, 1]")


@dataclass(frozen=True)
class NoiseCodes:
    """Shape and appearance latent codes."""

    shape: np.ndarray
    appearance: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.shape).all() and np.isfinite(self.appearance).all()):
            raise ValueError("noise codes must be finite")


def sample_noise(rng: np.random.Generator, shape_dim: int, appearance_dim: int) -> NoiseCodes:
    """Draw i.i.d. standard-normal codes."""
    return NoiseCodes(rng.standard_normal(shape_dim), rng.standard_normal(appearance_dim))


def zero_noise(shape_dim: int, appearance_dim: int) -> NoiseCodes:
    """All-zero codes, used for 'average' renderings."""
    return NoiseCodes(np.zeros(shape_dim), np.zeros(appearance_dim))


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Rec.601 luminance of an HxWx3 image, kept as HxWx1."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got {img.shape}")
    return (img @ _LUMA)[..., None]


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling at output pixel centers (edge-clamped)."""
    h, w = img.shape[:2]
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bottom = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def downsample_low_res(img: np.ndarray) -> np.ndarray:
    """Bilinear reduction by a factor of 16 per axis."""
    h, w = img.shape[:2]
    if h % LOW_RES_RATIO or w % LOW_RES_RATIO:
        raise ValueError(f"image dims {h}x{w} not divisible by {LOW_RES_RATIO}")
    return bilinear_resize(img, h // LOW_RES_RATIO, w // LOW_RES_RATIO)


def sobel_sketch(img: np.ndarray, threshold: float = SKETCH_THRESHOLD) -> np.ndarray:
    """Thresholded Sobel edge magnitude of the luminance, edges high.

    The gradient magnitude is normalized by its maximum and binarized at the
    threshold; a constant image (zero gradient everywhere) maps to all zeros.
    Borders use edge replication so flat regions never fire.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    luma = to_grayscale(img)[..., 0]
    padded = np.pad(luma, 1, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3))
    gx = np.einsum("ijkl,kl->ij", windows, _SOBEL_X)
    gy = np.einsum("ijkl,kl->ij", windows, _SOBEL_Y)
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 0.0:
        return np.zeros_like(mag)[..., None]
    mag /= peak
    return (mag >= threshold).astype(img.dtype)[..., None]


def derive_conditions(img: np.ndarray, text: str) -> dict[str, Condition]:
    """All five condition variants of one source image."""
    return {
        "color": Condition("color", image=img),
        "gray": Condition("gray", image=to_grayscale(img)),
        "sketch": Condition("sketch", image=sobel_sketch(img)),
        "lowres": Condition("lowres", image=downsample_low_res(img)),
        "text": Condition("text", text=text),
    }


def tokenize(text: str) -> list[str]:
    return text.lower().split()


class ToyEncoder:
    """Deterministic seeded linear encoder over thumbnails and token bags.

    Image variants are resized to an 8x8 three-channel thumbnail and projected
    by a fixed Gaussian matrix; text is hashed into a token-count histogram
    and projected likewise.  Both land in the same unit sphere of dimension
    ``dim``.  Weights are fixed at construction, so encoding is pure.
    """

    THUMB = 8
    TEXT_BINS = 64

    def __init__(self, dim: int = 32, seed: int = 0):
        self.dim = dim
        init = np.random.default_rng(seed)
        n_img = 3 * self.THUMB * self.THUMB
        self._img_proj = init.standard_normal((dim, n_img)) / np.sqrt(n_img)
        self._txt_proj = init.standard_normal((dim, self.TEXT_BINS)) / np.sqrt(self.TEXT_BINS)

    def encode(self, cond: Condition) -> np.ndarray:
        if cond.kind == "text":
            raw = self._txt_proj @ self._token_histogram(cond.text)
        else:
            raw = self._img_proj @ self._thumbnail(cond.image)
        norm = np.linalg.norm(raw)
        if norm < 1e-12:
            raise ValueError("encoder produced a zero feature vector")
        return raw / norm

    def _thumbnail(self, img: np.ndarray) -> np.ndarray:
        if img.shape[2] == 1:
            img = np.repeat(img, 3, axis=2)
        return bilinear_resize(img, self.THUMB, self.THUMB).reshape(-1)

    def _token_histogram(self, text: str) -> np.ndarray:
        hist = np.zeros(self.TEXT_BINS)
        for token in tokenize(text):
            hist[zlib.crc32(token.encode("utf-8")) % self.TEXT_BINS] += 1.0
        return hist


def encode_condition(cond: Condition, encoder) -> np.ndarray:
    """Unit-norm global feature vector for any condition variant."""
    c = encoder.encode(cond)
    if c.shape != (encoder.dim,):
        raise ValueError(f"encoder returned shape {c.shape}, expected ({encoder.dim},)")
    return c


def build_matching_vector(c: np.ndarray, codes: NoiseCodes) -> np.ndarray:
    """Concatenation [c | z_shape | z_appearance] fed to the discriminator."""
    for name, part in (("c", c), ("z_shape", codes.shape), ("z_appearance", codes.appearance)):
        if np.asarray(part).ndim != 1:
            raise ValueError(f"{name} must be a vector, got shape {np.shape(part)}")
    return np.concatenate([c, codes.shape, codes.appearance])
