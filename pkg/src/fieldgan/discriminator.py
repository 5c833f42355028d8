"""Condition-matching discriminator with an auxiliary pose head.

A strided convolutional trunk reduces the image to a 4x4 feature grid (one
stride-2 stage per halving, so the stage count follows the training
resolution).  Two heads share the flattened trunk features: the match head
concatenates them with the matching vector e and emits a real/fake logit; the
pose head regresses the camera rotation and elevation through a scaled
sigmoid, so predictions always land in [0, 2pi] x [0, pi].

The trunk uses 4x4 stride-2 pad-1 kernels: with even resolutions a 3x3
stride-2 convolution has no integral output extent, and 4x4 halves exactly.
Everything is built from tape operations, so the match logit differentiates
with respect to both the image and e (the gradient-penalty prerequisite).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class DiscriminatorConfig:
    resolution: int = 64
    matching_dim: int = 96          # len(c) + len(z_shape) + len(z_appearance)
    base_channels: int = 24
    max_channels: int = 96
    head_hidden: int = 96

    def __post_init__(self):
        stages = np.log2(self.resolution) - 2
        if self.resolution < 8 or stages != int(stages):
            raise ValueError(
                f"resolution must be a power of two >= 8, got {self.resolution}"
            )
        for name in ("matching_dim", "base_channels", "max_channels", "head_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def stages(self) -> int:
        return int(np.log2(self.resolution)) - 2

    @property
    def stage_channels(self) -> list[int]:
        return [min(self.base_channels * 2 ** i, self.max_channels)
                for i in range(self.stages)]


class Discriminator:
    """Image (+ matching vector) -> (match logit, pose estimate)."""

    def __init__(self, config: DiscriminatorConfig, rng: np.random.Generator,
                 dtype=np.float64):
        self.cfg = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self._build(rng)

    def _add(self, name, data):
        p = T.parameter(np.asarray(data, dtype=self.dtype))
        self.params[name] = p
        return p

    def _build(self, rng):
        cfg = self.cfg
        gain = 2.0 / (1.0 + 0.2 ** 2)
        ch_in = 3
        for i, ch_out in enumerate(cfg.stage_channels):
            std = np.sqrt(gain / (ch_in * 16))
            self._add(f"conv.{i}.w", rng.normal(0.0, std, (ch_out, ch_in, 4, 4)))
            self._add(f"conv.{i}.b", np.zeros(ch_out))
            ch_in = ch_out
        self.feature_dim = ch_in * 4 * 4
        self._linear_init(rng, "match.0", cfg.head_hidden, self.feature_dim + cfg.matching_dim)
        self._linear_init(rng, "match.1", cfg.head_hidden, cfg.head_hidden)
        self._linear_init(rng, "match.out", 1, cfg.head_hidden)
        self._linear_init(rng, "pose.0", cfg.head_hidden, self.feature_dim)
        self._linear_init(rng, "pose.out", 2, cfg.head_hidden)

    def _linear_init(self, rng, prefix, out_dim, in_dim):
        gain = 2.0 / (1.0 + 0.2 ** 2)
        std = np.sqrt(gain / in_dim)
        self._add(f"{prefix}.w", rng.normal(0.0, std, (out_dim, in_dim)))
        self._add(f"{prefix}.b", np.zeros(out_dim))

    def _linear(self, x: Tensor, prefix: str) -> Tensor:
        w, b = self.params[f"{prefix}.w"], self.params[f"{prefix}.b"]
        return T.add(T.matmul(x, T.transpose(w)), b)

    def _as_tensor(self, value) -> Tensor:
        if isinstance(value, Tensor):
            return value
        return Tensor(np.asarray(value, dtype=self.dtype))

    def extract_features(self, images) -> Tensor:
        """Images (B, H, W, 3) or (H, W, 3) -> flattened trunk features (B, D)."""
        img = self._as_tensor(images)
        if img.ndim == 3:
            img = T.reshape(img, (1,) + img.shape)
        cfg = self.cfg
        if img.shape[1] != cfg.resolution or img.shape[2] != cfg.resolution \
                or img.shape[3] != 3:
            raise T.ShapeError(
                f"extract_features: expected (B, {cfg.resolution}, {cfg.resolution}, 3) "
                f"images, got {img.shape}"
            )
        h = T.transpose(img, (0, 3, 1, 2))
        for i in range(cfg.stages):
            h = T.conv2d(h, self.params[f"conv.{i}.w"], self.params[f"conv.{i}.b"],
                         stride=2, pad=1)
            h = T.leaky_relu(h, slope=0.2)
        return T.reshape(h, (h.shape[0], self.feature_dim))

    def match_logit(self, features: Tensor, e) -> Tensor:
        """Trunk features + matching vector -> real/fake logit (B, 1)."""
        e_t = self._as_tensor(e)
        if e_t.ndim == 1:
            e_t = T.reshape(e_t, (1, e_t.shape[0]))
        if e_t.shape[1] != self.cfg.matching_dim:
            raise T.ShapeError(
                f"match_logit: matching vector width {e_t.shape[1]} != "
                f"{self.cfg.matching_dim}"
            )
        h = T.concat([features, e_t], axis=1)
        h = T.leaky_relu(self._linear(h, "match.0"), slope=0.2)
        h = T.leaky_relu(self._linear(h, "match.1"), slope=0.2)
        return self._linear(h, "match.out")

    def estimate_pose(self, features: Tensor) -> Tensor:
        """Trunk features -> (rotation, elevation) in [0, 2pi] x [0, pi], shape (B, 2)."""
        h = T.leaky_relu(self._linear(features, "pose.0"), slope=0.2)
        raw = self._linear(h, "pose.out")
        bounds = T.constant(np.array([2.0 * np.pi, np.pi], dtype=self.dtype))
        return T.mul(T.sigmoid(raw), bounds)

    def forward(self, images, e) -> tuple[Tensor, Tensor]:
        """One trunk pass feeding both heads: (logit, pose_prediction)."""
        features = self.extract_features(images)
        return self.match_logit(features, e), self.estimate_pose(features)
