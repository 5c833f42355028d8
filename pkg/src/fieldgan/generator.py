"""Condition-driven image generator over a sinusoidal feature field.

The pipeline: two mapping networks turn (condition vector, noise code) into
per-layer frequency/phase modulation; a shape block of FiLM-modulated sine
layers lifts 3D sample coordinates to features (and density, via a softplus
head on its output, so density never sees the viewing direction or the
appearance code); an appearance block consumes those features plus the ray
direction; the per-sample features are alpha-composited along each ray at the
low-resolution feature grid; a small convolutional decoder with nearest
upsampling produces the final RGB image in [0, 1].

All forward paths are built from tape operations, so generator losses
differentiate end to end.  Batched evaluation stacks every latent input along
a leading axis; camera math stays in plain numpy since gradients never flow
into ray geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import camera as cam
from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class GeneratorConfig:
    condition_dim: int = 32
    shape_noise_dim: int = 32
    appearance_noise_dim: int = 32
    feature_dim: int = 32
    shape_layers: int = 4
    appearance_layers: int = 2
    mapping_hidden: int = 64
    grid_size: int = 16
    image_size: int = 64
    samples_per_ray: int = 12
    decoder_channels: int = 16
    fov: float = cam.DEFAULT_FOV
    near: float = cam.DEFAULT_NEAR
    far: float = cam.DEFAULT_FAR
    freq_scale: float = 15.0
    freq_offset: float = 30.0

    def __post_init__(self):
        for name in ("condition_dim", "shape_noise_dim", "appearance_noise_dim",
                     "feature_dim", "shape_layers", "appearance_layers",
                     "mapping_hidden", "grid_size", "image_size",
                     "samples_per_ray", "decoder_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        ratio = self.image_size / self.grid_size
        if ratio < 1 or ratio != 2 ** int(np.log2(ratio)):
            raise ValueError(
                f"image_size / grid_size must be a power of two, "
                f"got {self.image_size}/{self.grid_size}"
            )

    @property
    def upsample_stages(self) -> int:
        return int(np.log2(self.image_size // self.grid_size))


class FilmParams:
    """Per-layer (frequency, phase) modulation pairs for one block."""

    def __init__(self, pairs):
        self.pairs = tuple(pairs)
        widths = {(g.shape[-1], b.shape[-1]) for g, b in self.pairs}
        if len(widths) > 1:
            raise ValueError(f"inconsistent modulation widths: {sorted(widths)}")

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]


def film_siren_layer(y: Tensor, w: Tensor, b: Tensor,
                     gamma: Tensor, beta: Tensor) -> Tensor:
    """sin(gamma * (W y + b) + beta) for a single modulated sine layer.

    ``y`` may be a single vector or carry leading batch axes; ``gamma`` and
    ``beta`` must broadcast against the linear output.
    """
    if w.ndim != 2:
        raise T.ShapeError(f"film_siren_layer: weight must be 2-D, got {w.shape}")
    if y.shape[-1] != w.shape[1]:
        raise T.ShapeError(
            f"film_siren_layer: input width {y.shape[-1]} != weight width {w.shape[1]}"
        )
    squeeze = y.ndim == 1
    if squeeze:
        y = T.reshape(y, (1, y.shape[0]))
    lead = y.shape[:-1]
    flat = T.reshape(y, (-1, y.shape[-1])) if y.ndim > 2 else y
    z = T.add(T.matmul(flat, T.transpose(w)), b)
    if y.ndim > 2:
        z = T.reshape(z, lead + (w.shape[0],))
    out = T.sin(T.add(T.mul(z, gamma), beta))
    if squeeze:
        out = T.reshape(out, (w.shape[0],))
    return out


def compositing_weights(sigma: Tensor, deltas) -> tuple[Tensor, Tensor]:
    """Per-sample compositing weights T*alpha and transmittance T along rays.

    ``sigma`` is (..., J) nonnegative density, ``deltas`` the matching sample
    spacings.  alpha = 1 - exp(-sigma*delta); transmittance is the exclusive
    product of (1 - alpha), computed in log space as exp of the negated
    exclusive prefix sum of sigma*delta.
    """
    deltas_arr = deltas.data if isinstance(deltas, Tensor) else np.asarray(deltas)
    if np.any(deltas_arr < 0):
        raise ValueError("volume rendering requires nonnegative sample spacings")
    if not isinstance(deltas, Tensor):
        deltas = Tensor(deltas_arr.astype(sigma.dtype, copy=False))
    sd = T.mul(sigma, deltas)
    trans = T.exp(T.neg(T.cumsum_exclusive(sd, axis=-1)))
    alpha = T.sub(T.constant(np.array(1.0, dtype=sigma.dtype)), T.exp(T.neg(sd)))
    return T.mul(trans, alpha), trans


def volume_render(sigma: Tensor, feats: Tensor, deltas) -> Tensor:
    """Composite per-sample features into per-ray features.

    ``sigma``: (..., J); ``feats``: (..., J, L); ``deltas``: (..., J).
    Returns (..., L).
    """
    if feats.shape[:-1] != sigma.shape:
        raise T.ShapeError(
            f"volume_render: feats {feats.shape} do not match sigma {sigma.shape}"
        )
    weights, _ = compositing_weights(sigma, deltas)
    weighted = T.mul(T.reshape(weights, weights.shape + (1,)), feats)
    return T.tensor_sum(weighted, axis=weighted.ndim - 2)


def _relu_linear_init(rng, out_dim, in_dim, dtype, gain=2.0, head_scale=None):
    std = np.sqrt(gain / in_dim)
    w = rng.normal(0.0, std, (out_dim, in_dim))
    if head_scale is not None:
        w *= head_scale
    return w.astype(dtype)


def _siren_init(rng, out_dim, in_dim, dtype, first, divisor):
    bound = 1.0 / in_dim if first else np.sqrt(6.0 / in_dim) / divisor
    return rng.uniform(-bound, bound, (out_dim, in_dim)).astype(dtype)


class Generator:
    """Full generator: pose + latents -> image."""

    def __init__(self, config: GeneratorConfig, rng: np.random.Generator,
                 dtype=np.float64):
        self.cfg = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self._build(rng)

    # -- construction -------------------------------------------------------

    def _add(self, name: str, data: np.ndarray) -> Tensor:
        p = T.parameter(np.asarray(data, dtype=self.dtype))
        self.params[name] = p
        return p

    def _build(self, rng):
        cfg = self.cfg
        lf = cfg.feature_dim
        self._build_mapping(rng, "map_s", cfg.condition_dim + cfg.shape_noise_dim,
                            cfg.shape_layers)
        self._build_mapping(rng, "map_a", cfg.condition_dim + cfg.appearance_noise_dim,
                            cfg.appearance_layers + 1)

        dims = [3] + [lf] * cfg.shape_layers
        for i in range(cfg.shape_layers):
            self._add(f"shape.{i}.w", _siren_init(rng, dims[i + 1], dims[i], self.dtype,
                                                  first=(i == 0), divisor=cfg.freq_offset))
            self._add(f"shape.{i}.b", np.zeros(dims[i + 1]))

        for i in range(cfg.appearance_layers + 1):
            # The ray direction joins right before the last layer.
            in_dim = lf + 2 if i == cfg.appearance_layers else lf
            self._add(f"appear.{i}.w", _siren_init(rng, lf, in_dim, self.dtype,
                                                   first=False, divisor=cfg.freq_offset))
            self._add(f"appear.{i}.b", np.zeros(lf))

        xavier = np.sqrt(6.0 / (lf + 1))
        self._add("density.w", rng.uniform(-xavier, xavier, (1, lf)))
        self._add("density.b", np.zeros(1))
        xavier = np.sqrt(6.0 / (2 * lf))
        self._add("feature.w", rng.uniform(-xavier, xavier, (lf, lf)))
        self._add("feature.b", np.zeros(lf))

        ch_in = lf
        gain = 2.0 / (1.0 + 0.2 ** 2)
        for i in range(cfg.upsample_stages):
            ch_out = cfg.decoder_channels
            std = np.sqrt(gain / (ch_in * 9))
            self._add(f"dec.{i}.w", rng.normal(0.0, std, (ch_out, ch_in, 3, 3)))
            self._add(f"dec.{i}.b", np.zeros(ch_out))
            ch_in = ch_out
        std = np.sqrt(gain / ch_in)
        self._add("dec.out.w", rng.normal(0.0, std, (3, ch_in, 1, 1)))
        self._add("dec.out.b", np.zeros(3))

    def _build_mapping(self, rng, prefix, in_dim, n_pairs):
        cfg = self.cfg
        hidden = cfg.mapping_hidden
        self._add(f"{prefix}.0.w", _relu_linear_init(rng, hidden, in_dim, self.dtype))
        self._add(f"{prefix}.0.b", np.zeros(hidden))
        self._add(f"{prefix}.1.w", _relu_linear_init(rng, hidden, hidden, self.dtype))
        self._add(f"{prefix}.1.b", np.zeros(hidden))
        out_dim = n_pairs * 2 * cfg.feature_dim
        self._add(f"{prefix}.head.w",
                  _relu_linear_init(rng, out_dim, hidden, self.dtype, gain=1.0,
                                    head_scale=0.25))
        self._add(f"{prefix}.head.b", np.zeros(out_dim))

    # -- helpers -------------------------------------------------------------

    def _as_tensor(self, value, batch: bool = False) -> Tensor:
        if isinstance(value, Tensor):
            return value
        arr = np.asarray(value, dtype=self.dtype)
        if batch and arr.ndim == 1:
            arr = arr[None, :]
        return Tensor(arr)

    def _linear(self, x: Tensor, prefix: str) -> Tensor:
        w, b = self.params[f"{prefix}.w"], self.params[f"{prefix}.b"]
        lead = x.shape[:-1]
        flat = T.reshape(x, (-1, x.shape[-1])) if x.ndim > 2 else x
        out = T.add(T.matmul(flat, T.transpose(w)), b)
        if x.ndim > 2:
            out = T.reshape(out, lead + (w.shape[0],))
        return out

    def _mapping_forward(self, prefix: str, inp: Tensor, n_pairs: int) -> FilmParams:
        h = T.leaky_relu(self._linear(inp, f"{prefix}.0"), slope=0.0)
        h = T.leaky_relu(self._linear(h, f"{prefix}.1"), slope=0.0)
        raw = self._linear(h, f"{prefix}.head")
        lf = self.cfg.feature_dim
        offset = T.constant(np.array(self.cfg.freq_offset, dtype=self.dtype))
        pairs = []
        for i in range(n_pairs):
            ghat = T.slice_axis(raw, 1, i * 2 * lf, i * 2 * lf + lf)
            beta = T.slice_axis(raw, 1, i * 2 * lf + lf, (i + 1) * 2 * lf)
            gamma = T.add(T.scale(ghat, self.cfg.freq_scale), offset)
            pairs.append((gamma, beta))
        return FilmParams(pairs)

    # -- mapping networks ----------------------------------------------------

    def mapping_shape(self, c, z_shape) -> FilmParams:
        """(condition, shape code) -> one modulation pair per shape layer."""
        inp = T.concat([self._as_tensor(c, batch=True),
                        self._as_tensor(z_shape, batch=True)], axis=1)
        return self._mapping_forward("map_s", inp, self.cfg.shape_layers)

    def mapping_appearance(self, c, z_appearance) -> FilmParams:
        """(condition, appearance code) -> pairs for the appearance block (+1 for the view layer)."""
        inp = T.concat([self._as_tensor(c, batch=True),
                        self._as_tensor(z_appearance, batch=True)], axis=1)
        return self._mapping_forward("map_a", inp, self.cfg.appearance_layers + 1)

    # -- field blocks ---------------------------------------------------------

    @staticmethod
    def _modulate(film: FilmParams, i: int, batched: bool):
        gamma, beta = film[i]
        if batched:
            gamma = T.reshape(gamma, (gamma.shape[0], 1, gamma.shape[1]))
            beta = T.reshape(beta, (beta.shape[0], 1, beta.shape[1]))
        return gamma, beta

    def shape_block(self, x, film: FilmParams) -> Tensor:
        """Coordinates (B, P, 3) -> shape features (B, P, L_f)."""
        if len(film) != self.cfg.shape_layers:
            raise ValueError(
                f"shape block expects {self.cfg.shape_layers} modulation pairs, got {len(film)}"
            )
        h = self._as_tensor(x)
        for i in range(self.cfg.shape_layers):
            gamma, beta = self._modulate(film, i, batched=h.ndim == 3)
            h = film_siren_layer(h, self.params[f"shape.{i}.w"],
                                 self.params[f"shape.{i}.b"], gamma, beta)
        return h

    def appearance_block(self, h: Tensor, d, film: FilmParams) -> Tensor:
        """Shape features plus ray direction angles -> appearance features.

        The direction (B, P, 2) joins after the first ``appearance_layers``
        sine layers, immediately before the final one.
        """
        if len(film) != self.cfg.appearance_layers + 1:
            raise ValueError(
                f"appearance block expects {self.cfg.appearance_layers + 1} "
                f"modulation pairs, got {len(film)}"
            )
        a = h
        for i in range(self.cfg.appearance_layers):
            gamma, beta = self._modulate(film, i, batched=a.ndim == 3)
            a = film_siren_layer(a, self.params[f"appear.{i}.w"],
                                 self.params[f"appear.{i}.b"], gamma, beta)
        a = T.concat([a, self._as_tensor(d)], axis=a.ndim - 1)
        i = self.cfg.appearance_layers
        gamma, beta = self._modulate(film, i, batched=a.ndim == 3)
        return film_siren_layer(a, self.params[f"appear.{i}.w"],
                                self.params[f"appear.{i}.b"], gamma, beta)

    def feature_fields(self, x, d, c, z_shape, z_appearance):
        """Densities and features at sample points.

        ``x``: (B, P, 3) coordinates, ``d``: (B, P, 2) per-point direction
        angles (shared along each ray).  Returns sigma (B, P) and features
        (B, P, L_f).  Density taps the shape block only, so it is independent
        of the viewing direction and the appearance code by construction.
        """
        film_s = self.mapping_shape(c, z_shape)
        film_a = self.mapping_appearance(c, z_appearance)
        h = self.shape_block(x, film_s)
        sigma = T.softplus(self._linear(h, "density"))
        sigma = T.reshape(sigma, sigma.shape[:-1])
        a = self.appearance_block(h, d, film_a)
        feats = self._linear(a, "feature")
        return sigma, feats

    # -- decoder ---------------------------------------------------------------

    def decode(self, feature_map) -> Tensor:
        """Feature grid (B, H_V, W_V, L_f) -> image (B, H, W, 3) in [0, 1]."""
        f = self._as_tensor(feature_map)
        squeeze = f.ndim == 3
        if squeeze:
            f = T.reshape(f, (1,) + f.shape)
        if f.shape[1] != self.cfg.grid_size or f.shape[3] != self.cfg.feature_dim:
            raise T.ShapeError(
                f"decode: expected (B, {self.cfg.grid_size}, {self.cfg.grid_size}, "
                f"{self.cfg.feature_dim}), got {f.shape}"
            )
        h = T.transpose(f, (0, 3, 1, 2))
        for i in range(self.cfg.upsample_stages):
            h = T.upsample_nearest(h, 2)
            h = T.conv2d(h, self.params[f"dec.{i}.w"], self.params[f"dec.{i}.b"],
                         stride=1, pad=1)
            h = T.leaky_relu(h, slope=0.2)
        h = T.conv2d(h, self.params["dec.out.w"], self.params["dec.out.b"])
        img = T.transpose(T.sigmoid(h), (0, 2, 3, 1))
        if squeeze:
            img = T.reshape(img, img.shape[1:])
        return img

    # -- end-to-end -------------------------------------------------------------

    def sample_geometry(self, poses, rng: np.random.Generator):
        """Stratified sample coordinates, per-point direction angles, spacings.

        Returns arrays of shape (B, R*J, 3), (B, R*J, 2), (B, R, J); exposed
        so a caller can evaluate several latent sets on identical geometry.
        """
        cfg = self.cfg
        points, angles, deltas = [], [], []
        for pose in poses:
            rays = cam.generate_rays(pose, cfg.fov, cfg.grid_size, cfg.grid_size,
                                     cfg.near, cfg.far)
            samples = cam.stratified_sample(rays, cfg.samples_per_ray, rng)
            points.append(samples.points.reshape(-1, 3))
            angles.append(np.repeat(samples.dir_angles, cfg.samples_per_ray, axis=0))
            deltas.append(samples.deltas)
        return (np.stack(points).astype(self.dtype),
                np.stack(angles).astype(self.dtype),
                np.stack(deltas).astype(self.dtype))

    def generate_batch(self, poses, c, z_shape, z_appearance,
                       rng: np.random.Generator, geometry=None) -> Tensor:
        """Differentiable batched generation: one pose + latent row per image."""
        cfg = self.cfg
        b = len(poses)
        x, d, dl = geometry if geometry is not None else self.sample_geometry(poses, rng)

        sigma, feats = self.feature_fields(x, d, c, z_shape, z_appearance)
        r = cfg.grid_size * cfg.grid_size
        sigma = T.reshape(sigma, (b, r, cfg.samples_per_ray))
        feats = T.reshape(feats, (b, r, cfg.samples_per_ray, cfg.feature_dim))
        fmap = volume_render(sigma, feats, dl)
        fmap = T.reshape(fmap, (b, cfg.grid_size, cfg.grid_size, cfg.feature_dim))
        return self.decode(fmap)

    def generate(self, pose: cam.CameraPose, c, codes,
                 rng: np.random.Generator) -> np.ndarray:
        """Render one image (H, W, 3) without building a gradient graph."""
        with T.no_grad():
            img = self.generate_batch([pose], np.asarray(c)[None, :],
                                      np.asarray(codes.shape)[None, :],
                                      np.asarray(codes.appearance)[None, :], rng)
        return img.data[0]
