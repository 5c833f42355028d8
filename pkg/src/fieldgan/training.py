"""Alternating adversarial training with Adam, metrics logging, checkpointing.

Each step runs one discriminator update (real/mismatch/fake terms, the
matching-aware gradient penalty, and pose reconstruction on fresh fakes)
followed by one generator update (non-saturating adversarial term on a
generated pair sharing pose and condition, minus the weighted diversity term,
plus the weighted pose penalty between the pair's estimated poses).  The two
generations of a pair share ray geometry, so forcing identical noise codes
reproduces bit-identical images.

Determinism contract: (config, seed) fixes every drawn number.  The master
seed spawns independent streams for dataset, generator init, discriminator
init, and the training stream; in-loop metrics use throwaway generators
derived from (seed, step) so they cost nothing on resume.  Checkpoints carry
weights, optimizer moments, and the training rng state, and resuming
reproduces the continued loss log bit-exactly.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

import numpy as np

from . import camera as cam
from . import checkpoint as ckpt
from . import losses as L
from . import synthdata as syn
from . import tensor as T
from .conditions import CONDITION_KINDS, ToyEncoder, zero_noise
from .discriminator import Discriminator, DiscriminatorConfig
from .generator import Generator, GeneratorConfig
from .optim import Adam

ENCODER_SEED = 0  # the condition embedding space is shared across all runs

METRIC_COLUMNS = ("step", "loss_d", "loss_g", "l_div", "l_pose",
                  "pose_std_r", "pose_std_e", "diversity")


@dataclass(frozen=True)
class TrainConfig:
    """Flat, file-round-trippable training configuration."""

    # model dimensions
    condition_dim: int = 32
    shape_noise_dim: int = 32
    appearance_noise_dim: int = 32
    feature_dim: int = 32
    shape_layers: int = 4
    appearance_layers: int = 2
    mapping_hidden: int = 64
    feature_grid: int = 16
    image_size: int = 64
    samples_per_ray: int = 12
    decoder_channels: int = 16
    disc_base_channels: int = 24
    disc_max_channels: int = 96
    disc_head_hidden: int = 96
    # loss weights and ablation switches
    lambda_div: float = 1.0
    lambda_pose: float = 1.0
    penalty_k: float = 2.0
    penalty_p: float = 6.0
    enable_div: bool = True
    enable_pose_penalty: bool = True
    # optimizer
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.9
    adam_eps: float = 1e-8
    # pose prior and camera
    rotation_min: float = float(np.pi / 4)
    rotation_max: float = float(3 * np.pi / 4)
    elevation_min: float = float(np.pi / 2 - 0.15)
    elevation_max: float = float(np.pi / 2 + 0.15)
    fov: float = 0.6
    near: float = 0.5
    far: float = 1.5
    # dataset
    n_scenes: int = 16
    views_per_scene: int = 4
    batch_size: int = 8
    condition_type: str = "gray"
    # run control
    steps: int = 500
    seed: int = 0
    metric_every: int = 100
    metric_samples: int = 8
    checkpoint_every: int = 250
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("condition_dim", "shape_noise_dim", "appearance_noise_dim",
                     "feature_dim", "shape_layers", "appearance_layers",
                     "mapping_hidden", "feature_grid", "image_size",
                     "samples_per_ray", "decoder_channels", "disc_base_channels",
                     "disc_max_channels", "disc_head_hidden", "n_scenes",
                     "views_per_scene", "metric_every", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (mismatch shuffling needs it)")
        if self.metric_samples < 2:
            raise ValueError("metric_samples must be >= 2")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.condition_type not in CONDITION_KINDS:
            raise ValueError(f"condition_type must be one of {CONDITION_KINDS}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if self.image_size % 16:
            raise ValueError("image_size must be divisible by 16 (low-res conditions)")
        # delegate ratio/band validation
        self.generator_config()
        self.pose_prior()

    # -- derived views -------------------------------------------------------

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            condition_dim=self.condition_dim,
            shape_noise_dim=self.shape_noise_dim,
            appearance_noise_dim=self.appearance_noise_dim,
            feature_dim=self.feature_dim,
            shape_layers=self.shape_layers,
            appearance_layers=self.appearance_layers,
            mapping_hidden=self.mapping_hidden,
            grid_size=self.feature_grid,
            image_size=self.image_size,
            samples_per_ray=self.samples_per_ray,
            decoder_channels=self.decoder_channels,
            fov=self.fov, near=self.near, far=self.far,
        )

    def discriminator_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(
            resolution=self.image_size,
            matching_dim=self.condition_dim + self.shape_noise_dim + self.appearance_noise_dim,
            base_channels=self.disc_base_channels,
            max_channels=self.disc_max_channels,
            head_hidden=self.disc_head_hidden,
        )

    def pose_prior(self) -> cam.PosePrior:
        return cam.PosePrior(self.rotation_min, self.rotation_max,
                             self.elevation_min, self.elevation_max)

    def loss_weights(self) -> L.LossWeights:
        return L.LossWeights(
            lambda_div=self.lambda_div if self.enable_div else 0.0,
            lambda_pose=self.lambda_pose if self.enable_pose_penalty else 0.0,
            penalty_k=self.penalty_k, penalty_p=self.penalty_p,
        )

    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    def to_file(self, path: str) -> None:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name}={value}")
        payload = "\n".join(lines) + "\n"
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(payload)
        os.replace(tmp, path)

    @classmethod
    def from_file(cls, path: str) -> "TrainConfig":
        """Parse a key=value file; unknown keys are rejected, missing keys default."""
        fields = {f.name: f for f in dataclasses.fields(cls)}
        values: dict = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key, sep, raw = line.partition("=")
                key, raw = key.strip(), raw.strip()
                if not sep:
                    raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
                if key not in fields:
                    raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
                ftype = fields[key].type
                if ftype == "bool":
                    if raw not in ("true", "false"):
                        raise ValueError(f"{path}:{lineno}: {key} must be true or false")
                    values[key] = raw == "true"
                elif ftype == "int":
                    values[key] = int(raw)
                elif ftype == "float":
                    values[key] = float(raw)
                else:
                    values[key] = raw
        return cls(**values)


@dataclass
class TrainerState:
    config: TrainConfig
    generator: Generator
    discriminator: Discriminator
    adam_g: Adam
    adam_d: Adam
    dataset: list
    encoder: ToyEncoder
    encodings: dict[int, np.ndarray]
    train_rng: np.random.Generator
    step: int = 0


@dataclass
class TrainResult:
    state: TrainerState
    metric_rows: list[str]
    checkpoint_path: str | None


def build_state(config: TrainConfig) -> TrainerState:
    data_seed, g_seed, d_seed, train_seed = np.random.SeedSequence(config.seed).spawn(4)
    dataset = syn.make_dataset(config.n_scenes, config.views_per_scene,
                               np.random.default_rng(data_seed),
                               image_size=config.image_size,
                               prior=config.pose_prior(), fov=config.fov)
    encoder = ToyEncoder(config.condition_dim, seed=ENCODER_SEED)
    encodings: dict[int, np.ndarray] = {}
    for rec in dataset:
        if rec.scene_id not in encodings:
            encodings[rec.scene_id] = encoder.encode(rec.conditions[config.condition_type])
    generator = Generator(config.generator_config(),
                          np.random.default_rng(g_seed), dtype=config.np_dtype())
    discriminator = Discriminator(config.discriminator_config(),
                                  np.random.default_rng(d_seed), dtype=config.np_dtype())
    return TrainerState(
        config=config, generator=generator, discriminator=discriminator,
        adam_g=Adam(generator.params, lr=config.lr_g, beta1=config.beta1,
                    beta2=config.beta2, eps=config.adam_eps),
        adam_d=Adam(discriminator.params, lr=config.lr_d, beta1=config.beta1,
                    beta2=config.beta2, eps=config.adam_eps),
        dataset=dataset, encoder=encoder, encodings=encodings,
        train_rng=np.random.default_rng(train_seed),
    )


def _draw_latents(state: TrainerState, n: int):
    cfg = state.config
    zs = state.train_rng.standard_normal((n, cfg.shape_noise_dim))
    za = state.train_rng.standard_normal((n, cfg.appearance_noise_dim))
    return zs.astype(cfg.np_dtype()), za.astype(cfg.np_dtype())


def _draw_real_batch(state: TrainerState):
    cfg = state.config
    idx = state.train_rng.integers(0, len(state.dataset), size=cfg.batch_size)
    records = [state.dataset[i] for i in idx]
    images = np.stack([r.image for r in records]).astype(cfg.np_dtype())
    c = np.stack([state.encodings[r.scene_id] for r in records]).astype(cfg.np_dtype())
    return images, c


def _draw_poses(state: TrainerState, n: int):
    prior = state.config.pose_prior()
    return [cam.sample_pose(prior, state.train_rng) for _ in range(n)]


def train_discriminator_step(state: TrainerState) -> dict[str, float]:
    """One Adam update of the discriminator; the generator is untouched."""
    cfg = state.config
    d = state.discriminator
    g = state.generator

    real_images, c = _draw_real_batch(state)
    zs, za = _draw_latents(state, cfg.batch_size)
    e_match = np.concatenate([c, zs, za], axis=1)
    e_mismatch = np.roll(e_match, 1, axis=0)  # cyclic shift: derangement for B >= 2

    fake_poses = _draw_poses(state, cfg.batch_size)
    zs_f, za_f = _draw_latents(state, cfg.batch_size)
    with T.no_grad():
        fakes = g.generate_batch(fake_poses, c, zs_f, za_f, state.train_rng)
    e_fake = np.concatenate([c, zs_f, za_f], axis=1)

    feats_real = d.extract_features(real_images)
    logit_real = d.match_logit(feats_real, e_match)
    logit_mis = d.match_logit(feats_real, e_mismatch)
    feats_fake = d.extract_features(fakes.detach())
    logit_fake = d.match_logit(feats_fake, e_fake)
    pose_pred = d.estimate_pose(feats_fake)

    if cfg.penalty_k > 0:
        d_fn = lambda img, e: d.match_logit(d.extract_features(img), e)
        penalty = L.matching_gradient_penalty(d_fn, real_images, e_match,
                                              cfg.penalty_k, cfg.penalty_p)
    else:
        penalty = 0.0
    adv = L.adversarial_loss_discriminator(logit_real, logit_mis, logit_fake, penalty)
    gt = np.array([[p.rotation, p.elevation] for p in fake_poses])
    pose_loss = L.pose_reconstruction_discriminator(pose_pred, gt)
    total = T.add(adv, pose_loss)

    T.zero_grad(d.params.values())
    T.zero_grad(g.params.values())
    T.backward(total)
    state.adam_d.step()
    return {
        "loss_d": total.item(),
        "loss_d_adv": adv.item(),
        "loss_d_pose": pose_loss.item(),
        "penalty": penalty.item() if isinstance(penalty, T.Tensor) else 0.0,
        "logit_real": float(logit_real.data.mean()),
        "logit_fake": float(logit_fake.data.mean()),
    }


def train_generator_step(state: TrainerState) -> dict[str, float]:
    """One Adam update of the generator; the discriminator is untouched.

    Generates a pair sharing (pose, condition, ray geometry) with independent
    noise, so the diversity and pose-penalty terms compare pure style changes.
    """
    cfg = state.config
    d = state.discriminator
    g = state.generator
    b = cfg.batch_size

    _, c = _draw_real_batch(state)
    poses = _draw_poses(state, b)
    zs1, za1 = _draw_latents(state, b)
    zs2, za2 = _draw_latents(state, b)

    x, dirs, deltas = g.sample_geometry(poses, state.train_rng)
    geometry = (np.concatenate([x, x]), np.concatenate([dirs, dirs]),
                np.concatenate([deltas, deltas]))
    c2 = np.concatenate([c, c])
    zs = np.concatenate([zs1, zs2])
    za = np.concatenate([za1, za2])
    images = g.generate_batch(poses + poses, c2, zs, za, state.train_rng,
                              geometry=geometry)

    e_all = np.concatenate([c2, zs, za], axis=1)
    feats = d.extract_features(images)
    logits = d.match_logit(feats, e_all)
    pose_pred = d.estimate_pose(feats)

    adv = L.adversarial_loss_generator(logits)
    img1 = T.slice_axis(images, 0, 0, b)
    img2 = T.slice_axis(images, 0, b, 2 * b)
    div = L.diversity_loss(img1, img2)
    pose_pen = L.pose_penalty_generator(T.slice_axis(pose_pred, 0, 0, b),
                                        T.slice_axis(pose_pred, 0, b, 2 * b))
    total = L.total_generator_loss(adv, div, pose_pen, cfg.loss_weights())

    T.zero_grad(g.params.values())
    T.zero_grad(d.params.values())
    T.backward(total)
    state.adam_g.step()
    return {
        "loss_g": total.item(),
        "loss_g_adv": adv.item(),
        "l_div": div.item(),
        "l_pose": pose_pen.item(),
    }


def _canonical_pose(cfg: TrainConfig) -> cam.CameraPose:
    return cam.CameraPose(1.0, 0.5 * (cfg.rotation_min + cfg.rotation_max),
                          0.5 * (cfg.elevation_min + cfg.elevation_max))


def eval_sampler(state: TrainerState, pose: cam.CameraPose | None = None,
                 scene_id: int = 0):
    """Closure rendering one image at a fixed (pose, condition) per rng draw."""
    cfg = state.config
    pose = pose or _canonical_pose(cfg)
    c = state.encodings[scene_id]

    def sample(rng: np.random.Generator) -> np.ndarray:
        zs = rng.standard_normal(cfg.shape_noise_dim).astype(cfg.np_dtype())
        za = rng.standard_normal(cfg.appearance_noise_dim).astype(cfg.np_dtype())
        with T.no_grad():
            img = state.generator.generate_batch(
                [pose], c[None].astype(cfg.np_dtype()), zs[None], za[None], rng)
        return img.data[0]

    return sample


def _inloop_metrics(state: TrainerState) -> tuple[float, float, float]:
    """Pose dispersion (via the discriminator's own pose head) and diversity."""
    cfg = state.config
    d = state.discriminator

    def head_estimate(image: np.ndarray) -> np.ndarray:
        with T.no_grad():
            feats = d.extract_features(image[None].astype(cfg.np_dtype()))
            return d.estimate_pose(feats).data[0].astype(np.float64)

    sampler = eval_sampler(state)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, state.step]))
    std_r, std_e = syn.pose_consistency_std(sampler, head_estimate,
                                            cfg.metric_samples, rng)
    diversity = syn.diversity_score(sampler, cfg.metric_samples, rng)
    return std_r, std_e, diversity


def _format_row(step: int, d_losses: dict, g_losses: dict,
                metrics: tuple[float, float, float] | None) -> str:
    cells = [str(step), repr(d_losses["loss_d"]), repr(g_losses["loss_g"]),
             repr(g_losses["l_div"]), repr(g_losses["l_pose"])]
    if metrics is None:
        cells += ["", "", ""]
    else:
        cells += [repr(metrics[0]), repr(metrics[1]), repr(metrics[2])]
    return ",".join(cells)


def _checkpoint_tensors(state: TrainerState) -> dict[str, np.ndarray]:
    tensors = {}
    for name, p in state.generator.params.items():
        tensors[f"g.{name}"] = p.data
    for name, p in state.discriminator.params.items():
        tensors[f"d.{name}"] = p.data
    tensors.update(state.adam_g.state_tensors("adam_g"))
    tensors.update(state.adam_d.state_tensors("adam_d"))
    return tensors


def save_state(state: TrainerState, path: str) -> None:
    ckpt.save_checkpoint(
        path, state.step, state.config.to_dict(),
        state.train_rng.bit_generator.state,
        {"adam_g_t": state.adam_g.t, "adam_d_t": state.adam_d.t},
        _checkpoint_tensors(state),
    )


def load_state(path: str) -> TrainerState:
    """Rebuild a trainer from a checkpoint; resumes bit-exactly."""
    loaded = ckpt.load_checkpoint(path)
    config = TrainConfig.from_dict(loaded.config)
    state = build_state(config)
    ckpt.restore_params(state.generator.params, loaded.tensors, "g")
    ckpt.restore_params(state.discriminator.params, loaded.tensors, "d")
    state.adam_g.load_state_tensors("adam_g", loaded.tensors, loaded.counters["adam_g_t"])
    state.adam_d.load_state_tensors("adam_d", loaded.tensors, loaded.counters["adam_d_t"])
    state.train_rng.bit_generator.state = loaded.rng_state
    state.step = loaded.step
    return state


def train_loop(config: TrainConfig, out_dir: str | None = None,
               resume_from: str | None = None) -> TrainResult:
    """Alternating D/G training; returns the final state and the metric log.

    Aborts with diagnostics on any non-finite loss, leaving the last written
    checkpoint intact.  With ``out_dir`` set, writes ``metrics.csv`` at the
    end and overwrites ``checkpoint.bin`` periodically, both atomically.
    """
    if resume_from is not None:
        state = load_state(resume_from)
        if TrainConfig.from_dict({**state.config.to_dict(), "steps": config.steps}) != config:
            raise ckpt.DimensionMismatchError(
                "resume config differs from checkpoint config (only 'steps' may change)"
            )
        state.config = config
    else:
        state = build_state(config)

    rows = [",".join(METRIC_COLUMNS)]
    checkpoint_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        checkpoint_path = os.path.join(out_dir, "checkpoint.bin")
        if resume_from is None:
            save_state(state, checkpoint_path)  # step-0 checkpoint

    while state.step < config.steps:
        state.step += 1
        d_losses = train_discriminator_step(state)
        g_losses = train_generator_step(state)
        values = list(d_losses.values()) + list(g_losses.values())
        if not np.isfinite(values).all():
            raise RuntimeError(
                f"non-finite loss at step {state.step}: d={d_losses} g={g_losses}"
            )
        metrics = None
        if state.step % config.metric_every == 0 or state.step == config.steps:
            metrics = _inloop_metrics(state)
        rows.append(_format_row(state.step, d_losses, g_losses, metrics))
        if out_dir is not None and (state.step % config.checkpoint_every == 0
                                    or state.step == config.steps):
            save_state(state, checkpoint_path)

    if out_dir is not None:
        tmp = os.path.join(out_dir, ".metrics.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write("\n".join(rows) + "\n")
        os.replace(tmp, os.path.join(out_dir, "metrics.csv"))
    return TrainResult(state=state, metric_rows=rows, checkpoint_path=checkpoint_path)
