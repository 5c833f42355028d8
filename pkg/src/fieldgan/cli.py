"""Command-line surface: train, render, eval.

``train`` runs the alternating loop and writes metrics.csv plus checkpoints.
``render`` sweeps the rotation prior at a fixed condition and noise and
writes a horizontal film-strip PNG (plus a zero-noise "average" frame on
request).  ``eval`` trains the frozen pose oracle on synthetic data, then
reports pose dispersion and diversity for one or more checkpoints, which is
how the with/without-pose-penalty ablation pair is compared.

All artifacts are written atomically (temp file + rename); user errors exit
with status 1 and a message on stderr, argparse usage errors with status 2.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import camera as cam
from . import synthdata as syn
from . import tensor as T
from .checkpoint import CheckpointError
from .conditions import CONDITION_KINDS, Condition, derive_conditions, zero_noise
from .training import (
    TrainConfig,
    build_state,
    eval_sampler,
    load_state,
    train_loop,
)

EVAL_POSE_SAMPLES = 24
EVAL_DIVERSITY_SAMPLES = 8
ORACLE_SCENES = 96
ORACLE_VIEWS = 4


def _save_png(image: np.ndarray, path: str) -> None:
    from PIL import Image

    quantized = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    tmp = path + ".tmp"
    Image.fromarray(quantized).save(tmp, format="PNG")
    os.replace(tmp, path)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fieldgan",
        description="Condition-driven 3D-aware image synthesis (train / render / eval)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the adversarial training loop")
    p_train.add_argument("--config", help="key=value config file (defaults if omitted)")
    p_train.add_argument("--seed", type=int, help="override the config seed")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--checkpoint", help="resume from this checkpoint")

    p_render = sub.add_parser("render", help="render a rotation-sweep strip")
    p_render.add_argument("--checkpoint", required=True)
    p_render.add_argument("--out", required=True)
    p_render.add_argument("--views", type=int, default=5)
    p_render.add_argument("--condition", choices=CONDITION_KINDS,
                          help="condition variant (default: the training condition)")
    p_render.add_argument("--text", help="text condition (overrides --condition)")
    p_render.add_argument("--seed", type=int, default=0)
    p_render.add_argument("--zero-noise", action="store_true",
                          help="use all-zero noise codes and emit an average frame")

    p_eval = sub.add_parser("eval", help="pose dispersion and diversity of checkpoints")
    p_eval.add_argument("--checkpoint", action="append", required=True,
                        help="checkpoint to evaluate (repeatable)")
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--out", help="also write eval.csv here")
    return parser


def _cmd_train(args) -> int:
    config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    result = train_loop(config, out_dir=args.out, resume_from=args.checkpoint)
    last = result.metric_rows[-1] if len(result.metric_rows) > 1 else "(no steps)"
    print(f"trained {result.state.step} steps; last row: {last}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics: {os.path.join(args.out, 'metrics.csv')}")
    return 0


def _render_condition(config: TrainConfig, args) -> Condition:
    if args.text:
        return Condition("text", text=args.text)
    kind = args.condition or config.condition_type
    scene = syn.sample_scene(np.random.default_rng(args.seed))
    canonical = syn.oracle_render(scene, syn.CANONICAL_POSE,
                                  config.image_size, config.image_size, config.fov)
    return derive_conditions(canonical, syn.scene_text(scene))[kind]


def _cmd_render(args) -> int:
    state = load_state(args.checkpoint)
    config = state.config
    if args.views < 1:
        raise ValueError("--views must be >= 1")
    cond = _render_condition(config, args)
    c = state.encoder.encode(cond).astype(config.np_dtype())

    if args.zero_noise:
        codes = zero_noise(config.shape_noise_dim, config.appearance_noise_dim)
    else:
        noise_rng = np.random.default_rng(np.random.SeedSequence([args.seed, 1]))
        from .conditions import sample_noise
        codes = sample_noise(noise_rng, config.shape_noise_dim,
                             config.appearance_noise_dim)

    elevation = 0.5 * (config.elevation_min + config.elevation_max)
    rotations = np.linspace(config.rotation_min, config.rotation_max, args.views)
    frames = []
    for i, rot in enumerate(rotations):
        pose = cam.CameraPose(1.0, float(rot), elevation)
        frame_rng = np.random.default_rng(np.random.SeedSequence([args.seed, 2, i]))
        frames.append(state.generator.generate(pose, c, codes, frame_rng))
    strip = np.concatenate(frames, axis=1)

    os.makedirs(args.out, exist_ok=True)
    strip_path = os.path.join(args.out, "render_strip.png")
    _save_png(strip, strip_path)
    print(f"strip: {strip_path}")
    if args.zero_noise:
        pose = cam.CameraPose(1.0, 0.5 * (config.rotation_min + config.rotation_max),
                              elevation)
        avg_rng = np.random.default_rng(np.random.SeedSequence([args.seed, 3]))
        average = state.generator.generate(pose, c, codes, avg_rng)
        avg_path = os.path.join(args.out, "average.png")
        _save_png(average, avg_path)
        print(f"average: {avg_path}")
    return 0


def evaluate_checkpoint(state, oracle, seed: int) -> tuple[float, float, float]:
    """Pose-consistency std (rotation, elevation) and diversity for one state."""
    sampler = eval_sampler(state)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    std_r, std_e = syn.pose_consistency_std(sampler, oracle, EVAL_POSE_SAMPLES, rng)
    diversity = syn.diversity_score(
        sampler, EVAL_DIVERSITY_SAMPLES,
        np.random.default_rng(np.random.SeedSequence([seed, 8])))
    return std_r, std_e, diversity


def train_eval_oracle(config: TrainConfig, seed: int):
    """The frozen pose estimator used by eval, trained on fresh synthetic data."""
    data_rng = np.random.default_rng(np.random.SeedSequence([seed, 5]))
    records = syn.make_dataset(ORACLE_SCENES, ORACLE_VIEWS, data_rng,
                               image_size=config.image_size,
                               prior=config.pose_prior(), fov=config.fov)
    return syn.train_pose_oracle(records, np.random.default_rng(
        np.random.SeedSequence([seed, 6])))


def _cmd_eval(args) -> int:
    states = [load_state(path) for path in args.checkpoint]
    oracles: dict[int, object] = {}
    rows = []
    for path, state in zip(args.checkpoint, states):
        size = state.config.image_size
        if size not in oracles:
            oracles[size] = train_eval_oracle(state.config, args.seed)
        std_r, std_e, diversity = evaluate_checkpoint(state, oracles[size], args.seed)
        rows.append((path, std_r, std_e, diversity))

    header = f"{'checkpoint':<40} {'pose_std_rot':>12} {'pose_std_elev':>13} {'diversity':>10}"
    print(header)
    for path, std_r, std_e, diversity in rows:
        print(f"{os.path.basename(path):<40} {std_r:>12.6f} {std_e:>13.6f} {diversity:>10.6f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        lines = ["checkpoint,pose_std_rot,pose_std_elev,diversity"]
        lines += [f"{p},{r!r},{e!r},{d!r}" for p, r, e, d in rows]
        tmp = os.path.join(args.out, ".eval.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp, os.path.join(args.out, "eval.csv"))
        print(f"csv: {os.path.join(args.out, 'eval.csv')}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "render":
            return _cmd_render(args)
        return _cmd_eval(args)
    except (FileNotFoundError, CheckpointError, ValueError, RuntimeError) as exc:
        print(f"fieldgan {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
