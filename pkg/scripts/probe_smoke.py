"""Probe run for the smoke-training acceptance stats (not part of the package)."""
import sys
import time

import numpy as np

sys.path.insert(0, "src")
from fieldgan import camera as cam
from fieldgan import tensor as T
from fieldgan import training as tr


def disc_stats(state, n=32, seed=99):
    cfg = state.config
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, seed]))
    idx = rng.integers(0, len(state.dataset), size=n)
    records = [state.dataset[i] for i in idx]
    reals = np.stack([r.image for r in records]).astype(cfg.np_dtype())
    c = np.stack([state.encodings[r.scene_id] for r in records]).astype(cfg.np_dtype())
    zs = rng.standard_normal((n, cfg.shape_noise_dim)).astype(cfg.np_dtype())
    za = rng.standard_normal((n, cfg.appearance_noise_dim)).astype(cfg.np_dtype())
    e_real = np.concatenate([c, zs, za], axis=1)
    prior = cfg.pose_prior()
    poses = [cam.sample_pose(prior, rng) for _ in range(n)]
    zs_f = rng.standard_normal((n, cfg.shape_noise_dim)).astype(cfg.np_dtype())
    za_f = rng.standard_normal((n, cfg.appearance_noise_dim)).astype(cfg.np_dtype())
    with T.no_grad():
        fakes = state.generator.generate_batch(poses, c, zs_f, za_f, rng)
        e_fake = np.concatenate([c, zs_f, za_f], axis=1)
        fr = state.discriminator.extract_features(reals)
        lr = state.discriminator.match_logit(fr, e_real).data
        ff = state.discriminator.extract_features(fakes)
        lf = state.discriminator.match_logit(ff, e_fake).data
        pose_pred = state.discriminator.estimate_pose(ff).data
    gt = np.array([[p.rotation, p.elevation] for p in poses])
    acc = 0.5 * ((lr > 0).mean() + (lf < 0).mean())
    wrap = lambda x: (x + np.pi) % (2 * np.pi) - np.pi
    pose_err = np.abs(wrap(pose_pred - gt)).mean()
    return acc, pose_err


seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
cfg = tr.TrainConfig(seed=seed, steps=500)
t0 = time.time()
state = tr.build_state(cfg)
for step in range(1, cfg.steps + 1):
    d = tr.train_discriminator_step(state)
    g = tr.train_generator_step(state)
    state.step = step
    if step % 100 == 0 or step == 1:
        acc, perr = disc_stats(state)
        print(f"step {step:4d} t={time.time()-t0:6.1f}s loss_d={d['loss_d']:.3f} "
              f"loss_g={g['loss_g']:.3f} div={g['l_div']:.4f} pose={g['l_pose']:.4f} "
              f"pen={d['penalty']:.3f} | acc={acc:.3f} pose_err={perr:.3f}", flush=True)
acc, perr = disc_stats(state)
print(f"FINAL seed={seed}: acc={acc:.3f} pose_err={perr:.3f} total={time.time()-t0:.0f}s", flush=True)
