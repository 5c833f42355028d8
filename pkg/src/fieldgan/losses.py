"""Training objectives.

Sign conventions: the adversarial objective is written in the literature in
maximize form over f(u) = log sigmoid(u); here both networks minimize, so the
discriminator loss is the negated sum of its f-terms (softplus forms below)
with the gradient penalty ADDED, and the generator minimizes the
non-saturating softplus(-logit).  Angle losses use 1 - cos(difference)
averaged over the two pose components, which makes them invariant under
adding any multiple of 2*pi to either angle.

The matching-aware gradient penalty differentiates through the gradient-norm
computation, which is the one place the tape's nested differentiation is
exercised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class LossWeights:
    lambda_div: float = 1.0
    lambda_pose: float = 1.0
    penalty_k: float = 2.0
    penalty_p: float = 6.0

    def __post_init__(self):
        if self.lambda_div < 0 or self.lambda_pose < 0 or self.penalty_k < 0:
            raise ValueError(f"loss weights must be nonnegative: {self}")
        if self.penalty_p < 1:
            raise ValueError(f"penalty exponent must be >= 1, got {self.penalty_p}")


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=np.float64))


def f_log_sigmoid(u) -> Tensor:
    """log sigmoid(u) = -log(1 + exp(-u)), via numerically stable softplus."""
    u = _as_tensor(u)
    return T.neg(T.softplus(T.neg(u)))


def diversity_loss(img1, img2) -> Tensor:
    """Mean absolute pixel difference between two generations.

    Mean-normalized so the weight is independent of resolution and batch size.
    """
    a, b = _as_tensor(img1), _as_tensor(img2)
    if a.shape != b.shape:
        raise T.ShapeError(f"diversity_loss: shapes {a.shape} and {b.shape} differ")
    return T.tensor_mean(T.absolute(T.sub(a, b)))


def _cosine_angle_loss(delta: Tensor) -> Tensor:
    one = T.constant(np.array(1.0, dtype=delta.dtype))
    return T.tensor_mean(T.sub(one, T.cos(delta)))


def pose_penalty_generator(pose1, pose2) -> Tensor:
    """1 - cos of the pose-prediction difference, averaged over both angles.

    Zero when the two generations agree on pose, 2 at a per-component pi
    offset, and periodic in 2*pi, so the wrap seam costs nothing.
    """
    p1, p2 = _as_tensor(pose1), _as_tensor(pose2)
    if p1.shape != p2.shape:
        raise T.ShapeError(f"pose_penalty: shapes {p1.shape} and {p2.shape} differ")
    return _cosine_angle_loss(T.sub(p1, p2))


def pose_reconstruction_discriminator(pose_pred, pose_gt) -> Tensor:
    """Cosine reconstruction loss against the pose that rendered the image."""
    pred = _as_tensor(pose_pred)
    gt = pose_gt.detach() if isinstance(pose_gt, Tensor) else Tensor(
        np.asarray(pose_gt, dtype=pred.dtype))
    if pred.shape != gt.shape:
        raise T.ShapeError(f"pose_reconstruction: shapes {pred.shape} and {gt.shape} differ")
    return _cosine_angle_loss(T.sub(pred, gt))


def _per_sample_l2(g: Tensor, batch: int) -> Tensor:
    flat = T.reshape(g, (batch, -1))
    eps = 1e-24 if flat.dtype == np.float64 else 1e-12
    sq = T.tensor_sum(T.mul(flat, flat), axis=1)
    return T.sqrt(T.add(sq, T.constant(np.array(eps, dtype=flat.dtype))))


def matching_gradient_penalty(d_fn, img_real, e_match, k: float, p: float) -> Tensor:
    """k * E[(||grad_I D(I, e)|| + ||grad_e D(I, e)||)^p] at real matched pairs.

    ``d_fn(images, e)`` must return per-sample logits for batched inputs
    (leading batch axis on both).  Fresh leaf tensors are created for the
    image and the matching vector, and their gradients stay on the tape so
    the penalty itself is differentiable w.r.t. the discriminator weights.
    """
    img_arr = img_real.data if isinstance(img_real, Tensor) else np.asarray(img_real)
    e_arr = e_match.data if isinstance(e_match, Tensor) else np.asarray(e_match)
    img = Tensor(img_arr, requires_grad=True)
    e = Tensor(e_arr.astype(img_arr.dtype, copy=False), requires_grad=True)
    batch = img.shape[0]

    logits = d_fn(img, e)
    grad_img, grad_e = T.grad(T.tensor_sum(logits), [img, e], create_graph=True)
    norms = T.add(_per_sample_l2(grad_img, batch), _per_sample_l2(grad_e, batch))
    return T.scale(T.tensor_mean(T.pow_scalar(norms, p)), k)


def adversarial_loss_discriminator(logits_real_match, logits_real_mismatch,
                                   logits_fake_match, penalty) -> Tensor:
    """Minimized discriminator objective (pose reconstruction added by the trainer).

    softplus(-real_match) + softplus(real_mismatch)/2 + softplus(fake)/2 + penalty.
    """
    lrm = _as_tensor(logits_real_match)
    lmis = _as_tensor(logits_real_mismatch)
    lf = _as_tensor(logits_fake_match)
    loss = T.tensor_mean(T.softplus(T.neg(lrm)))
    loss = T.add(loss, T.scale(T.tensor_mean(T.softplus(lmis)), 0.5))
    loss = T.add(loss, T.scale(T.tensor_mean(T.softplus(lf)), 0.5))
    return T.add(loss, _as_tensor(penalty))


def adversarial_loss_generator(logits_fake_match) -> Tensor:
    """Non-saturating generator term: softplus(-logit) on matched fakes."""
    return T.tensor_mean(T.softplus(T.neg(_as_tensor(logits_fake_match))))


def total_generator_loss(adv, div, pose_pen, weights: LossWeights) -> Tensor:
    """adv - lambda_div * diversity + lambda_pose * pose penalty.

    Diversity is maximized, hence the minus sign.
    """
    total = _as_tensor(adv)
    total = T.sub(total, T.scale(_as_tensor(div), weights.lambda_div))
    return T.add(total, T.scale(_as_tensor(pose_pen), weights.lambda_pose))
