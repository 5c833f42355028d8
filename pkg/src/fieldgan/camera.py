"""Camera pose sampling, pinhole ray generation, and stratified depth sampling.

Poses live on the unit view sphere: a rotation (azimuth) angle in [-pi, pi]
and an elevation (polar) angle in [0, pi], radius fixed at 1.  The camera
always looks at the origin with world +z as the up reference (+x fallback at
the poles).  Rays are cast through feature-grid pixel centers; depths are
stratified into equal bins over [near, far].

All functions are pure; randomized ones take an explicit numpy Generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_FOV = 0.6
DEFAULT_NEAR = 0.5
DEFAULT_FAR = 1.5


def wrap_angle(theta):
    """Wrap angles to [-pi, pi)."""
    return (np.asarray(theta) + np.pi) % (2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class CameraPose:
    """View-sphere pose: fixed unit radius, rotation and elevation angles."""

    radius: float = 1.0
    rotation: float = 0.0
    elevation: float = np.pi / 2

    def __post_init__(self):
        if self.radius != 1.0:
            raise ValueError(f"camera radius is fixed at 1.0, got {self.radius}")
        if not (0.0 <= self.elevation <= np.pi):
            raise ValueError(f"elevation must lie in [0, pi], got {self.elevation}")
        object.__setattr__(self, "rotation", float(wrap_angle(self.rotation)))


@dataclass(frozen=True)
class PosePrior:
    """Uniform sampling ranges for the two pose angles.

    The default rotation band is centered at pi/2 rather than 0: the pose
    heads regress rotation through a sigmoid scaled to [0, 2pi], and a prior
    straddling 0 would place its center exactly on the 0 == 2pi seam of that
    parametrization, making the regression target discontinuous mid-prior.
    The band keeps the rotation range much wider than the elevation range.
    """

    rotation_min: float = np.pi / 4
    rotation_max: float = 3 * np.pi / 4
    elevation_min: float = np.pi / 2 - 0.15
    elevation_max: float = np.pi / 2 + 0.15

    def __post_init__(self):
        if self.rotation_min > self.rotation_max or self.elevation_min > self.elevation_max:
            raise ValueError(f"empty pose range: {self}")
        if self.elevation_min < 0 or self.elevation_max > np.pi:
            raise ValueError(f"elevation range outside [0, pi]: {self}")
        if self.rotation_min < -np.pi or self.rotation_max > np.pi:
            raise ValueError(f"rotation range outside [-pi, pi]: {self}")


@dataclass(frozen=True)
class RayBundle:
    """One ray per feature-grid pixel, row-major."""

    origins: np.ndarray      # (R, 3)
    directions: np.ndarray   # (R, 3), unit norm
    near: float
    far: float


@dataclass(frozen=True)
class RaySamples:
    """Stratified per-ray depth samples."""

    points: np.ndarray       # (R, J, 3)
    dir_angles: np.ndarray   # (R, 2) azimuth/elevation of the ray direction
    deltas: np.ndarray       # (R, J), positive spacings


def sample_pose(prior: PosePrior, rng: np.random.Generator) -> CameraPose:
    """Draw a pose uniformly from the prior ranges (radius stays 1)."""
    rot = rng.uniform(prior.rotation_min, prior.rotation_max)
    elev = rng.uniform(prior.elevation_min, prior.elevation_max)
    return CameraPose(1.0, rot, elev)


def pose_to_camera(pose: CameraPose):
    """Camera position and orthonormal (right, up, forward) basis.

    The camera sits at spherical coordinates (rotation, elevation) on the unit
    sphere and looks at the origin.  Near the poles, where the viewing axis is
    parallel to world +z, the up reference falls back to +x.
    """
    se, ce = np.sin(pose.elevation), np.cos(pose.elevation)
    sr, cr = np.sin(pose.rotation), np.cos(pose.rotation)
    position = pose.radius * np.array([se * cr, se * sr, ce])
    forward = -position / np.linalg.norm(position)
    world_up = np.array([0.0, 0.0, 1.0])
    if abs(forward @ world_up) > 1.0 - 1e-9:
        world_up = np.array([1.0, 0.0, 0.0])
    right = np.cross(forward, world_up)
    right /= np.linalg.norm(right)
    up = np.cross(right, forward)
    return position, right, up, forward


def generate_rays(pose: CameraPose, fov: float = DEFAULT_FOV,
                  grid_h: int = 16, grid_w: int = 16,
                  near: float = DEFAULT_NEAR, far: float = DEFAULT_FAR) -> RayBundle:
    """Pinhole rays through pixel centers of a grid_h x grid_w feature grid."""
    if not 0.0 < fov < np.pi:
        raise ValueError(f"fov must lie in (0, pi), got {fov}")
    if near >= far:
        raise ValueError(f"near must be < far, got {near} >= {far}")
    position, right, up, forward = pose_to_camera(pose)
    half = np.tan(fov / 2.0)
    # Pixel centers; row 0 is the top of the image.
    us = (2.0 * (np.arange(grid_w) + 0.5) / grid_w - 1.0) * half
    vs = (1.0 - 2.0 * (np.arange(grid_h) + 0.5) / grid_h) * half
    uu, vv = np.meshgrid(us, vs)
    dirs = (forward[None, None]
            + uu[..., None] * right[None, None]
            + vv[..., None] * up[None, None])
    dirs = dirs.reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(position, dirs.shape).copy()
    return RayBundle(origins=origins, directions=dirs, near=float(near), far=float(far))


def direction_to_angles(directions: np.ndarray) -> np.ndarray:
    """(azimuth, elevation) of unit direction vectors; inverse of angles_to_direction."""
    d = np.asarray(directions)
    azimuth = np.arctan2(d[..., 1], d[..., 0])
    elevation = np.arccos(np.clip(d[..., 2], -1.0, 1.0))
    return np.stack([azimuth, elevation], axis=-1)


def angles_to_direction(angles: np.ndarray) -> np.ndarray:
    a = np.asarray(angles)
    az, el = a[..., 0], a[..., 1]
    return np.stack([np.sin(el) * np.cos(az), np.sin(el) * np.sin(az), np.cos(el)], axis=-1)


def stratified_sample(rays: RayBundle, depth_count: int, rng: np.random.Generator) -> RaySamples:
    """One uniform depth per equal [near, far] bin, J bins per ray.

    Spacings are the forward differences between consecutive depths; the last
    sample's spacing extends to the far plane so all J samples keep a positive
    weight in the renderer.
    """
    if depth_count < 1:
        raise ValueError(f"depth_count must be >= 1, got {depth_count}")
    n_rays = rays.origins.shape[0]
    bin_width = (rays.far - rays.near) / depth_count
    jitter = rng.uniform(0.0, 1.0, size=(n_rays, depth_count))
    depths = rays.near + (np.arange(depth_count) + jitter) * bin_width
    deltas = np.empty_like(depths)
    deltas[:, :-1] = np.diff(depths, axis=1)
    deltas[:, -1] = rays.far - depths[:, -1]
    points = rays.origins[:, None, :] + depths[..., None] * rays.directions[:, None, :]
    return RaySamples(points=points,
                      dir_angles=direction_to_angles(rays.directions),
                      deltas=deltas)
