"""Per-point feature assembly and training-time augmentation.

Feature rows are laid out as [x y z | r g b | appearance | nx ny nz |
height], with disabled blocks omitted. RGB is rescaled to [0, 1] and
height is measured from the floor level, taken as the 1st percentile of z
so stray low points cannot drag it down.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Aabb
from .scenes import FeatureConfig, Scene

DEG = np.pi / 180.0
MAX_TILT_DEG = 5.0
MAX_SHIFT_M = 0.5


def floor_level(z: np.ndarray) -> float:
    return float(np.percentile(z, 1.0))


def subsample_indices(n: int, n_target: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform subsample to exactly n_target rows, with replacement only
    when the cloud is smaller than the target."""
    if n >= n_target:
        return rng.choice(n, size=n_target, replace=False)
    return rng.choice(n, size=n_target, replace=True)


def assemble_features(scene: Scene, config: FeatureConfig,
                      rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Subsample the scene and build the (n_points, 3 + width) matrix."""
    blocks = _feature_blocks(scene, config)
    idx = subsample_indices(scene.num_points, config.n_points, rng)
    out = np.concatenate([b[idx] for b in blocks], axis=1).astype(dtype)
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite values in assembled features")
    return out


def _feature_blocks(scene: Scene, config: FeatureConfig) -> list[np.ndarray]:
    blocks = [scene.positions]
    if config.use_rgb:
        blocks.append(scene.colors / 255.0)
    if config.use_appearance:
        if scene.appearance is None:
            raise ValueError("appearance channels enabled but missing from scene")
        if scene.appearance.shape[1] != config.appearance_dim:
            raise ValueError(
                f"appearance dim {scene.appearance.shape[1]} != configured {config.appearance_dim}")
        blocks.append(scene.appearance)
    if config.use_normals:
        if scene.normals is None:
            raise ValueError("normals enabled but missing from scene")
        blocks.append(scene.normals)
    if config.use_height:
        z = scene.positions[:, 2]
        blocks.append((z - floor_level(z))[:, None])
    return blocks


def rotation_matrix(tilt_x: float, tilt_y: float, tilt_z: float) -> np.ndarray:
    """R = Rx(a) Ry(b) Rz(c), angles in radians."""
    ca, sa = np.cos(tilt_x), np.sin(tilt_x)
    cb, sb = np.cos(tilt_y), np.sin(tilt_y)
    cc, sc = np.cos(tilt_z), np.sin(tilt_z)
    rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    rz = np.array([[cc, -sc, 0], [sc, cc, 0], [0, 0, 1]])
    return rx @ ry @ rz


@dataclass
class RigidMotion:
    """The sampled augmentation transform, kept so ground-truth membership
    tests can be run in the rotated frame."""

    rotation: np.ndarray     # (3, 3)
    translation: np.ndarray  # (3,)

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.rotation.T + self.translation

    def apply_directions(self, vecs: np.ndarray) -> np.ndarray:
        return vecs @ self.rotation.T

    @classmethod
    def identity(cls) -> "RigidMotion":
        return cls(rotation=np.eye(3), translation=np.zeros(3))


def sample_rigid_motion(rng: np.random.Generator) -> RigidMotion:
    angles = rng.uniform(-MAX_TILT_DEG * DEG, MAX_TILT_DEG * DEG, size=3)
    shift = rng.uniform(-MAX_SHIFT_M, MAX_SHIFT_M, size=3)
    return RigidMotion(rotation=rotation_matrix(*angles), translation=shift)


def augment_points(positions: np.ndarray, normals: np.ndarray | None,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray | None, RigidMotion]:
    """Randomly tilt and shift a cloud; normals rotate but do not shift."""
    motion = sample_rigid_motion(rng)
    out_pos = motion.apply_points(positions)
    out_nrm = motion.apply_directions(normals) if normals is not None else None
    return out_pos, out_nrm, motion


def augment_boxes(boxes: list[Aabb], motion: RigidMotion) -> list[Aabb]:
    """Move box centers with the cloud; extents are left unchanged."""
    return [Aabb(center=tuple(motion.apply_points(np.asarray(b.center))),
                 lengths=b.lengths) for b in boxes]


def augment_sample(features: np.ndarray, config: FeatureConfig,
                   boxes: list[Aabb], rng: np.random.Generator
                   ) -> tuple[np.ndarray, list[Aabb], RigidMotion]:
    """Augment an already assembled feature matrix in a consistent frame.

    The xyz columns are rotated and shifted, normal columns (when present)
    are rotated only, and every other channel (including height, which was
    measured against the original ground) stays as assembled.
    """
    motion = sample_rigid_motion(rng)
    out = features.copy()
    out[:, :3] = motion.apply_points(features[:, :3]).astype(features.dtype)
    if config.use_normals:
        col = 3 + (3 if config.use_rgb else 0) + (config.appearance_dim if config.use_appearance else 0)
        out[:, col:col + 3] = motion.apply_directions(features[:, col:col + 3]).astype(features.dtype)
    return out, augment_boxes(boxes, motion), motion


def points_in_box(points: np.ndarray, box: Aabb, motion: RigidMotion | None = None) -> np.ndarray:
    """Closed-box membership, evaluated in the box's rotated frame when the
    cloud was augmented."""
    pts = np.asarray(points)
    center = np.asarray(box.center)
    if motion is not None:
        pts = (pts - center) @ motion.rotation
        center = np.zeros(3)
    half = np.asarray(box.lengths) / 2.0
    return np.all(np.abs(pts - center) <= half + 1e-12, axis=-1)
