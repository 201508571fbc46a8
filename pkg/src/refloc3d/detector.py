"""Point-cloud object detector: hierarchical set abstraction over point
features, per-seed votes toward object centers, vote clustering into M
proposals, and box/objectness/semantic heads.

Grouped points enter the shared layers as relative offsets from their
group center concatenated with their channels, so seed features are
invariant to rigid translation of the whole cloud. Box sizes are decoded
from per-class length templates (train-split means) plus a predicted
residual, clamped to keep every decoded box non-degenerate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .features import RigidMotion, points_in_box
from .geometry import Aabb, ball_query, farthest_point_sample
from .nn import MLP, Linear
from .scenes import NUM_SEM_CLASSES

MIN_BOX_LENGTH = 0.01  # meters


@dataclass
class SaStage:
    n_sample: int
    radius: float
    max_k: int
    width: int  # two shared layers at this width


@dataclass
class DetectorConfig:
    sa_stages: list[SaStage] = field(default_factory=lambda: [
        SaStage(n_sample=256, radius=0.5, max_k=16, width=64),
        SaStage(n_sample=64, radius=1.0, max_k=8, width=128),
    ])
    fp_dim: int = 128            # 0 disables the upsampling stage
    vote_hidden: int = 128
    num_proposals: int = 32
    cluster_radius: float = 0.6
    cluster_max_k: int = 8
    cluster_width: int = 128     # final cluster feature size
    head_hidden: int = 128
    near_threshold: float = 0.3  # meters: positive proposal assignment
    far_threshold: float = 0.6   # meters: beyond this is negative

    def __post_init__(self):
        if self.num_proposals < 1:
            raise ValueError("need at least one proposal")
        if not self.sa_stages:
            raise ValueError("need at least one set-abstraction stage")


@dataclass
class BackboneOutput:
    seed_xyz: np.ndarray     # (S, 3)
    seed_features: Tensor    # (S, C)


@dataclass
class VoteSet:
    seed_xyz: np.ndarray
    xyz: Tensor              # (S, 3) = seed positions + predicted offsets
    features: Tensor         # (S, C)


@dataclass
class ProposalSet:
    """Everything the heads emit for M proposals, plus decoded views."""

    centers: Tensor                  # (M, 3)
    objectness_logits: Tensor        # (M, 2)
    semantic_logits: Tensor          # (M, K)
    size_class_logits: Tensor        # (M, K)
    size_residuals: Tensor           # (M, K*3)
    cluster_centers: Tensor          # (M, 3)
    cluster_features: Tensor         # (M, cluster_width)
    boxes: list[Aabb] = field(default_factory=list)
    objectness_mask: np.ndarray = None   # (M,) in {0,1}
    objectness_prob: np.ndarray = None   # (M,) probability of "object"
    semantic_pred: np.ndarray = None     # (M,)

    @property
    def num_proposals(self) -> int:
        return self.centers.shape[0]


@dataclass
class DetectionForward:
    backbone: BackboneOutput
    votes: VoteSet
    proposals: ProposalSet


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


class Detector:
    def __init__(self, in_width: int, config: DetectorConfig, rng: np.random.Generator,
                 num_classes: int = NUM_SEM_CLASSES, dtype=np.float32):
        self.config = config
        self.in_width = in_width
        self.num_classes = num_classes
        self.dtype = dtype

        self.sa_mlps: list[MLP] = []
        prev = in_width
        for stage in config.sa_stages:
            self.sa_mlps.append(MLP([3 + prev, stage.width, stage.width], rng,
                                    relu_last=True, dtype=dtype))
            prev = stage.width
        if config.fp_dim:
            first_w = config.sa_stages[0].width
            self.fp = Linear(first_w + prev, config.fp_dim, rng, dtype)
            seed_dim = config.fp_dim
        else:
            self.fp = None
            seed_dim = prev
        self.seed_dim = seed_dim

        self.vote_hidden = Linear(seed_dim, config.vote_hidden, rng, dtype)
        self.vote_offset = Linear(config.vote_hidden, 3, rng, dtype)
        self.vote_residual = Linear(config.vote_hidden, seed_dim, rng, dtype)

        self.cluster_mlp = MLP([3 + seed_dim, config.cluster_width, config.cluster_width],
                               rng, relu_last=True, dtype=dtype)

        self.head_hidden = Linear(config.cluster_width, config.head_hidden, rng, dtype)
        self.head_objectness = Linear(config.head_hidden, 2, rng, dtype)
        self.head_center = Linear(config.head_hidden, 3, rng, dtype)
        self.head_semantic = Linear(config.head_hidden, num_classes, rng, dtype)
        self.head_size_class = Linear(config.head_hidden, num_classes, rng, dtype)
        self.head_size_residual = Linear(config.head_hidden, num_classes * 3, rng, dtype)

        # Per-class box length templates, filled in from training data.
        self.size_templates = np.ones((num_classes, 3), dtype=np.float32)

    # -- backbone ---------------------------------------------------------

    def extract_seeds(self, points: np.ndarray, rng: np.random.Generator) -> BackboneOutput:
        """Stacked sample+group+pool stages, then one upsampling stage."""
        xyz = np.ascontiguousarray(points[:, :3])
        channels = np.ascontiguousarray(points[:, 3:], dtype=self.dtype)

        stage_xyz: list[np.ndarray] = []
        stage_feat: list[Tensor] = []
        prev_xyz = xyz
        prev_feat: Tensor | None = None  # None = raw channel matrix
        for stage, mlp in zip(self.config.sa_stages, self.sa_mlps):
            if stage.n_sample > prev_xyz.shape[0]:
                raise ValueError(
                    f"stage asks for {stage.n_sample} samples from {prev_xyz.shape[0]} points")
            idx = farthest_point_sample(prev_xyz, stage.n_sample, rng)
            centers = prev_xyz[idx]
            groups = ball_query(prev_xyz, centers, stage.radius, stage.max_k)
            s, k = groups.shape
            rel = (prev_xyz[groups] - centers[:, None, :]).reshape(s * k, 3).astype(self.dtype)
            if prev_feat is None:
                member = ad.constant(np.concatenate(
                    [rel, channels[groups.reshape(-1)]], axis=1))
            else:
                gathered = ad.gather_rows(prev_feat, groups.reshape(-1))
                member = ad.concat([ad.constant(rel), gathered], axis=-1)
            hidden = mlp(member)
            pooled = ad.max_along(ad.reshape(hidden, (s, k, stage.width)), axis=1)
            stage_xyz.append(centers)
            stage_feat.append(pooled)
            prev_xyz, prev_feat = centers, pooled

        if self.fp is None:
            return BackboneOutput(seed_xyz=stage_xyz[-1], seed_features=stage_feat[-1])

        # Nearest-neighbor upsample of the deepest features back to the
        # first stage's positions.
        target_xyz, target_feat = stage_xyz[0], stage_feat[0]
        deep_xyz, deep_feat = stage_xyz[-1], stage_feat[-1]
        d2 = ((target_xyz[:, None, :] - deep_xyz[None, :, :]) ** 2).sum(axis=-1)
        nn_idx = d2.argmin(axis=1)
        up = ad.gather_rows(deep_feat, nn_idx)
        seed_features = ad.relu(self.fp(ad.concat([target_feat, up], axis=-1)))
        return BackboneOutput(seed_xyz=target_xyz, seed_features=seed_features)

    # -- voting -----------------------------------------------------------

    def vote(self, seeds: BackboneOutput) -> VoteSet:
        hidden = ad.relu(self.vote_hidden(seeds.seed_features))
        offset = self.vote_offset(hidden)
        residual = self.vote_residual(hidden)
        xyz = ad.add(ad.constant(seeds.seed_xyz.astype(self.dtype)), offset)
        features = ad.add(seeds.seed_features, residual)
        return VoteSet(seed_xyz=seeds.seed_xyz, xyz=xyz, features=features)

    # -- clustering -------------------------------------------------------

    def cluster_votes(self, votes: VoteSet, rng: np.random.Generator
                      ) -> tuple[Tensor, Tensor]:
        """FPS-select M cluster centers among votes, pool member features."""
        m = self.config.num_proposals
        vote_xyz = votes.xyz.numpy()
        if vote_xyz.shape[0] < m:
            raise ValueError(f"{vote_xyz.shape[0]} votes cannot form {m} clusters")
        cidx = farthest_point_sample(vote_xyz, m, rng)
        centers = ad.gather_rows(votes.xyz, cidx)
        features = self.cluster_features_at(votes, vote_xyz[cidx], centers)
        return centers, features

    def cluster_features_at(self, votes: VoteSet, centers_np: np.ndarray,
                            centers_t: Tensor | None = None) -> Tensor:
        """Pool vote features around given centers (relative coordinates
        concatenated with vote features, shared layers, max over members)."""
        cfg = self.config
        m = centers_np.shape[0]
        groups = ball_query(votes.xyz.numpy(), centers_np, cfg.cluster_radius, cfg.cluster_max_k)
        k = groups.shape[1]
        member_xyz = ad.gather_rows(votes.xyz, groups.reshape(-1))
        if centers_t is None:
            centers_t = ad.constant(centers_np.astype(self.dtype))
        center_rep = ad.gather_rows(centers_t, np.repeat(np.arange(m), k))
        rel = ad.sub(member_xyz, center_rep)
        member_feat = ad.gather_rows(votes.features, groups.reshape(-1))
        hidden = self.cluster_mlp(ad.concat([rel, member_feat], axis=-1))
        return ad.max_along(ad.reshape(hidden, (m, k, cfg.cluster_width)), axis=1)

    # -- proposal heads ---------------------------------------------------

    def propose(self, cluster_centers: Tensor, cluster_features: Tensor) -> ProposalSet:
        hidden = ad.relu(self.head_hidden(cluster_features))
        objectness = self.head_objectness(hidden)
        centers = ad.add(cluster_centers, self.head_center(hidden))
        semantic = self.head_semantic(hidden)
        size_class = self.head_size_class(hidden)
        size_residual = self.head_size_residual(hidden)

        proposals = ProposalSet(
            centers=centers,
            objectness_logits=objectness,
            semantic_logits=semantic,
            size_class_logits=size_class,
            size_residuals=size_residual,
            cluster_centers=cluster_centers,
            cluster_features=cluster_features,
        )
        self._decode(proposals)
        return proposals

    def _decode(self, proposals: ProposalSet) -> None:
        m = proposals.num_proposals
        size_cls = proposals.size_class_logits.numpy().argmax(axis=1)
        residuals = proposals.size_residuals.numpy().reshape(m, self.num_classes, 3)
        chosen = residuals[np.arange(m), size_cls]
        lengths = np.maximum(self.size_templates[size_cls] * (1.0 + chosen), MIN_BOX_LENGTH)
        centers = proposals.centers.numpy()
        proposals.boxes = [Aabb(center=tuple(centers[i]), lengths=tuple(lengths[i]))
                           for i in range(m)]
        objn = proposals.objectness_logits.numpy()
        proposals.objectness_mask = objn.argmax(axis=1).astype(np.int64)
        proposals.objectness_prob = _softmax_rows(objn.astype(np.float64))[:, 1]
        proposals.semantic_pred = proposals.semantic_logits.numpy().argmax(axis=1)

    def forward(self, points: np.ndarray, rng: np.random.Generator) -> DetectionForward:
        seeds = self.extract_seeds(points, rng)
        votes = self.vote(seeds)
        centers, features = self.cluster_votes(votes, rng)
        proposals = self.propose(centers, features)
        return DetectionForward(backbone=seeds, votes=votes, proposals=proposals)

    def named_parameters(self, prefix: str = "detector"):
        for i, mlp in enumerate(self.sa_mlps):
            yield from mlp.named_parameters(f"{prefix}.sa{i}")
        if self.fp is not None:
            yield from self.fp.named_parameters(f"{prefix}.fp")
        yield from self.vote_hidden.named_parameters(f"{prefix}.vote_hidden")
        yield from self.vote_offset.named_parameters(f"{prefix}.vote_offset")
        yield from self.vote_residual.named_parameters(f"{prefix}.vote_residual")
        yield from self.cluster_mlp.named_parameters(f"{prefix}.cluster")
        yield from self.head_hidden.named_parameters(f"{prefix}.head_hidden")
        yield from self.head_objectness.named_parameters(f"{prefix}.head_objectness")
        yield from self.head_center.named_parameters(f"{prefix}.head_center")
        yield from self.head_semantic.named_parameters(f"{prefix}.head_semantic")
        yield from self.head_size_class.named_parameters(f"{prefix}.head_size_class")
        yield from self.head_size_residual.named_parameters(f"{prefix}.head_size_residual")


# ---------------------------------------------------------------------------
# Training-target assignment


@dataclass
class DetectionTargets:
    vote_target: np.ndarray        # (S, 3)
    vote_mask: np.ndarray          # (S,) 1 for seeds inside some box
    objectness_target: np.ndarray  # (M,) in {0,1}
    objectness_weight: np.ndarray  # (M,) 0 marks ignored proposals
    positive_mask: np.ndarray      # (M,)
    center_target: np.ndarray      # (M, 3)
    semantic_target: np.ndarray    # (M,)
    size_class_target: np.ndarray  # (M,)
    size_residual_target: np.ndarray  # (M, 3)


def assign_detection_targets(fwd: DetectionForward, boxes: list[Aabb],
                             sem_classes: np.ndarray, templates: np.ndarray,
                             near: float, far: float,
                             motion: RigidMotion | None = None) -> DetectionTargets:
    """Derive supervision from ground truth in the (possibly augmented)
    sample frame. Box membership is tested in each box's rotated frame so
    augmentation never leaks points out of their objects."""
    if not boxes:
        raise ValueError("cannot assign targets in a scene without objects")
    sem_classes = np.asarray(sem_classes, dtype=np.int64)
    seed_xyz = fwd.backbone.seed_xyz
    s = seed_xyz.shape[0]
    vote_target = seed_xyz.copy()
    vote_mask = np.zeros(s, dtype=np.float64)
    order = np.argsort([b.volume for b in boxes], kind="stable")
    taken = np.zeros(s, dtype=bool)
    for bi in order:
        inside = points_in_box(seed_xyz, boxes[bi], motion) & ~taken
        vote_target[inside] = np.asarray(boxes[bi].center)
        vote_mask[inside] = 1.0
        taken |= inside

    centers = np.stack([np.asarray(b.center) for b in boxes])
    cluster_xyz = fwd.proposals.cluster_centers.numpy()
    d = np.linalg.norm(cluster_xyz[:, None, :] - centers[None, :, :], axis=-1)
    nearest = d.argmin(axis=1)
    nearest_d = d.min(axis=1)
    positive = nearest_d < near
    negative = nearest_d > far
    weight = (positive | negative).astype(np.float64)

    lengths = np.stack([np.asarray(b.lengths) for b in boxes])
    tgt_class = sem_classes[nearest]
    size_residual = lengths[nearest] / templates[tgt_class] - 1.0

    return DetectionTargets(
        vote_target=vote_target,
        vote_mask=vote_mask,
        objectness_target=positive.astype(np.int64),
        objectness_weight=weight,
        positive_mask=positive.astype(np.float64),
        center_target=centers[nearest],
        semantic_target=tgt_class,
        size_class_target=tgt_class,
        size_residual_target=size_residual,
    )


def compute_size_templates(scenes, scene_ids, num_classes: int = NUM_SEM_CLASSES) -> np.ndarray:
    """Per-class mean ground-truth box lengths over the given scenes."""
    sums = np.zeros((num_classes, 3))
    counts = np.zeros(num_classes)
    for sid in scene_ids:
        for obj in scenes[sid].objects:
            sums[obj.sem_class] += np.asarray(obj.box.lengths)
            counts[obj.sem_class] += 1
    seen = counts > 0
    templates = np.ones((num_classes, 3), dtype=np.float32)
    if seen.any():
        global_mean = sums[seen].sum(axis=0) / counts[seen].sum()
        templates[:] = global_mean.astype(np.float32)
        templates[seen] = (sums[seen] / counts[seen, None]).astype(np.float32)
    return templates
