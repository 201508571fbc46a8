"""Fusion of proposal features with the description embedding, confidence
scoring, and final box selection.

Each proposal's cluster feature is concatenated with the (expanded)
description embedding, the whole row is zeroed for proposals the detector
marked invalid, and a perceptron maps the masked rows to fused features.
A single linear layer turns those into raw scores, squashed by a softmax
into per-proposal confidences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import Aabb, boxes_to_array, iou3d_matrix, nms
from .nn import MLP, Linear


class NoProposalsError(RuntimeError):
    """The detector kept no valid proposal for this query."""


class FusionScorer:
    """Fusion perceptron plus the single-layer scoring head."""

    def __init__(self, cluster_dim: int, embed_dim: int, rng: np.random.Generator,
                 hidden: int = 128, out_dim: int = 128, dtype=np.float32):
        self.cluster_dim = cluster_dim
        self.embed_dim = embed_dim
        self.fusion = MLP([cluster_dim + embed_dim, hidden, out_dim], rng,
                          relu_last=False, dtype=dtype)
        self.score_head = Linear(out_dim, 1, rng, dtype)

    def fuse(self, cluster_features: Tensor, embedding: Tensor, mask: np.ndarray) -> Tensor:
        """Masked fusion: rows are zeroed before the perceptron."""
        m = cluster_features.shape[0]
        if cluster_features.shape[1] != self.cluster_dim:
            raise ad.ShapeMismatchError(
                f"cluster width {cluster_features.shape[1]} != {self.cluster_dim}")
        if embedding.shape != (self.embed_dim,):
            raise ad.ShapeMismatchError(
                f"embedding shape {embedding.shape} != ({self.embed_dim},)")
        mask = np.asarray(mask, dtype=cluster_features.dtype).reshape(m, 1)
        expanded = ad.repeat_rows(embedding, m)
        joint = ad.concat([cluster_features, expanded], axis=-1)
        masked = ad.mul(joint, ad.constant(mask))
        return self.fusion(masked)

    def raw_scores(self, fused: Tensor) -> Tensor:
        return ad.reshape(self.score_head(fused), (fused.shape[0],))

    def score(self, fused: Tensor) -> Tensor:
        """Softmax-normalized confidences over the given proposals."""
        return ad.softmax(self.raw_scores(fused), axis=-1)

    def named_parameters(self, prefix: str = "grounding"):
        yield from self.fusion.named_parameters(f"{prefix}.fusion")
        yield from self.score_head.named_parameters(f"{prefix}.score")


def assign_localization_target(boxes: list[Aabb], gt_box: Aabb) -> tuple[int, np.ndarray]:
    """Index of the proposal with the highest IoU against the ground truth
    (lowest index on ties), plus the IoU vector."""
    ious = iou3d_matrix(boxes_to_array(boxes), gt_box.as_array()[None, :])[:, 0]
    return int(np.argmax(ious)), ious


@dataclass
class LocalizationResult:
    box: Aabb
    confidence: float
    proposal_index: int            # index into the surviving proposal list
    survivor_indices: list[int]    # original proposal indices after mask+NMS
    scores: np.ndarray             # softmax over survivors


def select_with_description(proposals, fusion: FusionScorer, embedding: Tensor,
                            nms_threshold: float = 0.25) -> LocalizationResult:
    """Mask invalid proposals, suppress overlaps, then score the survivors
    with the description and return the best box."""
    valid = [i for i in range(proposals.num_proposals) if proposals.objectness_mask[i] == 1]
    if not valid:
        raise NoProposalsError("no proposals survived the objectness mask")
    kept_local = nms([proposals.boxes[i] for i in valid],
                     proposals.objectness_prob[valid], nms_threshold)
    survivors = [valid[i] for i in kept_local]
    feats = ad.gather_rows(proposals.cluster_features, np.asarray(survivors))
    fused = fusion.fuse(feats, embedding, np.ones(len(survivors)))
    scores = fusion.score(fused).numpy()
    best = int(np.argmax(scores))
    return LocalizationResult(
        box=proposals.boxes[survivors[best]],
        confidence=float(scores[best]),
        proposal_index=best,
        survivor_indices=survivors,
        scores=scores,
    )
