"""Composite localization + detection + language-classification loss.

total = loc_weight * L_loc + det_weight * L_det + cls_weight * L_cls
L_det = L_vote + objn_weight * L_objn + L_box + sem_weight * L_sem
L_box = L_center + size_cls_weight * L_size_cls + L_size_reg

Regression terms use a unit-transition Huber penalty summed over
coordinates and averaged over their supervised rows; classification terms
are cross entropies averaged over valid rows. Disabled terms contribute an
exact zero, not a small number.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .detector import DetectionForward, DetectionTargets


@dataclass
class LossWeights:
    loc: float = 0.1
    det: float = 10.0
    cls: float = 1.0
    objn: float = 0.5
    sem: float = 0.1
    size_cls: float = 0.1


def _zero(dtype=np.float64) -> Tensor:
    return ad.constant(np.zeros((), dtype=dtype))


def _masked_huber(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Huber over rows where mask is 1: coordinates summed, rows averaged."""
    n = float(mask.sum())
    if n == 0:
        return _zero(pred.dtype)
    diff = ad.sub(pred, ad.constant(target.astype(pred.dtype)))
    per = ad.smooth_l1(diff)
    weighted = ad.mul(per, ad.constant((mask / n).astype(pred.dtype).reshape(-1, 1)))
    return ad.sum_all(weighted)


def _masked_sq(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    n = float(mask.sum())
    if n == 0:
        return _zero(pred.dtype)
    diff = ad.sub(pred, ad.constant(target.astype(pred.dtype)))
    per = ad.mul(diff, diff)
    weighted = ad.mul(per, ad.constant((mask / n).astype(pred.dtype).reshape(-1, 1)))
    return ad.sum_all(weighted)


def _masked_cross_entropy(logits: Tensor, targets: np.ndarray, weights: np.ndarray) -> Tensor:
    """Mean cross entropy over rows with nonzero weight."""
    n = float((weights > 0).sum())
    if n == 0:
        return _zero(logits.dtype)
    lsm = ad.log_softmax(logits, axis=-1)
    rows = np.arange(logits.shape[0])
    picked = ad.pick(lsm, rows, targets.astype(np.int64))
    return ad.neg(ad.sum_all(ad.mul(picked, ad.constant((weights / n).astype(logits.dtype)))))


def detection_loss(fwd: DetectionForward, targets: DetectionTargets,
                   weights: LossWeights, vote_loss: str = "smooth_l1"
                   ) -> tuple[Tensor, dict[str, float]]:
    props = fwd.proposals
    m = props.num_proposals
    num_classes = props.semantic_logits.shape[1]

    if vote_loss == "smooth_l1":
        vote = _masked_huber(fwd.votes.xyz, targets.vote_target, targets.vote_mask)
    elif vote_loss == "l2":
        vote = _masked_sq(fwd.votes.xyz, targets.vote_target, targets.vote_mask)
    else:
        raise ValueError(f"unknown vote loss {vote_loss!r}")

    objn = _masked_cross_entropy(props.objectness_logits, targets.objectness_target,
                                 targets.objectness_weight)
    center = _masked_huber(props.centers, targets.center_target, targets.positive_mask)
    size_cls = _masked_cross_entropy(props.size_class_logits, targets.size_class_target,
                                     targets.positive_mask)

    flat = ad.reshape(props.size_residuals, (m * num_classes, 3))
    rows = np.arange(m) * num_classes + targets.size_class_target.astype(np.int64)
    chosen = ad.gather_rows(flat, rows)
    size_reg = _masked_huber(chosen, targets.size_residual_target, targets.positive_mask)

    sem = _masked_cross_entropy(props.semantic_logits, targets.semantic_target,
                                targets.positive_mask)

    box = ad.add(ad.add(center, ad.scale(size_cls, weights.size_cls)), size_reg)
    det = ad.add(ad.add(ad.add(vote, ad.scale(objn, weights.objn)), box),
                 ad.scale(sem, weights.sem))
    parts = {
        "vote": vote.item(), "objn": objn.item(), "center": center.item(),
        "size_cls": size_cls.item(), "size_reg": size_reg.item(), "sem": sem.item(),
        "box": box.item(), "det": det.item(),
    }
    return det, parts


def composite_loss(loc_term: Tensor | None, det_term: Tensor | None,
                   cls_term: Tensor | None, weights: LossWeights
                   ) -> tuple[Tensor, dict[str, float]]:
    """Weighted combination; a disabled (None) term contributes exactly 0."""
    loc = loc_term if loc_term is not None else _zero()
    det = det_term if det_term is not None else _zero()
    cls = cls_term if cls_term is not None else _zero()
    total = ad.add(ad.add(ad.scale(loc, weights.loc), ad.scale(det, weights.det)),
                   ad.scale(cls, weights.cls))
    if np.isnan(total.numpy()).any():
        raise FloatingPointError("NaN in composite loss; aborting the step")
    parts = {"loc": loc.item(), "det": det.item(), "cls": cls.item(), "total": total.item()}
    return total, parts
