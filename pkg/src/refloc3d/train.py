"""End-to-end training loop.

Each iteration samples a batch of (scene, description) pairs, assembles a
fresh point subsample per element, augments it, runs the detector and the
description encoder, combines the loss terms and takes one ADAM step. In
frozen_detector mode the detector parameters are left out of the optimizer
and the detection terms are skipped entirely, so only the language and
fusion weights learn.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import RunConfig
from .detector import assign_detection_targets, compute_size_templates
from .features import assemble_features, augment_sample
from .grounding import assign_localization_target
from .language import Vocabulary
from .losses import LossWeights, composite_loss, detection_loss
from .model import GroundingModel
from .optim import Adam, AdamConfig
from .scenes import Dataset

# SeedSequence stream ids, so the independent random streams of a run
# never collide.
_STREAM_BATCH = 1
_STREAM_ELEMENT = 2


@dataclass
class MetricPoint:
    iteration: int
    loss_total: float
    loss_loc: float
    loss_det: float
    loss_cls: float
    acc25: float | None = None
    acc50: float | None = None

    def as_line(self) -> str:
        acc25 = "" if self.acc25 is None else f"{self.acc25:.4f}"
        acc50 = "" if self.acc50 is None else f"{self.acc50:.4f}"
        return (f"{self.iteration},{self.loss_total:.6f},{self.loss_loc:.6f},"
                f"{self.loss_det:.6f},{self.loss_cls:.6f},{acc25},{acc50}")


@dataclass
class TrainResult:
    model: GroundingModel
    metric_log: list[MetricPoint] = field(default_factory=list)
    checkpoint_path: Path | None = None


def loss_weights(config: RunConfig) -> LossWeights:
    return LossWeights(
        loc=config.train_loc_weight,
        det=config.train_det_weight,
        cls=config.train_cls_weight,
        objn=config.train_objn_weight,
        sem=config.train_sem_weight,
        size_cls=config.train_size_cls_weight,
    )


def sample_loss(model: GroundingModel, scene, record, rng: np.random.Generator,
                config: RunConfig, weights: LossWeights):
    """Forward one (scene, description) pair and build its loss graph."""
    feats = assemble_features(scene, model.feature_config, rng, dtype=model.dtype)
    boxes = [o.box for o in scene.objects]
    feats, boxes, motion = augment_sample(feats, model.feature_config, boxes, rng)
    sem_classes = np.array([o.sem_class for o in scene.objects], dtype=np.int64)

    frozen = config.train_mode == "frozen_detector"
    fwd = model.detector.forward(feats, rng)

    det_term = None
    if not frozen:
        targets = assign_detection_targets(
            fwd, boxes, sem_classes, model.detector.size_templates,
            model.detector.config.near_threshold, model.detector.config.far_threshold,
            motion)
        det_term, det_parts = detection_loss(fwd, targets, weights, config.train_vote_loss)
    else:
        det_parts = {}

    target_obj = scene.object_by_id(record.object_id)
    target_box_index = [o.object_id for o in scene.objects].index(record.object_id)
    gt_box = boxes[target_box_index]

    embedding = model.encode(record.tokens)
    mask = fwd.proposals.objectness_mask
    fused = model.fusion.fuse(fwd.proposals.cluster_features, embedding, mask)
    raw = model.fusion.raw_scores(fused)

    loc_index, ious = assign_localization_target(fwd.proposals.boxes, gt_box)
    loc_term = None
    if not (config.train_loc_skip_no_overlap and ious.max() == 0.0):
        loc_term = ad.cross_entropy(raw, loc_index)

    cls_term = None
    if config.train_use_lobjcls:
        cls_term = ad.cross_entropy(model.encoder.classify(embedding), target_obj.sem_class)

    total, parts = composite_loss(loc_term, det_term, cls_term, weights)
    parts.update(det_parts)
    return total, parts


def train(dataset: Dataset, config: RunConfig, out_dir: str | Path | None = None,
          detector_checkpoint: str | Path | None = None,
          log=None) -> TrainResult:
    records = dataset.records_for("train")
    if not records:
        raise ValueError("training split has no description records")
    if config.train_mode == "frozen_detector" and detector_checkpoint is None:
        raise ValueError("frozen_detector mode requires a detector checkpoint")

    vocab = Vocabulary.from_records(records)
    model = GroundingModel(config, vocab)
    model.detector.size_templates = compute_size_templates(dataset.scenes, dataset.splits.train)
    if detector_checkpoint is not None:
        model.load_detector_from(detector_checkpoint)

    weights = loss_weights(config)
    optimizer = Adam(
        list(model.trainable_parameters(config.train_mode)),
        AdamConfig(lr=config.train_lr, beta1=config.train_beta1, beta2=config.train_beta2,
                   eps=config.train_eps, weight_decay=config.train_weight_decay))

    batch_rng = np.random.default_rng(np.random.SeedSequence([config.seed, _STREAM_BATCH]))
    metric_log: list[MetricPoint] = []
    started = time.time()

    for it in range(config.train_iters):
        picks = batch_rng.integers(len(records), size=config.train_batch)
        losses = []
        parts_sum: dict[str, float] = {}
        for j, ridx in enumerate(picks):
            rec = records[int(ridx)]
            rng = np.random.default_rng(
                np.random.SeedSequence([config.seed, _STREAM_ELEMENT, it, j]))
            loss, parts = sample_loss(model, dataset.scenes[rec.scene_id], rec, rng,
                                      config, weights)
            losses.append(loss)
            for k, v in parts.items():
                parts_sum[k] = parts_sum.get(k, 0.0) + v / config.train_batch
        total = losses[0]
        for extra in losses[1:]:
            total = ad.add(total, extra)
        total = ad.scale(total, 1.0 / config.train_batch)

        optimizer.zero_grad()
        total.backward()
        optimizer.step()

        if config.train_eval_interval and (it + 1) % config.train_eval_interval == 0:
            point = MetricPoint(
                iteration=it + 1,
                loss_total=parts_sum.get("total", 0.0),
                loss_loc=parts_sum.get("loc", 0.0),
                loss_det=parts_sum.get("det", 0.0),
                loss_cls=parts_sum.get("cls", 0.0),
            )
            if dataset.splits.val:
                from .evaluation import Evaluator

                report = Evaluator(model, dataset, split="val",
                                   nms_threshold=config.eval_nms_threshold).run(
                    "model", seeds=[config.train_eval_seed])
                point.acc25 = report.mean["overall_acc25"]
                point.acc50 = report.mean["overall_acc50"]
            metric_log.append(point)
            if log:
                log(f"iter {point.iteration}: loss {point.loss_total:.4f} "
                    f"(loc {point.loss_loc:.4f} det {point.loss_det:.4f} "
                    f"cls {point.loss_cls:.4f})"
                    + (f" val acc@0.25 {point.acc25:.3f} acc@0.5 {point.acc50:.3f}"
                       if point.acc25 is not None else ""))

    if log:
        log(f"trained {config.train_iters} iterations in {time.time() - started:.1f}s")

    result = TrainResult(model=model, metric_log=metric_log)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt = out_dir / "checkpoint.rfl"
        model.save(ckpt)
        header = "iteration,loss_total,loss_loc,loss_det,loss_cls,acc25,acc50"
        (out_dir / "metrics.csv").write_text(
            "\n".join([header] + [p.as_line() for p in metric_log]) + "\n", encoding="utf-8")
        result.checkpoint_path = ckpt
    return result
