"""Evaluation protocol: thresholded accuracy over unique/multiple strata,
per-class detection AP, reference baselines and seed-averaged runs.

A record counts as positive at threshold k when the predicted box reaches
IoU >= k against its ground-truth box; a record is "unique" when its scene
holds exactly one object of the target's semantic class, else "multiple".
Seed-averaged evaluation repeats the whole protocol with the point
subsample and sampling choices reseeded while the weights stay fixed.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .features import assemble_features
from .geometry import Aabb, iou3d, nms
from .grounding import NoProposalsError, select_with_description
from .model import GroundingModel
from .scenes import Dataset, DescriptionRecord, Scene, SEM_CLASSES, sem_class_of

BASELINES = ("oracle_cat_rand", "oracle_refer", "votenet_rand", "votenet_best", "model")

ACC_KEYS = [f"{stratum}_acc{t}" for stratum in ("unique", "multiple", "overall")
            for t in ("25", "50")]

DEFAULT_EVAL_SEEDS = [2, 4, 8, 16, 42]


def record_key(rec: DescriptionRecord) -> tuple[str, int, int]:
    return (rec.scene_id, rec.object_id, rec.ann_id)


def stratum_of(record: DescriptionRecord, scene: Scene) -> str:
    target = scene.object_by_id(record.object_id)
    same = sum(1 for o in scene.objects if o.sem_class == target.sem_class)
    return "unique" if same == 1 else "multiple"


# ---------------------------------------------------------------------------
# Thresholded accuracy


def acc_at_kiou(predictions: dict, records: list[DescriptionRecord],
                scenes: dict[str, Scene], k: float) -> dict:
    """Stratified Acc@kIoU; a None prediction counts as a miss."""
    hits = {"unique": 0, "multiple": 0}
    counts = {"unique": 0, "multiple": 0}
    for rec in records:
        key = record_key(rec)
        if key not in predictions:
            raise KeyError(f"no prediction for record {key}")
        scene = scenes[rec.scene_id]
        stratum = stratum_of(rec, scene)
        counts[stratum] += 1
        pred = predictions[key]
        if pred is None:
            continue
        gt = scene.object_by_id(rec.object_id).box
        if iou3d(pred, gt) >= k:
            hits[stratum] += 1
    overall_count = counts["unique"] + counts["multiple"]
    overall_hits = hits["unique"] + hits["multiple"]

    def ratio(h, c):
        return h / c if c else 0.0

    return {
        "unique": ratio(hits["unique"], counts["unique"]),
        "multiple": ratio(hits["multiple"], counts["multiple"]),
        "overall": ratio(overall_hits, overall_count),
        "counts": {"unique": counts["unique"], "multiple": counts["multiple"],
                   "overall": overall_count},
    }


# ---------------------------------------------------------------------------
# Detection mAP


def average_precision(matches: list[tuple[float, bool]], n_gt: int) -> float:
    """All-point interpolated AP from (confidence, is_true_positive) pairs."""
    if n_gt == 0:
        return 0.0
    if not matches:
        return 0.0
    matches = sorted(matches, key=lambda x: -x[0])
    tp = np.cumsum([1.0 if m[1] else 0.0 for m in matches])
    fp = np.cumsum([0.0 if m[1] else 1.0 for m in matches])
    recall = tp / n_gt
    precision = tp / (tp + fp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def map_at_iou(detections: dict[str, list[tuple[int, Aabb, float]]],
               scenes: dict[str, Scene], iou_threshold: float = 0.5) -> dict:
    """Per-class AP and the mean over classes present in the ground truth.

    ``detections`` maps scene_id to (class index, box, confidence) triples.
    Within a class, detections are matched greedily by descending
    confidence to the not-yet-matched ground-truth boxes of that class.
    """
    gt_by_class: dict[int, dict[str, list[Aabb]]] = {}
    for sid, scene in scenes.items():
        for obj in scene.objects:
            gt_by_class.setdefault(obj.sem_class, {}).setdefault(sid, []).append(obj.box)

    per_class_ap = {}
    for cls, gt_scenes in sorted(gt_by_class.items()):
        n_gt = sum(len(v) for v in gt_scenes.values())
        dets: list[tuple[float, str, Aabb]] = []
        for sid, triples in detections.items():
            for c, box, conf in triples:
                if c == cls:
                    dets.append((conf, sid, box))
        dets.sort(key=lambda x: -x[0])
        matched: dict[str, list[bool]] = {sid: [False] * len(v) for sid, v in gt_scenes.items()}
        outcomes = []
        for conf, sid, box in dets:
            best_iou, best_j = 0.0, -1
            for j, gt_box in enumerate(gt_scenes.get(sid, [])):
                if matched.get(sid, [])[j]:
                    continue
                v = iou3d(box, gt_box)
                if v > best_iou:
                    best_iou, best_j = v, j
            if best_iou >= iou_threshold and best_j >= 0:
                matched[sid][best_j] = True
                outcomes.append((conf, True))
            else:
                outcomes.append((conf, False))
        per_class_ap[SEM_CLASSES[cls]] = average_precision(outcomes, n_gt)

    mean_ap = float(np.mean(list(per_class_ap.values()))) if per_class_ap else 0.0
    return {"per_class": per_class_ap, "map": mean_ap}


# ---------------------------------------------------------------------------
# Description truncation modes


TRUNCATION_MODES = ("whole", "first_sentence", "object_name", "semantic_label")


def truncate_description(record: DescriptionRecord, mode: str,
                         scenes: dict[str, Scene] | None = None) -> DescriptionRecord:
    from .language import tokenize

    if mode == "whole":
        return record
    if mode == "first_sentence":
        tokens = list(record.tokens)
        if "." in tokens:
            tokens = tokens[: tokens.index(".") + 1]
    elif mode == "object_name":
        tokens = tokenize(record.object_name)
    elif mode == "semantic_label":
        if scenes is not None and record.scene_id in scenes:
            cls = scenes[record.scene_id].object_by_id(record.object_id).sem_class
        else:
            cls = sem_class_of(record.object_name)
        tokens = tokenize(SEM_CLASSES[cls])
    else:
        raise ValueError(f"unknown truncation mode {mode!r}")
    return DescriptionRecord(
        scene_id=record.scene_id, object_id=record.object_id, ann_id=record.ann_id,
        object_name=record.object_name, description=" ".join(tokens), tokens=tuple(tokens))


# ---------------------------------------------------------------------------
# Evaluation reports


@dataclass
class EvalReport:
    baseline: str
    seeds: list[int]
    per_seed: list[dict]                 # one {acc key: value} dict per seed
    mean: dict
    std: dict
    counts: dict
    per_class_ap: dict | None = None     # seed-averaged, detector baselines only
    map50: float | None = None
    truncation: str = "whole"

    def to_json(self) -> str:
        doc = {
            "baseline": self.baseline,
            "truncation": self.truncation,
            "seeds": self.seeds,
            "per_seed": self.per_seed,
            "mean": self.mean,
            "std": self.std,
            "counts": self.counts,
            "map50": self.map50,
            "per_class_ap": self.per_class_ap,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def acc_csv(self) -> str:
        """Accuracy table: unique/multiple/overall at 0.25 and 0.5."""
        header = ("row,unique_acc25,unique_acc50,multiple_acc25,multiple_acc50,"
                  "overall_acc25,overall_acc50")
        lines = [header]
        for seed, vals in zip(self.seeds, self.per_seed):
            lines.append(f"seed{seed}," + ",".join(f"{vals[k]:.4f}" for k in ACC_KEYS))
        lines.append("mean," + ",".join(f"{self.mean[k]:.4f}" for k in ACC_KEYS))
        lines.append("std," + ",".join(f"{self.std[k]:.4f}" for k in ACC_KEYS))
        return "\n".join(lines) + "\n"

    def map_csv(self) -> str:
        if self.per_class_ap is None:
            return ""
        names = [n for n in SEM_CLASSES if n in self.per_class_ap]
        header = ",".join(names + ["mAP"])
        row = ",".join([f"{self.per_class_ap[n]:.4f}" for n in names] + [f"{self.map50:.4f}"])
        return header + "\n" + row + "\n"


def _mean_std(per_seed: list[dict]) -> tuple[dict, dict]:
    mean, std = {}, {}
    for key in ACC_KEYS:
        vals = np.array([d[key] for d in per_seed], dtype=np.float64)
        mean[key] = float(vals.mean())
        std[key] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return mean, std


# ---------------------------------------------------------------------------
# The evaluator


@dataclass
class SceneDetection:
    """Cached per-(scene, seed) detector output."""

    fwd: object
    survivors: list[int]          # proposal indices after mask + NMS
    detections: list[tuple[int, Aabb, float]]  # (class, box, confidence)


class Evaluator:
    """Runs baselines over one dataset split with per-(scene, seed)
    detection caching; the model weights are read-only throughout."""

    def __init__(self, model: GroundingModel | None, dataset: Dataset,
                 split: str = "val", nms_threshold: float = 0.25, threads: int = 1):
        self.model = model
        self.dataset = dataset
        self.split = split
        self.records = dataset.records_for(split)
        if not self.records:
            raise ValueError(f"no records in split {split!r}")
        self.nms_threshold = nms_threshold
        self.threads = threads
        self._cache: dict[tuple[str, int], SceneDetection] = {}
        self._scene_order = {sid: i for i, sid in enumerate(sorted(dataset.scenes))}

    # -- detection --------------------------------------------------------

    def _detect(self, scene_id: str, seed: int) -> SceneDetection:
        key = (scene_id, seed)
        if key in self._cache:
            return self._cache[key]
        scene = self.dataset.scenes[scene_id]
        rng = np.random.default_rng(
            np.random.SeedSequence([seed, self._scene_order[scene_id]]))
        feats = assemble_features(scene, self.model.feature_config, rng,
                                  dtype=self.model.dtype)
        fwd = self.model.detector.forward(feats, rng)
        props = fwd.proposals
        valid = [i for i in range(props.num_proposals) if props.objectness_mask[i] == 1]
        survivors = []
        if valid:
            kept = nms([props.boxes[i] for i in valid], props.objectness_prob[valid],
                       self.nms_threshold)
            survivors = [valid[i] for i in kept]
        detections = [(int(props.semantic_pred[i]), props.boxes[i],
                       float(props.objectness_prob[i])) for i in survivors]
        out = SceneDetection(fwd=fwd, survivors=survivors, detections=detections)
        self._cache[key] = out
        return out

    def _prewarm(self, seed: int) -> None:
        scene_ids = sorted({r.scene_id for r in self.records})
        missing = [sid for sid in scene_ids if (sid, seed) not in self._cache]
        if self.threads > 1 and len(missing) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                list(pool.map(lambda sid: self._detect(sid, seed), missing))
        else:
            for sid in missing:
                self._detect(sid, seed)

    # -- per-record predictions -------------------------------------------

    def predict(self, record: DescriptionRecord, baseline: str, seed: int,
                rng: np.random.Generator) -> Aabb | None:
        scene = self.dataset.scenes[record.scene_id]
        target = scene.object_by_id(record.object_id)
        if baseline == "oracle_cat_rand":
            candidates = [o.box for o in scene.objects if o.sem_class == target.sem_class]
            return candidates[int(rng.integers(len(candidates)))]
        if baseline == "oracle_refer":
            return self._oracle_refer(scene, record, seed)
        det = self._detect(record.scene_id, seed)
        props = det.fwd.proposals
        if baseline == "votenet_rand":
            if not det.survivors:
                return None
            same = [i for i in det.survivors if props.semantic_pred[i] == target.sem_class]
            pool = same if same else det.survivors
            return props.boxes[pool[int(rng.integers(len(pool)))]]
        if baseline == "votenet_best":
            if not det.survivors:
                return None
            best = max(det.survivors, key=lambda i: iou3d(props.boxes[i], target.box))
            return props.boxes[best]
        if baseline == "model":
            try:
                embedding = self.model.encode(record.tokens)
                result = select_with_description(props, self.model.fusion, embedding,
                                                 self.nms_threshold)
            except NoProposalsError:
                return None
            return result.box
        raise ValueError(f"unknown baseline {baseline!r}")

    def _oracle_refer(self, scene: Scene, record: DescriptionRecord, seed: int) -> Aabb:
        """Ground-truth boxes fed as proposals through the trained fusion
        and scoring heads; features are pooled at the true box centers."""
        det = self._detect(scene.scene_id, seed)
        centers = np.stack([np.asarray(o.box.center) for o in scene.objects])
        feats = self.model.detector.cluster_features_at(det.fwd.votes, centers)
        embedding = self.model.encode(record.tokens)
        fused = self.model.fusion.fuse(feats, embedding, np.ones(len(scene.objects)))
        scores = self.model.fusion.score(fused).numpy()
        return scene.objects[int(np.argmax(scores))].box

    # -- full runs ----------------------------------------------------------

    def predictions_for_seed(self, baseline: str, seed: int,
                             truncation: str = "whole") -> dict:
        if baseline not in BASELINES:
            raise ValueError(f"unknown baseline {baseline!r}")
        needs_model = baseline != "oracle_cat_rand"
        if needs_model and self.model is None:
            raise ValueError(f"baseline {baseline!r} requires a trained model")
        if self.model is not None and baseline != "oracle_cat_rand":
            self._prewarm(seed)
        preds = {}
        for ridx, rec in enumerate(self.records):
            used = rec if truncation == "whole" else truncate_description(
                rec, truncation, self.dataset.scenes)
            rng = np.random.default_rng(np.random.SeedSequence([seed, 3, ridx]))
            preds[record_key(rec)] = self.predict(used, baseline, seed, rng)
        return preds

    def run(self, baseline: str, seeds: list[int] | None = None,
            truncation: str = "whole", with_map: bool = False) -> EvalReport:
        seeds = list(seeds) if seeds else list(DEFAULT_EVAL_SEEDS)
        if not seeds:
            raise ValueError("need at least one evaluation seed")
        per_seed = []
        maps = []
        per_class_sums: dict[str, list[float]] = {}
        for seed in seeds:
            preds = self.predictions_for_seed(baseline, seed, truncation)
            row = {}
            for label, k in (("25", 0.25), ("50", 0.5)):
                acc = acc_at_kiou(preds, self.records, self.dataset.scenes, k)
                row[f"unique_acc{label}"] = acc["unique"]
                row[f"multiple_acc{label}"] = acc["multiple"]
                row[f"overall_acc{label}"] = acc["overall"]
                counts = acc["counts"]
            per_seed.append(row)
            if with_map and baseline in ("model", "votenet_rand", "votenet_best"):
                det_by_scene = {}
                for sid in sorted({r.scene_id for r in self.records}):
                    det_by_scene[sid] = self._detect(sid, seed).detections
                scenes = {sid: self.dataset.scenes[sid] for sid in det_by_scene}
                result = map_at_iou(det_by_scene, scenes)
                maps.append(result["map"])
                for name, ap in result["per_class"].items():
                    per_class_sums.setdefault(name, []).append(ap)
        mean, std = _mean_std(per_seed)
        per_class_ap = ({name: float(np.mean(vals)) for name, vals in per_class_sums.items()}
                        if per_class_sums else None)
        return EvalReport(
            baseline=baseline, seeds=seeds, per_seed=per_seed, mean=mean, std=std,
            counts=counts, per_class_ap=per_class_ap,
            map50=float(np.mean(maps)) if maps else None, truncation=truncation)


def seeded_eval(model: GroundingModel, dataset: Dataset, seeds: list[int] | None = None,
                split: str = "val", baseline: str = "model",
                nms_threshold: float = 0.25, with_map: bool = False,
                threads: int = 1) -> EvalReport:
    """Full evaluation repeated per seed (subsample and sampling choices
    reseeded, weights fixed), with mean and sample stddev."""
    ev = Evaluator(model, dataset, split=split, nms_threshold=nms_threshold, threads=threads)
    return ev.run(baseline, seeds=seeds, with_map=with_map)


def run_baseline(baseline: str, dataset: Dataset, model: GroundingModel | None = None,
                 seed: int = 42, split: str = "val", nms_threshold: float = 0.25) -> dict:
    """Predictions for every record of a split under one baseline."""
    ev = Evaluator(model, dataset, split=split, nms_threshold=nms_threshold)
    return ev.predictions_for_seed(baseline, seed)
