"""Flat key=value run configuration.

One dataclass carries every knob of the pipeline; `to_text` renders it as
plain `key = value` lines and `from_text` parses the same format back, so
a printed config re-ingested through --config reproduces an identical run.
Defaults are the desk-scale operating point; the larger published-scale
settings (40,000 input points, 256 proposals, 300-d embeddings) are
expressible through the same keys.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .detector import DetectorConfig, SaStage
from .scenes import FeatureConfig
from .synthetic import GenConfig


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1

    # synthetic corpus generation
    gen_train_scenes: int = 200
    gen_val_scenes: int = 50
    gen_test_scenes: int = 0
    gen_room_min: float = 5.0
    gen_room_max: float = 8.0
    gen_objects_min: int = 3
    gen_objects_max: int = 8
    gen_points_per_scene: int = 6000
    gen_descriptions_per_object: int = 2
    gen_categories: list[str] = field(default_factory=lambda: [
        "chair", "table", "bed", "sofa", "cabinet", "desk", "refrigerator",
        "bookshelf", "trash can", "lamp"])
    gen_category_counts: str = ""      # e.g. "chair:3" forces composition

    # per-point features
    feat_use_rgb: bool = True
    feat_use_appearance: bool = True
    feat_use_normals: bool = True
    feat_use_height: bool = True
    feat_points: int = 2048
    feat_appearance_dim: int = 8

    # language encoder
    lang_embed_dim: int = 64
    lang_hidden_dim: int = 256
    lang_max_tokens: int = 126
    lang_freeze_embeddings: bool = True
    lang_embeddings_path: str = ""     # word-vector text file; empty = seeded random

    # detector
    det_sa_samples: list[int] = field(default_factory=lambda: [192, 64])
    det_sa_radius: list[float] = field(default_factory=lambda: [0.5, 1.0])
    det_sa_max_k: list[int] = field(default_factory=lambda: [12, 8])
    det_sa_widths: list[int] = field(default_factory=lambda: [64, 128])
    det_fp_dim: int = 128
    det_vote_hidden: int = 128
    det_proposals: int = 32
    det_cluster_radius: float = 0.6
    det_cluster_max_k: int = 8
    det_cluster_width: int = 128
    det_head_hidden: int = 128
    det_near: float = 0.3
    det_far: float = 0.6

    # training
    train_iters: int = 3000
    train_batch: int = 8
    train_lr: float = 1e-3
    train_weight_decay: float = 1e-5
    train_beta1: float = 0.9
    train_beta2: float = 0.999
    train_eps: float = 1e-8
    train_mode: str = "end_to_end"     # or frozen_detector
    train_eval_interval: int = 1000
    train_eval_seed: int = 42
    train_loc_weight: float = 0.1
    train_det_weight: float = 10.0
    train_cls_weight: float = 1.0
    train_objn_weight: float = 0.5
    train_sem_weight: float = 0.1
    train_size_cls_weight: float = 0.1
    train_use_lobjcls: bool = True
    train_loc_skip_no_overlap: bool = False
    train_vote_loss: str = "smooth_l1"  # or l2

    # evaluation
    eval_nms_threshold: float = 0.25
    eval_seeds: list[int] = field(default_factory=lambda: [2, 4, 8, 16, 42])

    def __post_init__(self):
        if self.train_mode not in ("end_to_end", "frozen_detector"):
            raise ValueError(f"invalid train_mode {self.train_mode!r}")
        n = len(self.det_sa_samples)
        for name in ("det_sa_radius", "det_sa_max_k", "det_sa_widths"):
            if len(getattr(self, name)) != n:
                raise ValueError("detector stage lists must have equal length")
        for w in (self.train_loc_weight, self.train_det_weight, self.train_cls_weight):
            if w < 0:
                raise ValueError("loss weights must be non-negative")

    # -- conversions to module configs ------------------------------------

    def gen_config(self) -> GenConfig:
        counts = {}
        if self.gen_category_counts:
            for part in self.gen_category_counts.split(","):
                name, _, num = part.strip().rpartition(":")
                counts[name.strip()] = int(num)
        return GenConfig(
            n_train=self.gen_train_scenes,
            n_val=self.gen_val_scenes,
            n_test=self.gen_test_scenes,
            room_min=self.gen_room_min,
            room_max=self.gen_room_max,
            objects_min=self.gen_objects_min,
            objects_max=self.gen_objects_max,
            points_per_scene=self.gen_points_per_scene,
            descriptions_per_object=self.gen_descriptions_per_object,
            appearance_dim=self.feat_appearance_dim,
            categories=list(self.gen_categories),
            category_counts=counts,
        )

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(
            use_rgb=self.feat_use_rgb,
            use_appearance=self.feat_use_appearance,
            use_normals=self.feat_use_normals,
            use_height=self.feat_use_height,
            n_points=self.feat_points,
            appearance_dim=self.feat_appearance_dim,
        )

    def detector_config(self) -> DetectorConfig:
        stages = [SaStage(n_sample=s, radius=r, max_k=k, width=w)
                  for s, r, k, w in zip(self.det_sa_samples, self.det_sa_radius,
                                        self.det_sa_max_k, self.det_sa_widths)]
        return DetectorConfig(
            sa_stages=stages,
            fp_dim=self.det_fp_dim,
            vote_hidden=self.det_vote_hidden,
            num_proposals=self.det_proposals,
            cluster_radius=self.det_cluster_radius,
            cluster_max_k=self.det_cluster_max_k,
            cluster_width=self.det_cluster_width,
            head_hidden=self.det_head_hidden,
            near_threshold=self.det_near,
            far_threshold=self.det_far,
        )

    # -- flat text format --------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name} = {_render(value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in fields:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            kwargs[key] = _parse(value.strip(), fields[key])
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(_render(v) for v in value)
    return str(value)


def _parse(text: str, f: dataclasses.Field):
    base = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if base == "bool":
        if text.lower() in ("true", "1", "yes", "on"):
            return True
        if text.lower() in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"invalid boolean {text!r} for {f.name}")
    if base == "int":
        return int(text)
    if base == "float":
        return float(text)
    if base == "str":
        return text
    if base.startswith("list[int]"):
        return [int(x) for x in text.split(",") if x.strip() != ""]
    if base.startswith("list[float]"):
        return [float(x) for x in text.split(",") if x.strip() != ""]
    if base.startswith("list[str]"):
        return [x.strip() for x in text.split(",") if x.strip() != ""]
    raise ValueError(f"unsupported config field type {base!r} for {f.name}")
