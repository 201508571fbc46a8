"""Scene and description data model plus on-disk formats.

Scenes are stored as JSON with base64 (or external-path) float32 blobs for
the per-point arrays. Description records are JSON lines whose field names
match the released annotation format (scene_id, object_id, ann_id,
object_name, description, token), so the real corpus loads unchanged; the
loader also accepts a whole-file JSON array, which is how that corpus is
shipped.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Aabb

# The 18 benchmark categories; every raw object name maps into one of
# these, with "others" as the catch-all.
SEM_CLASSES = [
    "cabinet", "bed", "chair", "sofa", "table", "door", "window", "bookshelf",
    "picture", "counter", "desk", "curtain", "refrigerator", "shower curtain",
    "toilet", "sink", "bathtub", "others",
]
SEM_CLASS_INDEX = {name: i for i, name in enumerate(SEM_CLASSES)}
NUM_SEM_CLASSES = len(SEM_CLASSES)

# Raw-name synonyms that fold into a benchmark class; anything unlisted
# (and not itself a class name) becomes "others".
RAW_NAME_TO_CLASS = {
    "armchair": "chair",
    "office chair": "chair",
    "desk chair": "chair",
    "stool": "chair",
    "couch": "sofa",
    "loveseat": "sofa",
    "coffee table": "table",
    "end table": "table",
    "nightstand": "table",
    "dresser": "cabinet",
    "wardrobe": "cabinet",
    "kitchen cabinet": "cabinet",
    "fridge": "refrigerator",
    "shelf": "bookshelf",
    "bookcase": "bookshelf",
    "shower": "shower curtain",
    "tub": "bathtub",
}


def sem_class_of(raw_name: str) -> int:
    name = raw_name.strip().lower()
    if name in SEM_CLASS_INDEX:
        return SEM_CLASS_INDEX[name]
    if name in RAW_NAME_TO_CLASS:
        return SEM_CLASS_INDEX[RAW_NAME_TO_CLASS[name]]
    return SEM_CLASS_INDEX["others"]


@dataclass
class ObjectAnnotation:
    object_id: int
    raw_name: str
    sem_class: int
    box: Aabb

    def __post_init__(self):
        if not 0 <= self.sem_class < NUM_SEM_CLASSES:
            raise ValueError(f"sem_class {self.sem_class} out of range")


@dataclass
class Scene:
    scene_id: str
    positions: np.ndarray           # (N, 3) meters
    colors: np.ndarray              # (N, 3) in 0..255
    normals: np.ndarray | None      # (N, 3) unit vectors
    appearance: np.ndarray | None   # (N, D_a)
    objects: list[ObjectAnnotation] = field(default_factory=list)

    def __post_init__(self):
        n = self.positions.shape[0]
        if self.positions.shape != (n, 3):
            raise ValueError("positions must be (N, 3)")
        if self.colors.shape != (n, 3):
            raise ValueError("colors row count must match positions")
        if self.normals is not None and self.normals.shape != (n, 3):
            raise ValueError("normals row count must match positions")
        if self.appearance is not None and self.appearance.shape[0] != n:
            raise ValueError("appearance row count must match positions")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions must be finite")
        ids = [o.object_id for o in self.objects]
        if len(ids) != len(set(ids)):
            raise ValueError("object ids must be unique within a scene")

    @property
    def num_points(self) -> int:
        return self.positions.shape[0]

    def object_by_id(self, object_id: int) -> ObjectAnnotation:
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise KeyError(f"scene {self.scene_id} has no object {object_id}")

    def validate(self) -> None:
        """Check the expensive invariants (unit normals, non-empty boxes)."""
        if self.normals is not None:
            norms = np.linalg.norm(self.normals, axis=1)
            if not np.all(np.abs(norms - 1.0) < 1e-3):
                raise ValueError("normals must be unit length")
        for obj in self.objects:
            if obj.box.volume <= 0:
                raise ValueError(f"object {obj.object_id} has empty box")
            if not obj.box.contains(self.positions).any():
                raise ValueError(f"object {obj.object_id} contains no scene point")


@dataclass(frozen=True)
class DescriptionRecord:
    scene_id: str
    object_id: int
    ann_id: int
    object_name: str
    description: str
    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise ValueError("a description record needs at least one token")


@dataclass
class FeatureConfig:
    """Which per-point channels feed the detector, and the subsample size."""

    use_rgb: bool = True
    use_appearance: bool = True
    use_normals: bool = True
    use_height: bool = True
    n_points: int = 40000
    appearance_dim: int = 128

    @property
    def width(self) -> int:
        """Feature width on top of xyz."""
        w = 0
        if self.use_rgb:
            w += 3
        if self.use_appearance:
            w += self.appearance_dim
        if self.use_normals:
            w += 3
        if self.use_height:
            w += 1
        return w


@dataclass
class SplitSpec:
    train: list[str]
    val: list[str]
    test: list[str]

    def __post_init__(self):
        buckets = [set(self.train), set(self.val), set(self.test)]
        for i in range(3):
            for j in range(i + 1, 3):
                overlap = buckets[i] & buckets[j]
                if overlap:
                    raise ValueError(f"splits share scenes: {sorted(overlap)[:3]}")


# ---------------------------------------------------------------------------
# Scene file format


def _encode_blob(arr: np.ndarray | None) -> dict | None:
    if arr is None:
        return None
    payload = np.ascontiguousarray(arr, dtype="<f4")
    return {"b64": base64.b64encode(payload.tobytes()).decode("ascii"),
            "shape": list(payload.shape)}


def _decode_blob(entry: dict | None, base_dir: Path) -> np.ndarray | None:
    if entry is None:
        return None
    shape = tuple(entry["shape"])
    if "b64" in entry:
        raw = base64.b64decode(entry["b64"])
    elif "path" in entry:
        raw = (base_dir / entry["path"]).read_bytes()
    else:
        raise ValueError("blob needs a 'b64' or 'path' field")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


def save_scene(scene: Scene, path: str | Path) -> None:
    doc = {
        "scene_id": scene.scene_id,
        "num_points": scene.num_points,
        "positions": _encode_blob(scene.positions),
        "colors": _encode_blob(scene.colors),
        "normals": _encode_blob(scene.normals),
        "appearance": _encode_blob(scene.appearance),
        "objects": [
            {
                "object_id": o.object_id,
                "raw_name": o.raw_name,
                "sem_class": o.sem_class,
                "box": {
                    "cx": o.box.center[0], "cy": o.box.center[1], "cz": o.box.center[2],
                    "rx": o.box.lengths[0], "ry": o.box.lengths[1], "rz": o.box.lengths[2],
                },
            }
            for o in scene.objects
        ],
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_scene(path: str | Path) -> Scene:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    objects = [
        ObjectAnnotation(
            object_id=int(o["object_id"]),
            raw_name=o["raw_name"],
            sem_class=int(o["sem_class"]),
            box=Aabb(
                center=(o["box"]["cx"], o["box"]["cy"], o["box"]["cz"]),
                lengths=(o["box"]["rx"], o["box"]["ry"], o["box"]["rz"]),
            ),
        )
        for o in doc["objects"]
    ]
    return Scene(
        scene_id=doc["scene_id"],
        positions=_decode_blob(doc["positions"], path.parent),
        colors=_decode_blob(doc["colors"], path.parent),
        normals=_decode_blob(doc.get("normals"), path.parent),
        appearance=_decode_blob(doc.get("appearance"), path.parent),
        objects=objects,
    )


# ---------------------------------------------------------------------------
# Description records


def _record_from_fields(fields: dict) -> DescriptionRecord:
    tokens = fields.get("token")
    if tokens is None:
        from .language import tokenize

        tokens = tokenize(fields["description"])
    return DescriptionRecord(
        scene_id=str(fields["scene_id"]),
        object_id=int(fields["object_id"]),
        ann_id=int(fields["ann_id"]),
        object_name=str(fields["object_name"]),
        description=str(fields["description"]),
        tokens=tuple(str(t).lower() for t in tokens),
    )


def save_description_records(records: list[DescriptionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({
                "scene_id": rec.scene_id,
                "object_id": rec.object_id,
                "ann_id": rec.ann_id,
                "object_name": rec.object_name,
                "description": rec.description,
                "token": list(rec.tokens),
            }) + "\n")


def load_description_records(path: str | Path) -> list[DescriptionRecord]:
    """Load records from JSON lines or from a whole-file JSON array."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        return [_record_from_fields(f) for f in json.loads(stripped)]
    records = []
    for line in text.splitlines():
        line = line.strip()
        if line:
            records.append(_record_from_fields(json.loads(line)))
    return records


def save_splits(splits: SplitSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(
        {"train": splits.train, "val": splits.val, "test": splits.test}), encoding="utf-8")


def load_splits(path: str | Path) -> SplitSpec:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return SplitSpec(train=list(doc["train"]), val=list(doc["val"]), test=list(doc["test"]))


@dataclass
class Dataset:
    """A directory of scenes plus description records and a split."""

    scenes: dict[str, Scene]
    records: list[DescriptionRecord]
    splits: SplitSpec

    @classmethod
    def load(cls, root: str | Path) -> "Dataset":
        root = Path(root)
        scenes = {}
        for f in sorted((root / "scenes").glob("*.json")):
            scene = load_scene(f)
            scenes[scene.scene_id] = scene
        records = load_description_records(root / "descriptions.jsonl")
        splits = load_splits(root / "splits.json")
        return cls(scenes=scenes, records=records, splits=splits)

    def save(self, root: str | Path) -> None:
        root = Path(root)
        (root / "scenes").mkdir(parents=True, exist_ok=True)
        for scene in self.scenes.values():
            save_scene(scene, root / "scenes" / f"{scene.scene_id}.json")
        save_description_records(self.records, root / "descriptions.jsonl")
        save_splits(self.splits, root / "splits.json")

    def records_for(self, split: str) -> list[DescriptionRecord]:
        ids = set(getattr(self.splits, split))
        return [r for r in self.records if r.scene_id in ids]

    def validate(self) -> None:
        for rec in self.records:
            scene = self.scenes.get(rec.scene_id)
            if scene is None:
                raise ValueError(f"record references unknown scene {rec.scene_id}")
            scene.object_by_id(rec.object_id)
