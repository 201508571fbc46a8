"""Procedural desk-scale corpus: rooms of boxy furniture plus templated
referring descriptions.

Every description follows one of two shapes (tokens lowercased):

    "this is a [SIZE] COLOR NAME . it is REL the ACOLOR ANAME ."
    "this is a [SIZE] COLOR NAME . it is the one closest to the ACOLOR ANAME ."

with REL one of "to the left of" (target center x smaller by > 5 cm),
"to the right of", "in front of" (center y smaller), "behind", or
"next to" (footprint gap at most 0.4 m on both horizontal axes). When a
scene has no usable anchor the second sentence degrades to the filler
"it is near the middle of the room ." which constrains nothing.

Template semantics are exact: an object matches a description iff its raw
name, palette color and (when a size word is present) its size class all
match, and the relation holds against the uniquely-referable anchor. The
generator re-checks every emitted description against all objects in the
scene and resamples the relation/anchor until exactly one object matches,
so each record is guaranteed unambiguous. Size classes come from the
drawn scale factor: small <= 0.92, large >= 1.08, medium otherwise.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import Aabb
from .language import tokenize
from .scenes import (
    Dataset,
    DescriptionRecord,
    ObjectAnnotation,
    Scene,
    SplitSpec,
    sem_class_of,
)


class UnsatisfiableConfigError(ValueError):
    """The room cannot hold the requested objects."""


@dataclass(frozen=True)
class CategorySpec:
    raw_name: str
    base_lengths: tuple[float, float, float]


CATEGORY_SPECS = {
    "chair": CategorySpec("chair", (0.55, 0.55, 0.90)),
    "table": CategorySpec("table", (1.40, 0.80, 0.75)),
    "bed": CategorySpec("bed", (2.00, 1.60, 0.55)),
    "sofa": CategorySpec("sofa", (1.90, 0.90, 0.80)),
    "cabinet": CategorySpec("cabinet", (0.90, 0.45, 1.50)),
    "desk": CategorySpec("desk", (1.30, 0.65, 0.76)),
    "refrigerator": CategorySpec("refrigerator", (0.80, 0.75, 1.70)),
    "bookshelf": CategorySpec("bookshelf", (0.90, 0.30, 1.80)),
    "toilet": CategorySpec("toilet", (0.40, 0.60, 0.75)),
    "bathtub": CategorySpec("bathtub", (1.60, 0.75, 0.55)),
    "trash can": CategorySpec("trash can", (0.35, 0.35, 0.50)),
    "lamp": CategorySpec("lamp", (0.35, 0.35, 1.40)),
}

PALETTE = [
    ("red", (200, 60, 50)),
    ("blue", (60, 90, 200)),
    ("green", (70, 160, 80)),
    ("brown", (130, 90, 60)),
    ("white", (235, 235, 235)),
    ("black", (40, 40, 40)),
    ("gray", (130, 130, 130)),
    ("yellow", (220, 200, 70)),
]
PALETTE_RGB = np.array([rgb for _, rgb in PALETTE], dtype=np.float64)
PALETTE_NAMES = [name for name, _ in PALETTE]

FLOOR_RGB = np.array([172, 168, 160], dtype=np.float64)

SMALL_SCALE = 0.92
LARGE_SCALE = 1.08
SIDE_MARGIN = 0.05          # meters: relation margin along an axis
NEXT_TO_GAP = 0.40          # meters: max footprint gap for "next to"
POINT_NOISE = 0.008         # meters
COLOR_NOISE = 6.0

RELATIONS = ("to the left of", "to the right of", "in front of", "behind", "next to")


@dataclass
class GenConfig:
    n_train: int = 200
    n_val: int = 50
    n_test: int = 0
    room_min: float = 5.0
    room_max: float = 8.0
    objects_min: int = 3
    objects_max: int = 8
    points_per_scene: int = 6000
    descriptions_per_object: int = 2
    appearance_dim: int = len(PALETTE)
    categories: list[str] = field(default_factory=lambda: sorted(CATEGORY_SPECS))
    # Force an exact per-scene composition, e.g. {"chair": 3}; overrides
    # objects_min/objects_max when non-empty.
    category_counts: dict[str, int] = field(default_factory=dict)
    max_place_attempts: int = 200

    @property
    def n_scenes(self) -> int:
        return self.n_train + self.n_val + self.n_test


@dataclass
class PlacedObject:
    """Generator-internal view of one furniture box with its attributes."""

    index: int
    raw_name: str
    color_name: str
    scale: float
    lengths: np.ndarray
    center: np.ndarray

    @property
    def size_word(self) -> str | None:
        if self.scale <= SMALL_SCALE:
            return "small"
        if self.scale >= LARGE_SCALE:
            return "large"
        return None

    def box(self) -> Aabb:
        return Aabb(center=tuple(self.center), lengths=tuple(self.lengths))


def size_word_of_scale(scale: float) -> str | None:
    if scale <= SMALL_SCALE:
        return "small"
    if scale >= LARGE_SCALE:
        return "large"
    return None


# ---------------------------------------------------------------------------
# Relation predicates (exact template semantics, box centers in meters)


def relation_holds(rel: str, obj: PlacedObject, anchor: PlacedObject) -> bool:
    dx = obj.center[0] - anchor.center[0]
    dy = obj.center[1] - anchor.center[1]
    if rel == "to the left of":
        return dx < -SIDE_MARGIN
    if rel == "to the right of":
        return dx > SIDE_MARGIN
    if rel == "in front of":
        return dy < -SIDE_MARGIN
    if rel == "behind":
        return dy > SIDE_MARGIN
    if rel == "next to":
        gap_x = abs(dx) - (obj.lengths[0] + anchor.lengths[0]) / 2.0
        gap_y = abs(dy) - (obj.lengths[1] + anchor.lengths[1]) / 2.0
        return max(gap_x, gap_y) <= NEXT_TO_GAP
    raise ValueError(f"unknown relation {rel!r}")


@dataclass(frozen=True)
class ParsedDescription:
    name: str
    color: str
    size: str | None
    relation: str | None          # one of RELATIONS, "closest", or None (filler)
    anchor_color: str | None
    anchor_name: str | None


def matching_objects(objects: list[PlacedObject], parsed: ParsedDescription) -> list[int]:
    """Indices of all objects matching the description; the verification
    step used both at generation time and by independent re-checks."""
    candidates = [
        o for o in objects
        if o.raw_name == parsed.name
        and o.color_name == parsed.color
        and (parsed.size is None or o.size_word == parsed.size)
    ]
    if parsed.relation is None:
        return [o.index for o in candidates]
    anchors = [o for o in objects
               if o.raw_name == parsed.anchor_name and o.color_name == parsed.anchor_color]
    if len(anchors) != 1:
        return []  # ambiguous anchor reference: nothing matches
    anchor = anchors[0]
    if parsed.relation == "closest":
        pool = [o for o in candidates if o.index != anchor.index]
        if not pool:
            return []
        dists = [float(np.linalg.norm(o.center - anchor.center)) for o in pool]
        best = int(np.argmin(dists))
        if dists.count(min(dists)) > 1:
            return [o.index for o in pool]  # tie: ambiguous
        return [pool[best].index]
    return [o.index for o in candidates
            if o.index != anchor.index and relation_holds(parsed.relation, o, anchor)]


def render_description(target: PlacedObject, parsed: ParsedDescription) -> str:
    attrs = " ".join(x for x in (parsed.size, parsed.color) if x)
    first = f"this is a {attrs} {parsed.name} ."
    if parsed.relation is None:
        second = "it is near the middle of the room ."
    elif parsed.relation == "closest":
        second = f"it is the one closest to the {parsed.anchor_color} {parsed.anchor_name} ."
    else:
        second = f"it is {parsed.relation} the {parsed.anchor_color} {parsed.anchor_name} ."
    return f"{first} {second}"


# ---------------------------------------------------------------------------
# Scene construction


def _plan_composition(config: GenConfig, rng: np.random.Generator) -> list[str]:
    if config.category_counts:
        names = []
        for name, count in sorted(config.category_counts.items()):
            if name not in CATEGORY_SPECS:
                raise ValueError(f"unknown category {name!r}")
            names.extend([name] * int(count))
        return names
    n = int(rng.integers(config.objects_min, config.objects_max + 1))
    pool = [c for c in config.categories if c in CATEGORY_SPECS]
    if not pool:
        raise ValueError("no valid categories configured")
    return [pool[int(rng.integers(len(pool)))] for _ in range(n)]


def _assign_colors(names: list[str], rng: np.random.Generator) -> list[str]:
    """Same-named duplicates get distinct palette colors whenever the
    palette is large enough, so attribute phrases can tell them apart."""
    colors = [""] * len(names)
    by_name: dict[str, list[int]] = {}
    for i, n in enumerate(names):
        by_name.setdefault(n, []).append(i)
    for indices in by_name.values():
        order = rng.permutation(len(PALETTE_NAMES))
        for j, i in enumerate(indices):
            colors[i] = PALETTE_NAMES[order[j % len(PALETTE_NAMES)]]
    return colors


def _place_objects(config: GenConfig, room_w: float, room_d: float,
                   rng: np.random.Generator) -> list[PlacedObject]:
    names = _plan_composition(config, rng)
    colors = _assign_colors(names, rng)
    placed: list[PlacedObject] = []
    footprints: list[tuple[float, float, float, float]] = []  # (x0, x1, y0, y1)
    for idx, (name, color) in enumerate(zip(names, colors)):
        spec = CATEGORY_SPECS[name]
        scale = float(rng.uniform(0.78, 1.22))
        lengths = np.asarray(spec.base_lengths) * scale
        ok = False
        for _ in range(config.max_place_attempts):
            half_x, half_y = lengths[0] / 2.0, lengths[1] / 2.0
            if room_w / 2 - half_x <= 0 or room_d / 2 - half_y <= 0:
                break
            cx = float(rng.uniform(-room_w / 2 + half_x, room_w / 2 - half_x))
            cy = float(rng.uniform(-room_d / 2 + half_y, room_d / 2 - half_y))
            margin = 0.10
            x0, x1 = cx - half_x - margin, cx + half_x + margin
            y0, y1 = cy - half_y - margin, cy + half_y + margin
            if any(x1 > fx0 and fx1 > x0 and y1 > fy0 and fy1 > y0
                   for fx0, fx1, fy0, fy1 in footprints):
                continue
            footprints.append((x0, x1, y0, y1))
            center = np.array([cx, cy, lengths[2] / 2.0])
            placed.append(PlacedObject(index=idx, raw_name=name, color_name=color,
                                       scale=scale, lengths=lengths, center=center))
            ok = True
            break
        if not ok:
            raise UnsatisfiableConfigError(
                f"could not place a {name} in a {room_w:.1f}x{room_d:.1f} m room "
                f"with {len(placed)} objects already present")
    return placed


def _color_histogram(rgb: np.ndarray) -> np.ndarray:
    """Soft palette-similarity channels standing in for projected image
    features; rows sum to 1."""
    d2 = ((rgb[:, None, :] - PALETTE_RGB[None, :, :]) ** 2).sum(axis=-1)
    w = np.exp(-d2 / (2.0 * 40.0 ** 2))
    return w / w.sum(axis=1, keepdims=True)


def _sample_object_points(obj: PlacedObject, n: int, rng: np.random.Generator):
    """Points on the five exposed faces plus a few interior points."""
    lx, ly, lz = obj.lengths
    # (axis, sign, area) for top and the four sides; bottom sits on the floor.
    faces = [
        (2, +1, lx * ly),
        (0, +1, ly * lz), (0, -1, ly * lz),
        (1, +1, lx * lz), (1, -1, lx * lz),
    ]
    areas = np.array([f[2] for f in faces])
    n_interior = max(1, int(round(n * 0.08)))
    n_surface = max(1, n - n_interior)
    counts = rng.multinomial(n_surface, areas / areas.sum())
    pts, nrm = [], []
    half = obj.lengths / 2.0
    for (axis, sign, _), cnt in zip(faces, counts):
        if cnt == 0:
            continue
        p = rng.uniform(-half, half, size=(cnt, 3))
        p[:, axis] = sign * half[axis]
        normal = np.zeros(3)
        normal[axis] = sign
        pts.append(p)
        nrm.append(np.repeat(normal[None, :], cnt, axis=0))
    interior = rng.uniform(-half * 0.9, half * 0.9, size=(n_interior, 3))
    pts.append(interior)
    nrm.append(np.repeat(np.array([[0.0, 0.0, 1.0]]), n_interior, axis=0))
    positions = np.concatenate(pts) + obj.center
    positions[:len(positions) - n_interior] += rng.normal(0.0, POINT_NOISE,
                                                          size=(len(positions) - n_interior, 3))
    normals = np.concatenate(nrm)
    base_rgb = np.array(dict(PALETTE)[obj.color_name], dtype=np.float64)
    colors = np.clip(base_rgb + rng.normal(0.0, COLOR_NOISE, size=(len(positions), 3)), 0, 255)
    return positions, normals, colors


def _build_scene_points(placed: list[PlacedObject], room_w: float, room_d: float,
                        n_points: int, rng: np.random.Generator):
    n_floor = max(1, int(round(n_points * 0.30)))
    n_objects = n_points - n_floor
    areas = np.array([2 * (o.lengths[0] * o.lengths[2] + o.lengths[1] * o.lengths[2])
                      + o.lengths[0] * o.lengths[1] for o in placed])
    counts = rng.multinomial(n_objects, areas / areas.sum()) if placed else np.array([], dtype=int)
    counts = np.maximum(counts, 20)  # every object keeps enough points to pool

    pos_parts, nrm_parts, col_parts = [], [], []
    floor = np.empty((n_floor, 3))
    floor[:, 0] = rng.uniform(-room_w / 2, room_w / 2, size=n_floor)
    floor[:, 1] = rng.uniform(-room_d / 2, room_d / 2, size=n_floor)
    floor[:, 2] = np.abs(rng.normal(0.0, 0.004, size=n_floor))
    pos_parts.append(floor)
    nrm_parts.append(np.repeat(np.array([[0.0, 0.0, 1.0]]), n_floor, axis=0))
    col_parts.append(np.clip(FLOOR_RGB + rng.normal(0.0, COLOR_NOISE, size=(n_floor, 3)), 0, 255))

    for obj, cnt in zip(placed, counts):
        p, n, c = _sample_object_points(obj, int(cnt), rng)
        pos_parts.append(p)
        nrm_parts.append(n)
        col_parts.append(c)

    positions = np.concatenate(pos_parts)
    normals = np.concatenate(nrm_parts)
    colors = np.concatenate(col_parts)
    appearance = _color_histogram(colors)
    return (positions.astype(np.float32), colors.astype(np.float32),
            normals.astype(np.float32), appearance.astype(np.float32))


def _describe_object(target: PlacedObject, objects: list[PlacedObject],
                     rng: np.random.Generator) -> ParsedDescription:
    """Sample relations until the full description matches only the target."""
    base = ParsedDescription(name=target.raw_name, color=target.color_name,
                             size=target.size_word, relation=None,
                             anchor_color=None, anchor_name=None)
    anchors = [o for o in objects if o.raw_name != target.raw_name]
    # Anchors must be uniquely referable by (color, name).
    anchors = [a for a in anchors
               if sum(1 for o in objects
                      if o.raw_name == a.raw_name and o.color_name == a.color_name) == 1]
    if not anchors:
        if matching_objects(objects, base) == [target.index]:
            return base
        raise UnsatisfiableConfigError(
            f"cannot disambiguate {target.raw_name} #{target.index}: no usable anchor")

    anchor_order = [anchors[i] for i in rng.permutation(len(anchors))]
    for anchor in anchor_order:
        rels = [RELATIONS[i] for i in rng.permutation(len(RELATIONS))]
        for rel in rels:
            if not relation_holds(rel, target, anchor):
                continue
            parsed = ParsedDescription(name=base.name, color=base.color, size=base.size,
                                       relation=rel, anchor_color=anchor.color_name,
                                       anchor_name=anchor.raw_name)
            if matching_objects(objects, parsed) == [target.index]:
                return parsed
    for anchor in anchor_order:
        parsed = ParsedDescription(name=base.name, color=base.color, size=base.size,
                                   relation="closest", anchor_color=anchor.color_name,
                                   anchor_name=anchor.raw_name)
        if matching_objects(objects, parsed) == [target.index]:
            return parsed
    raise UnsatisfiableConfigError(
        f"cannot uniquely describe {target.raw_name} #{target.index}")


def scene_rng(seed: int, scene_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, scene_index]))


def generate_scene(config: GenConfig, seed: int, scene_index: int
                   ) -> tuple[Scene, list[DescriptionRecord]]:
    rng = scene_rng(seed, scene_index)
    last_error = None
    for _ in range(20):  # a dense draw can fail; resample the whole room
        room_w = float(rng.uniform(config.room_min, config.room_max))
        room_d = float(rng.uniform(config.room_min, config.room_max))
        try:
            placed = _place_objects(config, room_w, room_d, rng)
            break
        except UnsatisfiableConfigError as exc:
            last_error = exc
    else:
        raise UnsatisfiableConfigError(
            f"scene {scene_index}: {last_error}") from last_error
    positions, colors, normals, appearance = _build_scene_points(
        placed, room_w, room_d, config.points_per_scene, rng)
    scene_id = f"synth{scene_index:04d}"
    objects = [
        ObjectAnnotation(object_id=o.index, raw_name=o.raw_name,
                         sem_class=sem_class_of(o.raw_name), box=o.box())
        for o in placed
    ]
    scene = Scene(scene_id=scene_id, positions=positions, colors=colors,
                  normals=normals, appearance=appearance, objects=objects)

    records = []
    for obj in placed:
        for ann_id in range(config.descriptions_per_object):
            parsed = _describe_object(obj, placed, rng)
            text = render_description(obj, parsed)
            records.append(DescriptionRecord(
                scene_id=scene_id, object_id=obj.index, ann_id=ann_id,
                object_name=obj.raw_name, description=text,
                tokens=tuple(tokenize(text))))
    return scene, records


def generate_synthetic_dataset(config: GenConfig, seed: int, threads: int = 1) -> Dataset:
    """Build the full corpus; per-scene RNG streams make the result
    independent of worker scheduling."""
    indices = list(range(config.n_scenes))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda i: generate_scene(config, seed, i), indices))
    else:
        results = [generate_scene(config, seed, i) for i in indices]
    scenes = {}
    records = []
    for scene, recs in results:
        scenes[scene.scene_id] = scene
        records.extend(recs)
    ids = [f"synth{i:04d}" for i in indices]
    splits = SplitSpec(train=ids[:config.n_train],
                       val=ids[config.n_train:config.n_train + config.n_val],
                       test=ids[config.n_train + config.n_val:])
    return Dataset(scenes=scenes, records=records, splits=splits)


def recover_color_name(scene: Scene, obj: ObjectAnnotation) -> str:
    """Majority nearest-palette color over the object's points, skipping
    near-floor points so the floor cannot outvote the furniture."""
    inside = obj.box.contains(scene.positions)
    pts = scene.colors[inside & (scene.positions[:, 2] > 0.03)]
    if len(pts) == 0:
        pts = scene.colors[inside]
    d2 = ((pts[:, None, :].astype(np.float64) - PALETTE_RGB[None, :, :]) ** 2).sum(axis=-1)
    votes = np.bincount(d2.argmin(axis=1), minlength=len(PALETTE_NAMES))
    return PALETTE_NAMES[int(votes.argmax())]


def placed_objects_from_scene(scene: Scene) -> list[PlacedObject]:
    """Reconstruct the attribute view of a saved scene so descriptions can
    be re-verified without generator state."""
    out = []
    for obj in scene.objects:
        spec = CATEGORY_SPECS[obj.raw_name]
        base_vol = float(np.prod(spec.base_lengths))
        scale = float((obj.box.volume / base_vol) ** (1.0 / 3.0))
        out.append(PlacedObject(
            index=obj.object_id, raw_name=obj.raw_name,
            color_name=recover_color_name(scene, obj), scale=scale,
            lengths=np.asarray(obj.box.lengths), center=np.asarray(obj.box.center)))
    return out
