"""Feature-ablation driver: trains and evaluates the cross product of
input-feature configurations with the language classifier toggled."""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .config import RunConfig
from .scenes import Dataset

# (label, rgb, appearance, normals, height)
FEATURE_GRID = [
    ("xyz", False, False, False, False),
    ("xyz+rgb", True, False, False, False),
    ("xyz+rgb+normals", True, False, True, False),
    ("xyz+appearance", False, True, False, False),
    ("xyz+appearance+normals", False, True, True, False),
]


def ablation_cell_config(base: RunConfig, flags, lobjcls: bool) -> RunConfig:
    _, rgb, app, normals, height = flags
    return dataclasses.replace(
        base,
        feat_use_rgb=rgb,
        feat_use_appearance=app,
        feat_use_normals=normals,
        feat_use_height=height,
        train_use_lobjcls=lobjcls,
        train_eval_interval=0,
    )


def run_ablation(dataset: Dataset, base: RunConfig, out_dir: str | Path | None = None,
                 eval_seed: int = 42, log=None) -> list[dict]:
    """One row per grid cell: train on the given corpus, evaluate once."""
    from .evaluation import Evaluator
    from .train import train

    rows = []
    for flags in FEATURE_GRID:
        for lobjcls in (False, True):
            label = flags[0] + ("+lobjcls" if lobjcls else "")
            config = ablation_cell_config(base, flags, lobjcls)
            if log:
                log(f"ablation cell: {label}")
            result = train(dataset, config)
            report = Evaluator(result.model, dataset, split="val",
                               nms_threshold=base.eval_nms_threshold).run(
                "model", seeds=[eval_seed])
            row = {"features": label}
            row.update({k: report.mean[k] for k in (
                "unique_acc25", "unique_acc50", "multiple_acc25", "multiple_acc50",
                "overall_acc25", "overall_acc50")})
            rows.append(row)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_ablation_csv(rows, out_dir / "ablation.csv")
    return rows


def write_ablation_csv(rows: list[dict], path: str | Path) -> None:
    header = ("features,unique_acc25,unique_acc50,multiple_acc25,multiple_acc50,"
              "overall_acc25,overall_acc50")
    lines = [header]
    for row in rows:
        lines.append(",".join([row["features"]] + [
            f"{row[k]:.4f}" for k in ("unique_acc25", "unique_acc50", "multiple_acc25",
                                      "multiple_acc50", "overall_acc25", "overall_acc50")]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
