"""Command-line entry point.

Commands: gen-data, stats, train, eval, infer, ablate, print-config.
Commands never mutate their input files; all randomness is controlled by
--seed (or the seed inside --config).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .config import RunConfig


def _load_config(args) -> RunConfig:
    config = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        overrides["threads"] = args.threads
    if getattr(args, "mode", None):
        overrides["train_mode"] = args.mode
    if getattr(args, "iters", None) is not None:
        overrides["train_iters"] = args.iters
    if getattr(args, "lobjcls", None):
        overrides["train_use_lobjcls"] = args.lobjcls == "on"
    if getattr(args, "features", None) is not None:
        wanted = {f.strip() for f in args.features.split(",") if f.strip()}
        unknown = wanted - {"rgb", "appearance", "normals", "height"}
        if unknown:
            raise ValueError(f"unknown feature flags: {sorted(unknown)}")
        overrides.update(
            feat_use_rgb="rgb" in wanted,
            feat_use_appearance="appearance" in wanted,
            feat_use_normals="normals" in wanted,
            feat_use_height="height" in wanted,
        )
    if getattr(args, "seeds", None):
        overrides["eval_seeds"] = [int(s) for s in args.seeds.split(",") if s.strip()]
    return dataclasses.replace(config, **overrides) if overrides else config


def _cmd_print_config(args) -> int:
    print(_load_config(args).to_text(), end="")
    return 0


def _cmd_gen_data(args) -> int:
    from .synthetic import generate_synthetic_dataset

    config = _load_config(args)
    dataset = generate_synthetic_dataset(config.gen_config(), config.seed,
                                         threads=config.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset.save(out)
    (out / "config.txt").write_text(config.to_text(), encoding="utf-8")
    print(f"wrote {len(dataset.scenes)} scenes, {len(dataset.records)} descriptions to {out}")
    return 0


def _cmd_stats(args) -> int:
    from .scenes import Dataset, load_description_records
    from .stats import LEXICON_KINDS, dataset_stats, load_lexicon

    data = Path(args.data)
    if data.is_dir():
        records = Dataset.load(data).records
    else:
        records = load_description_records(data)
    lexicons = None
    if args.lexicons:
        lexicons = {kind: load_lexicon(Path(args.lexicons) / f"{kind}.txt")
                    for kind in LEXICON_KINDS}
    report = dataset_stats(records, lexicons)
    print(report.to_text())
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    return 0


def _cmd_train(args) -> int:
    from .scenes import Dataset
    from .train import train

    config = _load_config(args)
    dataset = Dataset.load(args.data)
    result = train(dataset, config, out_dir=args.out,
                   detector_checkpoint=args.checkpoint, log=print)
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _cmd_eval(args) -> int:
    from .evaluation import Evaluator
    from .model import GroundingModel
    from .scenes import Dataset

    config = _load_config(args)
    dataset = Dataset.load(args.data)
    baseline = args.baseline
    model = None
    if baseline != "oracle_cat_rand":
        if not args.checkpoint:
            raise ValueError(f"baseline {baseline!r} requires --checkpoint")
        model = GroundingModel.load(args.checkpoint)
    evaluator = Evaluator(model, dataset, split=args.split,
                          nms_threshold=config.eval_nms_threshold,
                          threads=config.threads)
    report = evaluator.run(baseline, seeds=config.eval_seeds,
                           truncation=args.truncate, with_map=args.with_map)
    print(f"{baseline} ({args.split}, truncation={args.truncate})")
    for key in ("unique_acc25", "unique_acc50", "multiple_acc25", "multiple_acc50",
                "overall_acc25", "overall_acc50"):
        print(f"  {key:16s} {report.mean[key]:.4f} +- {report.std[key]:.4f}")
    if report.map50 is not None:
        print(f"  mAP@0.5          {report.map50:.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval_report.json").write_text(report.to_json() + "\n", encoding="utf-8")
        (out / "acc.csv").write_text(report.acc_csv(), encoding="utf-8")
        if report.per_class_ap is not None:
            (out / "map.csv").write_text(report.map_csv(), encoding="utf-8")
        print(f"wrote report to {out}")
    return 0


def _cmd_infer(args) -> int:
    import numpy as np

    from .features import assemble_features
    from .grounding import select_with_description
    from .language import tokenize
    from .model import GroundingModel
    from .scenes import load_scene

    config = _load_config(args)
    model = GroundingModel.load(args.checkpoint)
    scene = load_scene(args.scene)
    tokens = tokenize(args.text)
    if not tokens:
        raise ValueError("empty description")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 11]))
    feats = assemble_features(scene, model.feature_config, rng, dtype=model.dtype)
    fwd = model.detector.forward(feats, rng)
    embedding = model.encode(tokens)
    result = select_with_description(fwd.proposals, model.fusion, embedding,
                                     config.eval_nms_threshold)
    cx, cy, cz = result.box.center
    rx, ry, rz = result.box.lengths
    record = {
        "scene_id": scene.scene_id,
        "ann_id": 0,
        "box": {"cx": cx, "cy": cy, "cz": cz, "rx": rx, "ry": ry, "rz": rz},
        "confidence": result.confidence,
    }
    line = json.dumps(record)
    print(line)
    if args.out:
        Path(args.out).write_text(line + "\n", encoding="utf-8")
    return 0


def _cmd_ablate(args) -> int:
    from .ablation import run_ablation
    from .scenes import Dataset

    config = _load_config(args)
    dataset = Dataset.load(args.data)
    rows = run_ablation(dataset, config, out_dir=args.out,
                        eval_seed=config.train_eval_seed, log=print)
    for row in rows:
        print(f"{row['features']:32s} overall@0.25 {row['overall_acc25']:.3f} "
              f"@0.5 {row['overall_acc50']:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refloc3d",
        description="Localize described objects in 3D point-cloud scenes.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, seeds=False, mode=False, features=False):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="master random seed")
        p.add_argument("--threads", type=int, help="worker cap for parallel stages")
        if seeds:
            p.add_argument("--seeds", help="comma list of evaluation seeds")
        if mode:
            p.add_argument("--mode", choices=["end_to_end", "frozen_detector"])
        if features:
            p.add_argument("--features",
                           help="comma list from rgb,appearance,normals,height")
            p.add_argument("--lobjcls", choices=["on", "off"],
                           help="language-to-object classification loss")

    p = sub.add_parser("print-config", help="print the effective configuration")
    common(p, seeds=True, mode=True, features=True)
    p.set_defaults(fn=_cmd_print_config)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("stats", help="summarize a description corpus")
    p.add_argument("--data", required=True,
                   help="dataset directory or description record file")
    p.add_argument("--lexicons", help="directory of lexicon .txt files")
    p.add_argument("--out", help="also write the report as JSON")
    p.set_defaults(fn=_cmd_stats)

    p = sub.add_parser("train", help="train a model")
    common(p, mode=True, features=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--iters", type=int, help="override training iterations")
    p.add_argument("--checkpoint", help="detector checkpoint for frozen_detector mode")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or baseline")
    common(p, seeds=True)
    p.add_argument("--checkpoint", help="model checkpoint")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", default="val", choices=["train", "val", "test"])
    p.add_argument("--baseline", default="model",
                   choices=["oracle_cat_rand", "oracle_refer", "votenet_rand",
                            "votenet_best", "model"])
    p.add_argument("--truncate", default="whole",
                   choices=["whole", "first_sentence", "object_name", "semantic_label"])
    p.add_argument("--with-map", action="store_true",
                   help="also compute per-class detection AP")
    p.add_argument("--out", help="report output directory")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("infer", help="localize one description in one scene")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True, help="scene JSON file")
    p.add_argument("--text", required=True, help="the description")
    p.add_argument("--out", help="write the output record to a file")
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("ablate", help="run the feature-ablation grid")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--iters", type=int, help="per-cell training iterations")
    p.set_defaults(fn=_cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - last-resort diagnostics
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
