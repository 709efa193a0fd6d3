"""Command-line pipeline: link -> train -> eval -> ablate.

Every subcommand is deterministic given its flags and seed. Effective
configuration values are echoed as "# key=value" header lines so runs are
reproducible from their logs alone. Reports are dual-emitted: an aligned
table for humans on stdout, JSON lines for machines in the output files.
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, dataio, evaluator, synth, trainer
from .errors import AptError, FormatError, ParseError
from .evaluator import DetectionRecord, GroundTruthRecord
from .head import AptHead, FusionMode, HeadConfig, TuningMode


def _echo(kv: dict) -> None:
    for key, value in kv.items():
        print(f"# {key}={value}")


def _load_stores(paths: list[str]) -> dataio.EmbeddingStore:
    return dataio.merge_stores([dataio.read_embeddings(p) for p in paths])


# ---------------------------------------------------------------------------
# link
# ---------------------------------------------------------------------------

def cmd_link(args) -> int:
    annotations = dataio.parse_annotations(args.annotations)
    linked, stats = dataio.apply_linking(annotations, args.threshold, args.metric)
    dataio.serialize_annotations(linked, args.out)
    _echo({"metric": args.metric, "threshold": args.threshold, "out": args.out})
    print(f"screens: {len(linked)}")
    print(f"elements linked: {stats.n_linked_elements}/{stats.n_elements} "
          f"(rate {stats.element_link_rate:.4f})")
    print(f"ocr items used: {stats.n_ocr_used}/{stats.n_ocr}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _build_train_config(args) -> trainer.TrainConfig:
    raw: dict = {}
    if args.config:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    head_raw = raw.pop("head", {})
    flag_map = {
        "learning_rate": args.learning_rate,
        "momentum": args.momentum,
        "batch_size": args.batch_size,
        "epochs": args.epochs,
        "seed": args.seed,
        "apt_layers": args.layers,
        "ocr_mode": args.ocr_mode,
    }
    for key, value in flag_map.items():
        if value is not None:
            raw[key] = value
    head_flags = {
        "fusion": args.fusion,
        "tuning": args.tuning,
        "tau": args.tau,
    }
    for key, value in head_flags.items():
        if value is not None:
            head_raw[key] = value
    if args.individual_weights:
        head_raw["share_weights"] = False
    if args.no_ocr:
        head_raw["use_ocr"] = False
    if args.no_vision:
        head_raw["use_vision"] = False
    return trainer.TrainConfig(head=HeadConfig(**head_raw), **raw)


def cmd_train(args) -> int:
    config = _build_train_config(args)
    annotations = dataio.parse_annotations(args.annotations)
    store = _load_stores(args.embeddings)
    categories = dataio.parse_categories(args.categories)
    prompts_all = trainer.load_prompts(store, categories)

    # the head trains on base categories only; novel ones stay zero-shot
    base = categories.indices_for_split("base")
    prompts = prompts_all.subset(base)
    train_batch = trainer.assemble_proposals(
        annotations, store, categories, ocr_mode=config.ocr_mode, restrict_to=base)
    val_batch = None
    if args.val_annotations:
        val_anns = dataio.parse_annotations(args.val_annotations)
        val_batch = trainer.assemble_proposals(
            val_anns, store, categories, ocr_mode=config.ocr_mode, restrict_to=base)

    flat = config.to_dict()
    head_cfg = flat.pop("head")
    _echo(flat)
    _echo({f"head.{k}": v for k, v in head_cfg.items()})
    _echo({"train_proposals": train_batch.n, "base_categories": len(base)})

    head, report = trainer.train(config, train_batch, prompts, val_batch=val_batch)
    checkpoint.save_head(head, args.checkpoint_out)
    trainer.write_report(report, args.report_out)

    for i, loss in enumerate(report.epoch_losses, start=1):
        print(f"epoch {i:3d}  mean_loss {loss:.6f}")
    if report.final_accuracy is not None:
        print(f"val accuracy (base categories): {report.final_accuracy:.4f}")
    print(f"wall_time_s {report.wall_time_s:.3f}")
    print(f"checkpoint: {args.checkpoint_out}")
    print(f"report: {args.report_out}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def classify_to_detections(
    head: AptHead,
    annotations,
    store,
    categories,
    split: str,
    ocr_mode: str = "concat",
) -> tuple[list[DetectionRecord], list[GroundTruthRecord]]:
    """Score every element against the split's prompts; boxes come from GT."""
    prompts_all = trainer.load_prompts(store, categories)
    subset = categories.indices_for_split(split)
    if not subset:
        raise ValueError(f"split {split!r} selects no categories")
    prompts = prompts_all.subset(subset)
    batch, refs = trainer.assemble_proposals(
        annotations, store, categories, ocr_mode=ocr_mode, with_refs=True)
    probs = head.predict(prompts.vectors, batch)
    detections = []
    for row, (ann, elem) in enumerate(refs):
        k = int(np.argmax(probs[row]))
        detections.append(DetectionRecord(
            image_id=ann.image_id, box=elem.box,
            category=prompts.names[k], score=float(probs[row, k])))
    split_names = set(prompts.names)
    ground_truths = [
        GroundTruthRecord(image_id=ann.image_id, box=elem.box, category=elem.category)
        for ann, elem in refs if elem.category in split_names
    ]
    return detections, ground_truths


def cmd_eval(args) -> int:
    annotations = dataio.parse_annotations(args.annotations)
    categories = dataio.parse_categories(args.categories)
    if args.detections:
        # pre-computed detections: skip classification, score them directly
        detections = evaluator.parse_detections(args.detections)
        split_names = set(categories.names_for_split(args.split))
        ground_truths = [
            GroundTruthRecord(image_id=ann.image_id, box=elem.box, category=elem.category)
            for ann in annotations for elem in ann.elements
            if elem.category in split_names
        ]
    else:
        if not args.checkpoint or not args.embeddings:
            raise AptError("eval needs --checkpoint and --embeddings (or --detections)")
        head = checkpoint.load_head(args.checkpoint)
        store = _load_stores(args.embeddings)
        if store.dim != head.d:
            raise AptError(
                f"checkpoint dim {head.d} does not match embedding dim {store.dim}")
        detections, ground_truths = classify_to_detections(
            head, annotations, store, categories, args.split, args.ocr_mode)
    report = evaluator.map_report(
        detections, ground_truths, categories,
        iou_threshold=args.iou_thr, split=args.split,
        averaged_thresholds=args.avg_thresholds)

    _echo({"split": args.split, "iou_thresholds": report.iou_thresholds,
           "source": args.detections or args.checkpoint})
    width = max((len(n) for n in report.per_category), default=8)
    print(f"{'category':<{width}}  {'AP':>8}  {'#gt':>5}  {'#det':>5}")
    for name, ap in report.per_category.items():
        ap_text = "   n/a" if ap is None else f"{ap:8.4f}"
        print(f"{name:<{width}}  {ap_text:>8}  {report.num_gt[name]:>5}  {report.num_det[name]:>5}")
    mean_text = "n/a" if report.mean is None else f"{report.mean:.4f}"
    print(f"mAP({args.split}) = {mean_text}")

    if args.report_out:
        with Path(args.report_out).open("w", encoding="utf-8") as fh:
            for name, ap in report.per_category.items():
                fh.write(json.dumps({
                    "type": "ap", "category": name, "ap": ap,
                    "num_gt": report.num_gt[name], "num_det": report.num_det[name],
                }) + "\n")
            fh.write(json.dumps({
                "type": "map", "split": args.split, "value": report.mean,
                "iou_thresholds": report.iou_thresholds,
            }) + "\n")
    if args.detections_out:
        evaluator.write_detections(detections, args.detections_out)
    return 0


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

_ABLATION_AXES = {
    "fusion": [("fusion", f.value) for f in FusionMode],
    "tuning": [("tuning", t.value) for t in TuningMode],
    "weights": [("weights", "shared"), ("weights", "individual")],
    "layers": [("layers", 2), ("layers", 3)],
    "terms": [("terms", "full"), ("terms", "no-ocr"), ("terms", "no-vision")],
}


def _fixture_paths(fixture_dir: str) -> dict[str, Path]:
    root = Path(fixture_dir)
    paths = {
        "train": root / "train.jsonl",
        "val": root / "val.jsonl",
        "embeddings": root / "embeddings.apte",
        "categories": root / "categories.txt",
    }
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        raise AptError("fixture directory is missing: " + ", ".join(missing))
    return paths


def run_ablation(fixture_dir: str, axes: list[str], seed: int = 7,
                 epochs: int | None = None) -> list[tuple[dict, float]]:
    for axis in axes:
        if axis not in _ABLATION_AXES:
            raise AptError(
                f"unknown ablation axis {axis!r}; expected one of {sorted(_ABLATION_AXES)}")
    paths = _fixture_paths(fixture_dir)
    store = dataio.read_embeddings(paths["embeddings"])
    categories = dataio.parse_categories(paths["categories"])
    train_anns, _ = dataio.apply_linking(dataio.parse_annotations(paths["train"]))
    val_anns, _ = dataio.apply_linking(dataio.parse_annotations(paths["val"]))
    prompts_all = trainer.load_prompts(store, categories)
    base = categories.indices_for_split("base")
    prompts = prompts_all.subset(base)
    train_batch = trainer.assemble_proposals(train_anns, store, categories, restrict_to=base)
    val_batch = trainer.assemble_proposals(val_anns, store, categories, restrict_to=base)

    results: list[tuple[dict, float]] = []
    baseline_head = AptHead(prompts.d, HeadConfig(use_ocr=False, use_vision=False))
    baseline_acc = trainer.evaluate_accuracy(baseline_head, prompts, val_batch)
    results.append(({"variant": "frozen-baseline"}, baseline_acc))

    combos = itertools.product(*(_ABLATION_AXES[a] for a in axes))
    for combo in combos:
        overrides = dict(combo)
        head_cfg = HeadConfig(
            fusion=overrides.get("fusion", FusionMode.SUM),
            tuning=overrides.get("tuning", TuningMode.PROMPT_BOTH),
            share_weights=overrides.get("weights", "shared") == "shared",
            use_ocr=overrides.get("terms", "full") != "no-ocr",
            use_vision=overrides.get("terms", "full") != "no-vision",
        )
        config = trainer.TrainConfig(
            seed=seed, head=head_cfg,
            apt_layers=overrides.get("layers", 2),
            **({"epochs": epochs} if epochs else {}),
        )
        _, report = trainer.train(config, train_batch, prompts, val_batch=val_batch)
        row = {axis: overrides[axis] for axis in axes}
        results.append((row, report.final_accuracy))
    return results


def cmd_ablate(args) -> int:
    axes = [a.strip() for a in args.axes.split(",") if a.strip()]
    if not axes:
        raise AptError("--axes must name at least one axis")
    results = run_ablation(args.fixture, axes, seed=args.seed, epochs=args.epochs)
    _echo({"fixture": args.fixture, "axes": ",".join(axes), "seed": args.seed})
    labels = [
        row.get("variant") or " ".join(f"{k}={v}" for k, v in row.items())
        for row, _ in results
    ]
    width = max(len(s) for s in labels)
    print(f"{'variant':<{width}}  {'val_acc':>8}")
    for label, (_, acc) in zip(labels, results):
        print(f"{label:<{width}}  {acc:8.4f}")
    if args.out:
        with Path(args.out).open("w", encoding="utf-8") as fh:
            for row, acc in results:
                fh.write(json.dumps({"type": "ablation", **row, "val_accuracy": acc}) + "\n")
    return 0


# ---------------------------------------------------------------------------
# synth + inspect
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    kwargs = {
        f.name: getattr(args, f.name)
        for f in dataclasses.fields(synth.SynthConfig)
        if getattr(args, f.name, None) is not None
    }
    config = synth.SynthConfig(**kwargs)
    dataset = synth.generate(config)
    paths = synth.write_dataset(dataset, args.out)
    _echo(dataclasses.asdict(config))
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def cmd_inspect(args) -> int:
    dim, records = dataio.read_records(args.path)
    keys = [k for k, _ in records]
    kind = "head-checkpoint" if "meta" in keys else "embedding-store"
    if kind == "embedding-store":
        dataio.read_embeddings(args.path)  # full invariant check
    print(f"kind: {kind}")
    print(f"dim: {dim}")
    print(f"records: {len(records)}")
    for key in keys[: args.limit]:
        print(f"  {key!r}")
    if len(keys) > args.limit:
        print(f"  ... {len(keys) - args.limit} more")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aptkit",
        description="OCR-conditioned prompt tuning over precomputed embeddings",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("link", help="attach OCR descriptions to elements")
    p.add_argument("annotations")
    p.add_argument("--out", required=True)
    p.add_argument("--metric", choices=["iou", "iom"], default="iom")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("train", help="train the tuning head on base categories")
    p.add_argument("annotations")
    p.add_argument("--embeddings", nargs="+", required=True)
    p.add_argument("--categories", required=True)
    p.add_argument("--checkpoint-out", required=True)
    p.add_argument("--report-out", required=True)
    p.add_argument("--val-annotations")
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--fusion", choices=[f.value for f in FusionMode])
    p.add_argument("--tuning", choices=[t.value for t in TuningMode])
    p.add_argument("--layers", type=int, choices=[2, 3])
    p.add_argument("--individual-weights", action="store_true")
    p.add_argument("--no-ocr", action="store_true")
    p.add_argument("--no-vision", action="store_true")
    p.add_argument("--ocr-mode", choices=["concat", "average"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="mAP over a category split")
    p.add_argument("annotations")
    p.add_argument("--checkpoint", help="head checkpoint to classify with")
    p.add_argument("--embeddings", nargs="+", default=[])
    p.add_argument("--categories", required=True)
    p.add_argument("--detections", help="score pre-computed detections instead")
    p.add_argument("--split", choices=["all", "novel", "base"], default="all")
    p.add_argument("--iou-thr", type=float, default=0.5)
    p.add_argument("--avg-thresholds", action="store_true",
                   help="average AP over IoU 0.5:0.05:0.95")
    p.add_argument("--ocr-mode", choices=["concat", "average"], default="concat")
    p.add_argument("--report-out")
    p.add_argument("--detections-out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="cartesian ablation sweep on a fixture")
    p.add_argument("fixture", help="directory with train/val/embeddings/categories")
    p.add_argument("--axes", required=True,
                   help="comma-separated: fusion,tuning,weights,layers,terms")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="generate a deterministic synthetic fixture")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-val", dest="n_val", type=int)
    p.add_argument("--vision-noise", dest="vision_noise", type=float)
    p.add_argument("--ocr-signal", dest="ocr_signal", type=float)
    p.add_argument("--ocr-noise", dest="ocr_noise", type=float)
    p.add_argument("--ambiguity", type=int)
    p.add_argument("--n-novel", dest="n_novel", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inspect", help="validate and summarize a container file")
    p.add_argument("path")
    p.add_argument("--limit", type=int, default=10)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
