"""Command-line entry point.

Subcommands: ``ingest``, ``validate-annotations``, ``train``, ``evaluate``,
``visualize-attention``, ``gen-fixtures``. Shared flags ``--config``,
``--seed``, ``--out``; flag values override ``DOCMSU_*`` environment
variables, which override the config file. Exit codes: 0 success,
2 validation failure, 3 missing artifact, 1 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
from pathlib import Path

from .agreement import confidence_scores, flag_challenging
from .config import RunConfig
from .data import dataset_stats, gen_fixtures, load_dataset, save_dataset, split_dataset
from .metrics import SamplePrediction, evaluate_corpus
from .records import (
    AnnotationSet,
    BoundingBox,
    DatasetRecord,
    SplitConfig,
    TokenSpan,
    ValidationError,
)
from .training import (
    MissingArtifactError,
    evaluate_records,
    load_checkpoint,
    split_hash,
    train,
)

logger = logging.getLogger("docmsu")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_VALIDATION = 2
EXIT_MISSING = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="docmsu", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None, help="run config JSON")
        p.add_argument("--seed", type=int, default=None, help="override the run seed")
        p.add_argument("--out", type=Path, default=None, help="output directory")

    p = sub.add_parser("ingest", help="validate + normalize a dataset file")
    common(p)
    p.add_argument("--input", type=Path, default=None, help="dataset JSONL (default: config dataset)")
    p.add_argument("--images-root", type=Path, default=None)
    p.add_argument("--lenient-images", action="store_true", help="warn instead of failing on missing images")
    p.add_argument("--max-tokens", type=int, default=None, help="truncate documents to this many tokens")

    p = sub.add_parser("validate-annotations", help="score triple annotations")
    common(p)
    p.add_argument("--input", type=Path, required=True, help="JSONL of {id, annotations:[3]}")
    p.add_argument("--fraction", type=float, default=0.05, help="challenging fraction")

    p = sub.add_parser("train", help="train one task")
    common(p)
    p.add_argument("--task", choices=["detect", "localize"], default=None)
    p.add_argument("--seeds", type=int, default=1, help="train k seeds and aggregate val metrics")

    p = sub.add_parser("evaluate", help="score a checkpoint or a predictions file")
    common(p)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--predictions", type=Path, default=None, help="score this predictions JSONL instead of running inference")
    p.add_argument("--gold", type=Path, default=None, help="gold dataset JSONL (default: config dataset)")

    p = sub.add_parser("visualize-attention", help="render per-stage heatmap overlays")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--record", required=True, help="record id to render")

    p = sub.add_parser("gen-fixtures", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--n", type=int, default=90)
    p.add_argument("--image-size", type=int, default=224)
    p.add_argument("--signal", choices=["standard", "cross_modal_xor"], default="standard")

    return parser


def _load_run_config(args) -> RunConfig:
    overrides: dict = {}
    if args.out is not None:
        overrides["out"] = str(args.out)
    if getattr(args, "task", None):
        overrides["task"] = args.task
    if args.seed is not None:
        overrides.setdefault("model", {})["seed"] = args.seed
        overrides.setdefault("split", {})["seed"] = args.seed
    return RunConfig.load(args.config, overrides=overrides)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
    logger.info("wrote %s", path)


def _dataset_records(cfg: RunConfig, *, max_tokens=None) -> list[DatasetRecord]:
    if not cfg.dataset:
        raise ValidationError("no dataset configured (set 'dataset' in the run config)")
    path = Path(cfg.dataset)
    if not path.is_file():
        raise MissingArtifactError(f"dataset not found: {path}")
    return load_dataset(
        path,
        images_root=cfg.images_root or path.parent,
        strict=cfg.strict_images,
        max_tokens=max_tokens,
    )


def _splits(cfg: RunConfig, records):
    sc = SplitConfig(tuple(cfg.split["ratios"]), int(cfg.split["seed"]))
    return split_dataset(records, sc)


def cmd_ingest(args) -> int:
    cfg = _load_run_config(args)
    source = args.input or (Path(cfg.dataset) if cfg.dataset else None)
    if source is None:
        raise ValidationError("ingest needs --input or a config dataset path")
    if not Path(source).is_file():
        raise MissingArtifactError(f"input not found: {source}")
    records = load_dataset(
        source,
        images_root=args.images_root or cfg.images_root or Path(source).parent,
        strict=not args.lenient_images,
        max_tokens=args.max_tokens,
    )
    if not records:
        raise ValidationError(f"{source}: no records")
    out = _out_dir(cfg)
    save_dataset(records, out / "dataset.jsonl")
    _write_json(out / "stats.json", dataset_stats(records))
    logger.info("ingested %d records", len(records))
    return EXIT_OK


def _annotation_from_dict(obj: dict) -> AnnotationSet:
    return AnnotationSet(
        annotator_id=str(obj["annotator_id"]),
        spans=tuple(TokenSpan(int(s), int(e)) for s, e in obj.get("spans", ())),
        boxes=tuple(BoundingBox(*b) for b in obj.get("boxes", ())),
    )


def cmd_validate_annotations(args) -> int:
    cfg = _load_run_config(args)
    if not args.input.is_file():
        raise MissingArtifactError(f"input not found: {args.input}")
    reports = []
    bad: list[str] = []
    with open(args.input, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                annots = [_annotation_from_dict(a) for a in obj["annotations"]]
                reports.append(confidence_scores(annots, sample_id=str(obj["id"])))
            except (ValidationError, KeyError, TypeError, json.JSONDecodeError) as exc:
                bad.append(f"{args.input.name}:{lineno}: {exc}")
    if bad:
        for msg in bad:
            logger.error(msg)
        raise ValidationError(f"{len(bad)} invalid annotation line(s)")
    if not reports:
        raise ValidationError(f"{args.input}: no samples")
    reports = flag_challenging(reports, args.fraction)
    out = _out_dir(cfg)
    path = out / "confidence.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(
                json.dumps(
                    {
                        "id": r.sample_id,
                        "per_annotator": r.per_annotator,
                        "best": r.best,
                        "sample_confidence": r.sample_confidence,
                        "challenging": r.challenging,
                    }
                )
                + "\n"
            )
    logger.info(
        "scored %d samples; %d flagged challenging -> %s",
        len(reports),
        sum(r.challenging for r in reports),
        path,
    )
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    records = _dataset_records(cfg)
    train_recs, val_recs, test_recs = _splits(cfg, records)
    model_cfg = cfg.model_config()
    out = _out_dir(cfg)
    images_root = cfg.images_root or str(Path(cfg.dataset).parent)
    hashes = {
        "train": split_hash(train_recs),
        "val": split_hash(val_recs),
        "test": split_hash(test_recs),
    }

    base_seed = args.seed if args.seed is not None else model_cfg.seed
    seeds = [base_seed + k for k in range(args.seeds)]
    reports = []
    for k, seed in enumerate(seeds):
        run_dir = out if len(seeds) == 1 else out / f"seed-{seed}"
        _, result = train(
            train_recs,
            model_cfg,
            cfg.task,
            images_root,
            epochs=cfg.train["epochs"],
            batch_size=cfg.train["batch_size"],
            max_steps=cfg.train.get("max_steps"),
            lr=cfg.train.get("lr"),
            weight_decay=cfg.train.get("weight_decay", 0.01),
            seed=seed,
            out_dir=run_dir,
            extra_manifest={"split_hashes": hashes},
        )
        model, _, _ = load_checkpoint(result.checkpoint)
        report, _ = evaluate_records(
            model,
            val_recs,
            images_root,
            batch_size=cfg.train["batch_size"],
            box_conf_threshold=cfg.metrics["box_conf_threshold"],
            token_cutoff=cfg.metrics["token_cutoff"],
            detect_cutoff=cfg.metrics["detect_cutoff"],
            f1_conf_threshold=cfg.metrics["f1_conf_threshold"],
            em_strict=cfg.metrics["em_strict"],
        )
        reports.append(report.to_dict())
        logger.info("seed %d: final train loss %.4f", seed, result.final_loss)
    if len(reports) == 1:
        _write_json(out / "val-report.json", reports[0])
    else:
        agg = {
            key: {
                "mean": statistics.mean(r[key] for r in reports),
                "variance": statistics.pvariance([r[key] for r in reports]),
            }
            for key in reports[0]
        }
        _write_json(out / "val-report.json", {"seeds": seeds, "per_seed": reports, "aggregate": agg})
    return EXIT_OK


def _load_predictions(path: Path) -> dict[str, SamplePrediction]:
    preds: dict[str, SamplePrediction] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                boxes = [
                    (BoundingBox(x, y, w, h), float(s))
                    for x, y, w, h, s in obj.get("boxes", ())
                ]
                preds[str(obj["id"])] = SamplePrediction(
                    id=str(obj["id"]),
                    sarcasm_prob=float(obj["sarcasm_prob"]),
                    token_probs=[float(p) for p in obj.get("token_probs", ())],
                    boxes=boxes,
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ValidationError(f"{path.name}:{lineno}: {exc}") from exc
    return preds


def _dump_predictions(preds: dict[str, SamplePrediction], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sid in sorted(preds):
            p = preds[sid]
            fh.write(
                json.dumps(
                    {
                        "id": p.id,
                        "sarcasm_prob": p.sarcasm_prob,
                        "token_probs": p.token_probs,
                        "boxes": [[*b.as_tuple(), s] for b, s in p.boxes],
                    }
                )
                + "\n"
            )


def cmd_evaluate(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(cfg)
    metric_opts = dict(
        token_cutoff=cfg.metrics["token_cutoff"],
        detect_cutoff=cfg.metrics["detect_cutoff"],
        f1_conf_threshold=cfg.metrics["f1_conf_threshold"],
        em_strict=cfg.metrics["em_strict"],
    )
    if args.predictions is not None:
        if not args.predictions.is_file():
            raise MissingArtifactError(f"predictions not found: {args.predictions}")
        gold_path = args.gold or cfg.dataset
        if not gold_path or not Path(gold_path).is_file():
            raise MissingArtifactError(f"gold dataset not found: {gold_path}")
        records = load_dataset(
            gold_path,
            images_root=cfg.images_root or Path(gold_path).parent,
            strict=False,
        )
        preds = _load_predictions(args.predictions)
        known = {r.id for r in records}
        unknown = sorted(set(preds) - known)
        if unknown:
            raise ValidationError(f"predictions reference unknown record ids {unknown[:5]}")
        # score the predicted subset (e.g. one split) against its gold records
        covered = [r for r in records if r.id in preds]
        if not covered:
            raise ValidationError("no overlap between predictions and gold records")
        report = evaluate_corpus(preds, covered, **metric_opts)
    else:
        if args.checkpoint is None:
            raise ValidationError("evaluate needs --checkpoint or --predictions")
        model, _, _ = load_checkpoint(args.checkpoint)
        records = _dataset_records(cfg)
        splits = dict(zip(("train", "val", "test"), _splits(cfg, records)))
        chosen = splits[args.split]
        images_root = cfg.images_root or str(Path(cfg.dataset).parent)
        report, preds = evaluate_records(
            model,
            chosen,
            images_root,
            batch_size=cfg.train["batch_size"],
            box_conf_threshold=cfg.metrics["box_conf_threshold"],
            **metric_opts,
        )
        _dump_predictions(preds, out / f"predictions-{args.split}.jsonl")
    _write_json(out / "metric-report.json", report.to_dict())
    return EXIT_OK


def cmd_visualize_attention(args) -> int:
    cfg = _load_run_config(args)
    model, model_cfg, _ = load_checkpoint(args.checkpoint)
    records = _dataset_records(cfg)
    matches = [r for r in records if r.id == args.record]
    if not matches:
        raise MissingArtifactError(f"record {args.record!r} not in {cfg.dataset}")
    from .pipeline import encode_record
    from .text_encoder import make_backend
    from .visualize import render_attention_maps

    images_root = cfg.images_root or str(Path(cfg.dataset).parent)
    backend = make_backend(model_cfg.backend, model_cfg.d_lm)
    sample = encode_record(matches[0], backend, model_cfg, images_root)
    out = _out_dir(cfg)
    paths = render_attention_maps(model, sample, out, prefix=f"{args.record}-stage")
    logger.info("wrote %d heatmaps under %s", len(paths), out)
    return EXIT_OK


def cmd_gen_fixtures(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(cfg)
    seed = args.seed if args.seed is not None else 0
    records = gen_fixtures(args.n, seed, args.image_size, out_dir=out, signal=args.signal)
    save_dataset(records, out / "dataset.jsonl")
    _write_json(out / "stats.json", dataset_stats(records))
    logger.info("generated %d fixture records under %s", len(records), out)
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "validate-annotations": cmd_validate_annotations,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "visualize-attention": cmd_visualize_attention,
    "gen-fixtures": cmd_gen_fixtures,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except MissingArtifactError as exc:
        logger.error("%s", exc)
        return EXIT_MISSING
    except ValidationError as exc:
        logger.error("%s", exc)
        return EXIT_VALIDATION
    except Exception:  # internal error; keep the traceback for diagnosis
        logger.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
