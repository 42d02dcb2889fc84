"""Dataset ingestion, serialization, deterministic splitting, and fixtures.

File format: UTF-8 JSONL, one record per line with fields
``id, topic, text, image, sarcastic, spans, boxes`` where ``spans`` is a list
of ``[start, end]`` token pairs and ``boxes`` a list of ``[x, y, w, h]``;
both are omitted for non-sarcastic records.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
from PIL import Image

from .records import (
    AnnotationSet,
    BoundingBox,
    DatasetRecord,
    SplitConfig,
    TokenSpan,
    ValidationError,
)

logger = logging.getLogger(__name__)

RECORD_FIELDS = ("id", "topic", "text", "image", "sarcastic", "spans", "boxes")

# Observed corpus class balance: 34,130 sarcastic out of 102,588 samples.
SARCASTIC_RATIO = 34130 / 102588

TOPICS = (
    "science",
    "health",
    "sport",
    "technology",
    "entertainment",
    "education",
    "business",
    "environment",
    "politics",
)

GOLD_ANNOTATOR = "gold"


def record_from_dict(obj: dict, *, where: str = "") -> DatasetRecord:
    """Build a validated record from one parsed JSONL object."""
    unknown = set(obj) - set(RECORD_FIELDS)
    if unknown:
        raise ValidationError(f"{where}unknown fields {sorted(unknown)}")
    missing = {"id", "topic", "text", "image", "sarcastic"} - set(obj)
    if missing:
        raise ValidationError(f"{where}missing fields {sorted(missing)}")
    spans = tuple(TokenSpan(int(s), int(e)) for s, e in obj.get("spans", ()))
    boxes = tuple(BoundingBox(*b) for b in obj.get("boxes", ()))
    gold = None
    if spans or boxes:
        gold = AnnotationSet(GOLD_ANNOTATOR, spans, boxes)
    return DatasetRecord(
        id=str(obj["id"]),
        topic=str(obj["topic"]),
        text=str(obj["text"]),
        image_path=str(obj["image"]),
        sarcastic=bool(obj["sarcastic"]),
        gold=gold,
    )


def record_to_dict(rec: DatasetRecord) -> dict:
    """Serialize a record to the JSONL schema (normalized field order)."""
    out = {
        "id": rec.id,
        "topic": rec.topic,
        "text": rec.text,
        "image": rec.image_path,
        "sarcastic": rec.sarcastic,
    }
    if rec.sarcastic and rec.gold is not None:
        out["spans"] = [[s.start, s.end] for s in rec.gold.spans]
        out["boxes"] = [list(b.as_tuple()) for b in rec.gold.boxes]
    return out


def truncate_record(rec: DatasetRecord, max_tokens: int) -> DatasetRecord:
    """Clip a record's text (and gold spans) to the first ``max_tokens`` tokens.

    Spans entirely past the cut are dropped; spans crossing it are clipped.
    """
    tokens = rec.tokens
    if len(tokens) <= max_tokens:
        return rec
    text = " ".join(tokens[:max_tokens])
    gold = rec.gold
    if gold is not None:
        spans = tuple(
            TokenSpan(s.start, min(s.end, max_tokens))
            for s in gold.spans
            if s.start < max_tokens
        )
        gold = AnnotationSet(gold.annotator_id, spans, gold.boxes)
    return DatasetRecord(rec.id, rec.topic, text, rec.image_path, rec.sarcastic, gold)


def load_dataset(
    path: str | Path,
    *,
    images_root: str | Path | None = None,
    strict: bool = True,
    max_tokens: int | None = None,
) -> list[DatasetRecord]:
    """Load and validate a JSONL dataset file.

    ``images_root`` resolves relative image paths; when an image file exists,
    gold boxes are checked against its bounds. A missing image raises under
    ``strict`` and warns otherwise. ``max_tokens`` truncates long documents
    (with a logged warning) so spans stay within the encoder's square grid.
    """
    path = Path(path)
    root = Path(images_root) if images_root is not None else path.parent
    records: list[DatasetRecord] = []
    n_truncated = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path.name}:{lineno}: "
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{where}malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise ValidationError(f"{where}record must be a JSON object")
            try:
                rec = record_from_dict(obj, where=where)
            except ValidationError:
                raise
            except (TypeError, KeyError) as exc:
                raise ValidationError(f"{where}{exc}") from exc
            if max_tokens is not None:
                truncated = truncate_record(rec, max_tokens)
                if truncated is not rec:
                    n_truncated += 1
                rec = truncated
            _check_image(rec, root, strict=strict)
            records.append(rec)
    if n_truncated:
        logger.warning("%s: truncated %d document(s) to %d tokens", path.name, n_truncated, max_tokens)
    return records


def _check_image(rec: DatasetRecord, root: Path, *, strict: bool) -> None:
    img_path = root / rec.image_path
    if not img_path.is_file():
        msg = f"record {rec.id!r}: image file not found: {img_path}"
        if strict:
            raise ValidationError(msg)
        logger.warning(msg)
        return
    if rec.gold is not None and rec.gold.boxes:
        with Image.open(img_path) as im:
            width, height = im.size
        for b in rec.gold.boxes:
            if not b.inside(width, height):
                raise ValidationError(
                    f"record {rec.id!r}: box {b.as_tuple()} outside {width}x{height} image"
                )


def save_dataset(records: list[DatasetRecord], path: str | Path) -> None:
    """Write records as normalized JSONL (idempotent with ``load_dataset``)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_dict(rec), ensure_ascii=False) + "\n")


def dataset_stats(records: list[DatasetRecord]) -> dict:
    """Topic histogram, class balance, and token-length distribution."""
    topics: dict[str, int] = {}
    sarcastic_by_topic: dict[str, int] = {}
    lengths = []
    for rec in records:
        topics[rec.topic] = topics.get(rec.topic, 0) + 1
        if rec.sarcastic:
            sarcastic_by_topic[rec.topic] = sarcastic_by_topic.get(rec.topic, 0) + 1
        lengths.append(rec.n_tokens)
    arr = np.asarray(lengths)
    hist, edges = np.histogram(arr, bins=min(10, max(1, len(set(lengths)))))
    return {
        "n_records": len(records),
        "topics": dict(sorted(topics.items())),
        "sarcastic_ratio": float(sum(r.sarcastic for r in records) / max(1, len(records))),
        "sarcastic_by_topic": dict(sorted(sarcastic_by_topic.items())),
        "token_length": {
            "min": int(arr.min()),
            "mean": float(arr.mean()),
            "max": int(arr.max()),
            "histogram": {"counts": hist.tolist(), "edges": edges.tolist()},
        },
    }


def split_dataset(
    records: list[DatasetRecord], cfg: SplitConfig
) -> tuple[list[DatasetRecord], list[DatasetRecord], list[DatasetRecord]]:
    """Deterministic random partition into train/val/test.

    Val and test take ``round(N * ratio)`` records; the remainder goes to
    train. Input ordering is preserved within each split.
    """
    if not records:
        raise ValidationError("cannot split an empty record list")
    n = len(records)
    n_val = round(n * cfg.ratios[1])
    n_test = round(n * cfg.ratios[2])
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise ValidationError(
            f"split of {n} records with ratios {cfg.ratios} leaves an empty split "
            f"(sizes {n_train}/{n_val}/{n_test})"
        )
    order = np.random.default_rng(cfg.seed).permutation(n)
    train_idx = sorted(order[:n_train].tolist())
    val_idx = sorted(order[n_train : n_train + n_val].tolist())
    test_idx = sorted(order[n_train + n_val :].tolist())
    pick = lambda idx: [records[i] for i in idx]
    return pick(train_idx), pick(val_idx), pick(test_idx)


# --------------------------------------------------------------------------
# Synthetic fixtures
# --------------------------------------------------------------------------

_FILLER = (
    "the a an of to in on for with at by from after before over under near "
    "city council report market season game study school plan budget storm "
    "river bridge company leader crowd museum festival garden harbor train "
    "announced said showed opened closed warned praised launched delayed "
    "new old local national annual major minor record recent quiet busy"
).split()

_MARKERS = ("flawless", "unbreakable", "perfect", "genius", "spotless", "heroic")

# Cross-modal disagreement corpus: the label is the XOR of a text keyword
# class and an image color class, so neither modality alone predicts it.
_XOR_KEYWORDS = ("upbeat", "grim")


def gen_fixtures(
    n_samples: int,
    seed: int,
    image_size: int = 224,
    out_dir: str | Path | None = None,
    signal: str = "standard",
) -> list[DatasetRecord]:
    """Generate a synthetic desk-scale corpus.

    ``standard``: 20-100 token documents; sarcastic samples (~1/3 of the
    corpus, matching the observed class balance) carry marker-token spans and
    a bright planted rectangle whose box is the gold visual clue.

    ``cross_modal_xor``: short documents (<= 16 tokens) with a keyword token,
    images with a center rectangle colored by channel; the sarcasm label is
    true iff the two classes disagree, so it is detectable only by combining
    modalities. Classes are balanced (~1/2 sarcastic).

    When ``out_dir`` is given, PNG images are written under
    ``out_dir/images/`` and records reference them relatively.
    """
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    if signal not in ("standard", "cross_modal_xor"):
        raise ValidationError(f"unknown fixture signal {signal!r}")
    rng = np.random.default_rng(seed)
    if signal == "standard":
        n_sarcastic = round(n_samples * SARCASTIC_RATIO)
        flags = np.zeros(n_samples, dtype=bool)
        flags[:n_sarcastic] = True
        rng.shuffle(flags)
    else:
        # balanced (text class, image class) combos; label = XOR
        combos = [(i % 2, (i // 2) % 2) for i in range(n_samples)]
        rng.shuffle(combos)

    out_root = Path(out_dir) if out_dir is not None else None
    if out_root is not None:
        (out_root / "images").mkdir(parents=True, exist_ok=True)

    records = []
    for i in range(n_samples):
        rec_id = f"fx-{i:05d}"
        topic = TOPICS[int(rng.integers(len(TOPICS)))]
        image_rel = f"images/{rec_id}.png"
        if signal == "standard":
            rec, img = _standard_sample(rng, rec_id, topic, image_rel, bool(flags[i]), image_size)
        else:
            rec, img = _xor_sample(rng, rec_id, topic, image_rel, combos[i], image_size)
        if out_root is not None:
            Image.fromarray(img, "RGB").save(out_root / image_rel)
        records.append(rec)
    return records


def _noise_image(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.integers(0, 40, size=(size, size, 3), dtype=np.uint8)


def _plant_rectangle(
    rng: np.random.Generator, img: np.ndarray, color: tuple[int, int, int]
) -> BoundingBox:
    size = img.shape[0]
    side_min, side_max = max(4, size // 6), max(5, size // 3)
    w = int(rng.integers(side_min, side_max + 1))
    h = int(rng.integers(side_min, side_max + 1))
    x = int(rng.integers(0, size - w))
    y = int(rng.integers(0, size - h))
    img[y : y + h, x : x + w] = color
    return BoundingBox(x, y, w, h)


def _standard_sample(rng, rec_id, topic, image_rel, sarcastic, image_size):
    n = int(rng.integers(20, 101))
    tokens = [str(_FILLER[j]) for j in rng.integers(0, len(_FILLER), size=n)]
    img = _noise_image(rng, image_size)
    gold = None
    if sarcastic:
        n_spans = int(rng.integers(1, 3))
        spans = []
        used: set[int] = set()
        for _ in range(n_spans):
            length = int(rng.integers(1, 4))
            start = int(rng.integers(0, n - length + 1))
            span = TokenSpan(start, start + length)
            if any(j in used for j in span.indices()):
                continue
            used.update(span.indices())
            for j in span.indices():
                tokens[j] = str(_MARKERS[int(rng.integers(len(_MARKERS)))])
            spans.append(span)
        n_boxes = 1 + int(rng.random() < 0.3)
        boxes = []
        for _ in range(n_boxes):
            color = (int(rng.integers(200, 256)), int(rng.integers(150, 256)), 0)
            boxes.append(_plant_rectangle(rng, img, color))
        gold = AnnotationSet(GOLD_ANNOTATOR, tuple(spans), tuple(boxes))
    rec = DatasetRecord(rec_id, topic, " ".join(tokens), image_rel, sarcastic, gold)
    return rec, img


def _xor_sample(rng, rec_id, topic, image_rel, combo, image_size):
    text_cls, image_cls = combo
    n = int(rng.integers(10, 17))
    tokens = [str(_FILLER[j]) for j in rng.integers(0, len(_FILLER), size=n)]
    tokens[0] = _XOR_KEYWORDS[text_cls]
    img = _noise_image(rng, image_size)
    color = (230, 20, 20) if image_cls == 0 else (20, 230, 20)
    half = image_size // 4
    lo, hi = image_size // 2 - half, image_size // 2 + half
    img[lo:hi, lo:hi] = color
    box = BoundingBox(lo, lo, hi - lo, hi - lo)
    sarcastic = text_cls != image_cls
    gold = None
    if sarcastic:
        gold = AnnotationSet(GOLD_ANNOTATOR, (TokenSpan(0, 1),), (box,))
    rec = DatasetRecord(rec_id, topic, " ".join(tokens), image_rel, sarcastic, gold)
    return rec, img
