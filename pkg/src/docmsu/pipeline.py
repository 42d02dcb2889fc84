"""Record -> tensor preparation: encoding, caching, batching.

Documents are truncated to the L^2 grid capacity, token targets are span
membership over the surviving tokens, and gold boxes are rescaled to the
resized image's coordinates (xyxy).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch

from .config import ModelConfig
from .data import truncate_record
from .image_encoder import load_image
from .records import DatasetRecord
from .text_encoder import encode_tokens


@dataclass
class EncodedSample:
    """One record in tensor form, ready for batching."""

    id: str
    emb: torch.Tensor            # (n, d_lm)
    n: int
    label: float
    token_target: torch.Tensor   # (L*L,) float, span membership
    gold_boxes: torch.Tensor     # (K, 4) xyxy in resized-image coords
    image: torch.Tensor          # (3, S, S)
    orig_size: tuple[int, int]   # original (width, height)


@dataclass
class Batch:
    ids: list[str]
    emb: torch.Tensor            # (B, L*L, d_lm), zero-padded
    lengths: list[int]
    images: torch.Tensor         # (B, 3, S, S)
    labels: torch.Tensor         # (B,)
    token_targets: torch.Tensor  # (B, L*L)
    gold_boxes: list[torch.Tensor]
    orig_sizes: list[tuple[int, int]]

    def to(self, dtype: torch.dtype) -> "Batch":
        return Batch(
            ids=self.ids,
            emb=self.emb.to(dtype),
            lengths=self.lengths,
            images=self.images.to(dtype),
            labels=self.labels.to(dtype),
            token_targets=self.token_targets.to(dtype),
            gold_boxes=[g.to(dtype) for g in self.gold_boxes],
            orig_sizes=self.orig_sizes,
        )

    @property
    def size(self) -> int:
        return len(self.ids)


def encode_record(
    rec: DatasetRecord,
    backend,
    cfg: ModelConfig,
    images_root: str | Path,
) -> EncodedSample:
    capacity = cfg.L * cfg.L
    clipped = truncate_record(rec, capacity)
    emb = encode_tokens(clipped.text, backend)

    target = torch.zeros(capacity)
    for idx in clipped.gold_token_indices():
        target[idx] = 1.0

    image, orig = load_image(Path(images_root) / rec.image_path, cfg.image_size)
    sx = cfg.image_size / orig[0]
    sy = cfg.image_size / orig[1]
    boxes = []
    if clipped.gold is not None:
        for b in clipped.gold.boxes:
            x1, y1, x2, y2 = b.scaled(sx, sy).to_xyxy()
            boxes.append([x1, y1, x2, y2])
    return EncodedSample(
        id=rec.id,
        emb=emb.values,
        n=emb.n,
        label=float(rec.sarcastic),
        token_target=target,
        gold_boxes=torch.tensor(boxes, dtype=torch.float32).reshape(-1, 4),
        image=image,
        orig_size=orig,
    )


def encode_records(records, backend, cfg, images_root) -> list[EncodedSample]:
    return [encode_record(r, backend, cfg, images_root) for r in records]


def make_batch(samples: list[EncodedSample], capacity: int) -> Batch:
    """Stack encoded samples; embeddings are zero-padded to L*L rows."""
    B = len(samples)
    d_lm = samples[0].emb.shape[1]
    emb = torch.zeros(B, capacity, d_lm)
    for i, s in enumerate(samples):
        emb[i, : s.n] = s.emb
    return Batch(
        ids=[s.id for s in samples],
        emb=emb,
        lengths=[s.n for s in samples],
        images=torch.stack([s.image for s in samples]),
        labels=torch.tensor([s.label for s in samples]),
        token_targets=torch.stack([s.token_target for s in samples]),
        gold_boxes=[s.gold_boxes for s in samples],
        orig_sizes=[s.orig_size for s in samples],
    )


def iter_batches(samples: list[EncodedSample], capacity: int, batch_size: int, order=None):
    idx = list(range(len(samples))) if order is None else list(order)
    for start in range(0, len(idx), batch_size):
        chunk = [samples[i] for i in idx[start : start + batch_size]]
        yield make_batch(chunk, capacity)
