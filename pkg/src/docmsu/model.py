"""End-to-end model: text projection + image windows -> fusion -> heads."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .config import ModelConfig
from .fusion import FusionBackbone, batched_fuse
from .heads import BoxHead, DetectHead, TokenHead, decode_boxes
from .image_encoder import ImageEncoder
from .metrics import SamplePrediction
from .pipeline import Batch
from .records import BoundingBox, ValidationError
from .text_encoder import TokenProjector, batch_square


@dataclass
class ModelOutput:
    """Raw batched head outputs (tensors keep their autograd graph)."""

    detect_logit: torch.Tensor                 # (B,)
    sarcasm_prob: torch.Tensor                 # (B,)
    token_logits: torch.Tensor                 # (B, L, L)
    token_probs: torch.Tensor                  # (B, L, L)
    token_mask: torch.Tensor                   # (B, L, L) bool
    box_outputs: list[tuple[torch.Tensor, torch.Tensor]]
    box_strides: tuple[int, ...]
    image_size: int


@dataclass
class PredictionBundle:
    """Per-sample outputs: probability, per-token probabilities, scored boxes."""

    sarcasm_prob: float
    token_probs: list[float]
    boxes: list[tuple[BoundingBox, float]] = field(default_factory=list)


class SarcasmModel(nn.Module):
    """Document/image encoders, additive fusion, backbone, and three heads.

    ``cfg.modality`` zeroes one branch ("text" keeps only the document grid,
    "image" only the windows) while leaving the architecture and parameter
    count untouched, for ablation runs.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.projector = TokenProjector(cfg.d_lm, cfg.d)
        self.image_encoder = ImageEncoder(cfg)
        self.backbone = FusionBackbone(cfg)
        widths = cfg.stage_widths
        self.detect_head = DetectHead(widths[3])
        self.token_head = TokenHead(cfg.d)
        self.box_head = BoxHead((widths[2], widths[3]), cfg.head_width)
        self.box_scales = (2, 3)

    @property
    def dtype(self) -> torch.dtype:
        return self.projector.linear.weight.dtype

    def forward(self, batch: Batch) -> ModelOutput:
        cfg = self.cfg
        emb = batch.emb.to(self.dtype)
        images = batch.images.to(self.dtype)

        projected = self.projector(emb)                         # (B, L*L, d)
        doc, mask = batch_square(projected, batch.lengths, cfg.L)
        if cfg.modality == "image":
            doc = doc * 0
        windows, grid, _pad = self.image_encoder(images)
        if cfg.modality == "text":
            windows = windows * 0

        fused = batched_fuse(doc, windows)
        feats = self.backbone(fused, grid)

        detect_logit = self.detect_head(feats.stages[3])
        token_logits = self.token_head(feats.token_features)
        box_outputs = self.box_head([feats.stages[s] for s in self.box_scales])
        strides = tuple(feats.strides[s] for s in self.box_scales)

        return ModelOutput(
            detect_logit=detect_logit,
            sarcasm_prob=torch.sigmoid(detect_logit),
            token_logits=token_logits,
            token_probs=torch.sigmoid(token_logits),
            token_mask=mask,
            box_outputs=box_outputs,
            box_strides=strides,
            image_size=cfg.image_size,
        )


def bundles_from_output(
    output: ModelOutput,
    lengths: list[int],
    orig_sizes: list[tuple[int, int]] | None = None,
    conf_threshold: float = 0.5,
) -> list[PredictionBundle]:
    """Split a batched output into per-sample prediction bundles."""
    boxes = decode_boxes(
        output.box_outputs,
        output.box_strides,
        output.image_size,
        conf_threshold,
        orig_sizes=orig_sizes,
    )
    bundles = []
    sarcasm = output.sarcasm_prob.detach()
    token_probs = output.token_probs.detach().reshape(output.token_probs.shape[0], -1)
    for b, n in enumerate(lengths):
        bundles.append(
            PredictionBundle(
                sarcasm_prob=float(sarcasm[b]),
                token_probs=[float(p) for p in token_probs[b, :n]],
                boxes=boxes[b],
            )
        )
    return bundles


@torch.no_grad()
def predict_samples(
    model: SarcasmModel,
    samples,
    batch_size: int = 16,
    conf_threshold: float = 0.5,
) -> dict[str, SamplePrediction]:
    """Run inference over encoded samples -> evaluation-form predictions."""
    from .pipeline import iter_batches

    if not samples:
        raise ValidationError("no samples to predict")
    model.eval()
    out: dict[str, SamplePrediction] = {}
    capacity = model.cfg.L * model.cfg.L
    for batch in iter_batches(samples, capacity, batch_size):
        output = model(batch)
        bundles = bundles_from_output(
            output, batch.lengths, batch.orig_sizes, conf_threshold
        )
        for sid, bundle in zip(batch.ids, bundles):
            out[sid] = SamplePrediction(
                id=sid,
                sarcasm_prob=bundle.sarcasm_prob,
                token_probs=bundle.token_probs,
                boxes=bundle.boxes,
            )
    return out
