"""Training losses: detection BCE, token BCE over real tokens, box CIoU.

Box supervision assigns each gold box to the cell containing its center at
every head scale; assigned cells regress their decoded box against the gold
with the complete-IoU loss (1 - IoU + normalized center distance + aspect
consistency) and all cells carry objectness BCE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .heads import decode_offsets
from .model import ModelOutput
from .pipeline import Batch
from .records import ValidationError


@dataclass
class LossTriple:
    detection: torch.Tensor
    token: torch.Tensor
    box: torch.Tensor


def binary_cross_entropy(
    probs: torch.Tensor, targets: torch.Tensor, eps: float = 1e-7
) -> torch.Tensor:
    """Elementwise BCE on probabilities (clamped away from 0/1)."""
    p = probs.clamp(eps, 1.0 - eps)
    return -(targets * p.log() + (1.0 - targets) * (1.0 - p).log())


def ciou_loss(pred_xyxy: torch.Tensor, gold_xyxy: torch.Tensor, eps: float = 1e-9) -> torch.Tensor:
    """Complete-IoU loss per box pair; exactly 0 for identical boxes."""
    px1, py1, px2, py2 = pred_xyxy.unbind(-1)
    gx1, gy1, gx2, gy2 = gold_xyxy.unbind(-1)
    pw, ph = px2 - px1, py2 - py1
    gw, gh = gx2 - gx1, gy2 - gy1

    iw = (torch.minimum(px2, gx2) - torch.maximum(px1, gx1)).clamp(min=0)
    ih = (torch.minimum(py2, gy2) - torch.maximum(py1, gy1)).clamp(min=0)
    inter = iw * ih
    union = pw * ph + gw * gh - inter
    iou = inter / union.clamp(min=eps)

    cw = torch.maximum(px2, gx2) - torch.minimum(px1, gx1)
    ch = torch.maximum(py2, gy2) - torch.minimum(py1, gy1)
    diag = (cw**2 + ch**2).clamp(min=eps)
    center = ((px1 + px2) - (gx1 + gx2)) ** 2 / 4 + ((py1 + py2) - (gy1 + gy2)) ** 2 / 4

    v = (4 / math.pi**2) * (torch.atan(gw / gh.clamp(min=eps)) - torch.atan(pw / ph.clamp(min=eps))) ** 2
    alpha = v / (1.0 - iou + v).clamp(min=eps)
    return 1.0 - iou + center / diag + alpha * v


def detection_loss(output: ModelOutput, batch: Batch) -> torch.Tensor:
    """Mean BCE of the sarcasm probability against the binary label."""
    labels = batch.labels.to(output.sarcasm_prob.dtype)
    return binary_cross_entropy(output.sarcasm_prob, labels).mean()


def token_loss(output: ModelOutput, batch: Batch) -> torch.Tensor:
    """Mean BCE over unpadded tokens against span membership."""
    B = output.token_probs.shape[0]
    probs = output.token_probs.reshape(B, -1)
    targets = batch.token_targets.to(probs.dtype)
    mask = output.token_mask.reshape(B, -1).to(probs.dtype)
    per_cell = binary_cross_entropy(probs, targets) * mask
    return per_cell.sum() / mask.sum().clamp(min=1)


def box_loss(output: ModelOutput, batch: Batch) -> torch.Tensor:
    """Center-assigned CIoU plus objectness BCE over both head scales.

    A cell regresses the first gold box whose center falls in it; further
    golds landing on an already-claimed cell (possible at coarse scales)
    keep its objectness target positive but add no regression term, so a
    perfect prediction still reaches zero loss.
    """
    for i, g in enumerate(batch.gold_boxes):
        if g.shape[0] == 0:
            raise ValidationError(
                f"record {batch.ids[i]!r} has no gold boxes; localization loss needs gold"
            )
    ciou_terms = []
    obj_terms = []
    for (obj, reg), stride in zip(output.box_outputs, output.box_strides):
        B, H, W = obj.shape
        decoded = decode_offsets(reg, stride)                   # (B, H, W, 4)
        target = torch.zeros_like(obj)
        claimed: set[tuple[int, int, int]] = set()
        for b in range(B):
            for k in range(batch.gold_boxes[b].shape[0]):
                g = batch.gold_boxes[b][k].to(obj.dtype)
                ci = int(((g[1] + g[3]) / 2 / stride).clamp(0, H - 1))
                cj = int(((g[0] + g[2]) / 2 / stride).clamp(0, W - 1))
                target[b, ci, cj] = 1.0
                if (b, ci, cj) not in claimed:
                    claimed.add((b, ci, cj))
                    ciou_terms.append(ciou_loss(decoded[b, ci, cj], g))
        obj_terms.append(binary_cross_entropy(torch.sigmoid(obj), target).reshape(-1))
    ciou_mean = torch.stack(ciou_terms).mean()
    obj_mean = torch.cat(obj_terms).mean()
    return ciou_mean + obj_mean


def compute_losses(output: ModelOutput, batch: Batch) -> LossTriple:
    """All three task losses; gold clues must be present for localization."""
    return LossTriple(
        detection=detection_loss(output, batch),
        token=token_loss(output, batch),
        box=box_loss(output, batch),
    )
