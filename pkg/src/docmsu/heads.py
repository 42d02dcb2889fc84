"""Task heads: sarcasm detection, token localization, anchor-free boxes.

The box head is a decoupled objectness/regression head on the two coarsest
backbone scales. Each cell predicts an objectness logit plus a box as
(center offset within the cell, log width, log height), decoded as
center = (cell + raw[:2]) * stride and size = exp(raw[2:]) * stride, so any
gold box is exactly representable from its assigned cell and the regression
path stays differentiable (clipping happens only at inference).
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from . import boxkernels
from .records import BoundingBox


class DetectHead(nn.Module):
    """Global average pool of the final stage -> affine -> sarcasm logit."""

    def __init__(self, in_width: int):
        super().__init__()
        self.linear = nn.Linear(in_width, 1)

    def forward(self, last_stage: torch.Tensor) -> torch.Tensor:
        pooled = last_stage.mean(dim=(1, 2))        # (B, C)
        return self.linear(pooled).squeeze(-1)      # (B,)


class TokenHead(nn.Module):
    """Per-cell affine on the token grid -> (B, L, L) token logits."""

    def __init__(self, d: int):
        super().__init__()
        self.linear = nn.Linear(d, 1)

    def forward(self, token_features: torch.Tensor) -> torch.Tensor:
        return self.linear(token_features).squeeze(-1)


class BoxHead(nn.Module):
    """Decoupled anchor-free head over two backbone scales."""

    def __init__(self, in_widths: tuple[int, int], stem_width: int):
        super().__init__()
        self.stems = nn.ModuleList(
            nn.Sequential(nn.Conv2d(c, stem_width, kernel_size=1), nn.ReLU())
            for c in in_widths
        )
        self.obj_branches = nn.ModuleList(
            nn.Conv2d(stem_width, 1, kernel_size=1) for _ in in_widths
        )
        self.reg_branches = nn.ModuleList(
            nn.Conv2d(stem_width, 4, kernel_size=1) for _ in in_widths
        )

    def forward(
        self, scale_features: list[torch.Tensor]
    ) -> list[tuple[torch.Tensor, torch.Tensor]]:
        """Channels-last stage grids -> per-scale (obj logits, raw offsets)."""
        outputs = []
        for i, feats in enumerate(scale_features):
            x = self.stems[i](feats.permute(0, 3, 1, 2))
            obj = self.obj_branches[i](x).squeeze(1)            # (B, H, W)
            reg = self.reg_branches[i](x).permute(0, 2, 3, 1)   # (B, H, W, 4)
            outputs.append((obj, reg))
        return outputs


def cell_origins(h: int, w: int, dtype, device) -> tuple[torch.Tensor, torch.Tensor]:
    """Integer (column, row) origin grids for an h x w cell layout."""
    ys = torch.arange(h, dtype=dtype, device=device)
    xs = torch.arange(w, dtype=dtype, device=device)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return gx, gy


def decode_offsets(reg: torch.Tensor, stride: int) -> torch.Tensor:
    """Raw (B, H, W, 4) regression -> xyxy boxes (no clipping).

    Channels are (center dx, center dy, log w, log h) in cell units.
    """
    B, H, W, _ = reg.shape
    gx, gy = cell_origins(H, W, reg.dtype, reg.device)
    cx = (gx + reg[..., 0]) * stride
    cy = (gy + reg[..., 1]) * stride
    half_w = reg[..., 2].exp() * stride / 2
    half_h = reg[..., 3].exp() * stride / 2
    return torch.stack((cx - half_w, cy - half_h, cx + half_w, cy + half_h), dim=-1)


def decode_boxes(
    box_outputs: list[tuple[torch.Tensor, torch.Tensor]],
    strides: tuple[int, ...],
    image_size: int,
    conf_threshold: float,
    nms_iou: float = 0.65,
    orig_sizes: list[tuple[int, int]] | None = None,
) -> list[list[tuple[BoundingBox, float]]]:
    """Threshold, clip, and NMS the per-cell predictions of a batch.

    Boxes come back in the original image's pixel coordinates when
    ``orig_sizes`` (width, height per sample) is given.
    """
    B = box_outputs[0][0].shape[0]
    per_sample: list[list[tuple[BoundingBox, float]]] = []
    for b in range(B):
        boxes = []
        scores = []
        for (obj, reg), stride in zip(box_outputs, strides):
            probs = torch.sigmoid(obj[b])
            keep = probs >= conf_threshold
            if not bool(keep.any()):
                continue
            xyxy = decode_offsets(reg[b : b + 1], stride)[0][keep]
            xyxy = xyxy.clamp(0.0, float(image_size))
            boxes.append(xyxy.detach().cpu().double().numpy())
            scores.append(probs[keep].detach().cpu().double().numpy())
        if not boxes:
            per_sample.append([])
            continue
        xyxy = np.concatenate(boxes, axis=0)
        conf = np.concatenate(scores, axis=0)
        ok = (xyxy[:, 2] > xyxy[:, 0]) & (xyxy[:, 3] > xyxy[:, 1])
        xyxy, conf = xyxy[ok], conf[ok]
        keep_idx = boxkernels.nms(xyxy, conf, nms_iou)
        sx = sy = 1.0
        if orig_sizes is not None:
            sx = orig_sizes[b][0] / image_size
            sy = orig_sizes[b][1] / image_size
        out = []
        for i in keep_idx:
            x1, y1, x2, y2 = xyxy[i]
            out.append(
                (
                    BoundingBox(x1 * sx, y1 * sy, (x2 - x1) * sx, (y2 - y1) * sy),
                    float(conf[i]),
                )
            )
        per_sample.append(out)
    return per_sample
