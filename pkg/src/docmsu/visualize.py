"""Per-stage feature heatmaps rendered as overlays on the input image."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from matplotlib import colormaps
from PIL import Image

from .model import SarcasmModel
from .pipeline import EncodedSample, make_batch
from .text_encoder import batch_square


@torch.no_grad()
def stage_feature_maps(model: SarcasmModel, sample: EncodedSample) -> list[np.ndarray]:
    """Channel-norm maps of the four backbone stages for one sample."""
    cfg = model.cfg
    batch = make_batch([sample], cfg.L * cfg.L)
    projected = model.projector(batch.emb.to(model.dtype))
    doc, _ = batch_square(projected, batch.lengths, cfg.L)
    if cfg.modality == "image":
        doc = doc * 0
    windows, grid, _ = model.image_encoder(batch.images.to(model.dtype))
    if cfg.modality == "text":
        windows = windows * 0
    feats = model.backbone(windows + doc.unsqueeze(1), grid)
    maps = []
    for stage in feats.stages:
        norm = stage[0].norm(dim=-1)                    # (Hs, Ws)
        arr = norm.cpu().numpy()
        lo, hi = arr.min(), arr.max()
        maps.append((arr - lo) / (hi - lo + 1e-12))
    return maps


def render_attention_maps(
    model: SarcasmModel,
    sample: EncodedSample,
    out_dir: str | Path,
    prefix: str = "stage",
    alpha: float = 0.55,
) -> list[Path]:
    """Write one PNG overlay per backbone stage; returns the file paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    size = model.cfg.image_size
    base = (sample.image.permute(1, 2, 0).numpy() * 255).astype(np.uint8)
    cmap = colormaps["inferno"]
    paths = []
    for s, heat in enumerate(stage_feature_maps(model, sample)):
        heat_img = Image.fromarray((heat * 255).astype(np.uint8)).resize(
            (size, size), Image.BILINEAR
        )
        colored = (cmap(np.asarray(heat_img) / 255.0)[..., :3] * 255).astype(np.uint8)
        blended = (alpha * colored + (1 - alpha) * base).astype(np.uint8)
        path = out_dir / f"{prefix}{s}.png"
        Image.fromarray(blended, "RGB").save(path)
        paths.append(path)
    return paths
