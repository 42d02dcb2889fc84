"""Image encoding: resolution-preserving convs, 4x4 patch projection, windows.

The conv stack keeps the input's spatial dims (3x3 kernels, stride 1,
padding 1, ReLU); the projection maps non-overlapping 4x4 patches to
d-vectors with LayerNorm; the patch grid is zero-padded to multiples of the
window side and tiled into L x L windows in raster order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch import nn

from .config import ModelConfig
from .records import ValidationError


@dataclass
class FeatureMap:
    """Channels-last conv features with the input's spatial dims."""

    values: torch.Tensor  # (H, W, c)

    @property
    def c(self) -> int:
        return self.values.shape[-1]


@dataclass
class WindowStack:
    """m window tiles of the patch grid, each (L, L, d), raster order."""

    windows: torch.Tensor  # (m, L, L, d)
    grid: tuple[int, int]  # (rows, cols) of the window layout
    pad: tuple[int, int]   # zero padding applied to the patch grid (bottom, right)

    @property
    def m(self) -> int:
        return self.windows.shape[0]


class ConvStack(nn.Module):
    """depth x [3x3 conv, stride 1, pad 1, ReLU]; spatial dims preserved.

    With depth 0 this is the identity (features = raw RGB channels).
    """

    def __init__(self, depth: int, channels: int):
        super().__init__()
        layers: list[nn.Module] = []
        in_ch = 3
        for _ in range(depth):
            layers += [nn.Conv2d(in_ch, channels, kernel_size=3, stride=1, padding=1), nn.ReLU()]
            in_ch = channels
        self.layers = nn.Sequential(*layers)
        self.out_channels = in_ch

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValidationError(f"expected (B, 3, H, W) RGB input, got {tuple(images.shape)}")
        return self.layers(images)


class PatchProjector(nn.Module):
    """Non-overlapping 4x4 patches -> d-vectors, LayerNorm'd, channels-last."""

    PATCH = 4

    def __init__(self, in_channels: int, d: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, d, kernel_size=self.PATCH, stride=self.PATCH)
        self.norm = nn.LayerNorm(d)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        B, C, H, W = features.shape
        if H % self.PATCH or W % self.PATCH:
            raise ValidationError(f"spatial dims {H}x{W} not divisible by {self.PATCH}")
        x = self.conv(features)              # (B, d, H/4, W/4)
        x = x.permute(0, 2, 3, 1)            # (B, H/4, W/4, d)
        return self.norm(x)


def window_partition(
    grid: torch.Tensor, window: int
) -> tuple[torch.Tensor, tuple[int, int], tuple[int, int]]:
    """Tile a (B, Ph, Pw, d) patch grid into (B, m, L, L, d) raster windows.

    The grid is zero-padded on the bottom/right to multiples of the window
    side; m = ceil(Ph/L) * ceil(Pw/L).
    """
    if window < 1:
        raise ValidationError("window side must be >= 1")
    B, Ph, Pw, d = grid.shape
    pad_h = (-Ph) % window
    pad_w = (-Pw) % window
    if pad_h or pad_w:
        grid = F.pad(grid, (0, 0, 0, pad_w, 0, pad_h))
    rows, cols = (Ph + pad_h) // window, (Pw + pad_w) // window
    x = grid.reshape(B, rows, window, cols, window, d)
    x = x.permute(0, 1, 3, 2, 4, 5).reshape(B, rows * cols, window, window, d)
    return x, (rows, cols), (pad_h, pad_w)


def window_reassemble(
    windows: torch.Tensor,
    grid: tuple[int, int],
    positions: torch.Tensor | None = None,
) -> torch.Tensor:
    """Position-based inverse of ``window_partition``.

    ``positions[k]`` gives window k's raster slot; default is identity, i.e.
    windows are stored in raster order.
    """
    B, m, L, _, d = windows.shape
    rows, cols = grid
    if m != rows * cols:
        raise ValidationError(f"{m} windows cannot tile a {rows}x{cols} layout")
    if positions is not None:
        slots = torch.empty(m, dtype=torch.long, device=windows.device)
        slots[positions] = torch.arange(m, device=windows.device)
        windows = windows[:, slots]
    x = windows.reshape(B, rows, cols, L, L, d)
    x = x.permute(0, 1, 3, 2, 4, 5).reshape(B, rows * L, cols * L, d)
    return x


class ImageEncoder(nn.Module):
    """Conv stack + patch projection + window partition."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.conv = ConvStack(cfg.conv_depth, cfg.d)
        self.proj = PatchProjector(self.conv.out_channels, cfg.d)

    def forward(self, images: torch.Tensor) -> tuple[torch.Tensor, tuple[int, int], tuple[int, int]]:
        grid = self.proj(self.conv(images))
        return window_partition(grid, self.cfg.L)


# --------------------------------------------------------------------------
# Per-sample wrappers matching the pipeline's unbatched types
# --------------------------------------------------------------------------

def conv_stack(image: torch.Tensor, stack: ConvStack) -> FeatureMap:
    """Run one (H, W, 3) image through a conv stack."""
    if image.ndim != 3 or image.shape[-1] != 3:
        raise ValidationError(f"expected (H, W, 3) RGB input, got {tuple(image.shape)}")
    if image.shape[0] < 4 or image.shape[1] < 4:
        raise ValidationError("image sides must be >= 4 pixels")
    x = image.permute(2, 0, 1).unsqueeze(0)
    out = stack(x)[0].permute(1, 2, 0)
    return FeatureMap(values=out)


def patch_project(features: FeatureMap, proj: PatchProjector) -> torch.Tensor:
    """Project one feature map to its (H/4, W/4, d) patch grid."""
    x = features.values.permute(2, 0, 1).unsqueeze(0)
    return proj(x)[0]


def partition_stack(grid: torch.Tensor, window: int) -> WindowStack:
    """Partition one (Ph, Pw, d) patch grid into a WindowStack."""
    windows, layout, pad = window_partition(grid.unsqueeze(0), window)
    return WindowStack(windows=windows[0], grid=layout, pad=pad)


def load_image(path: str | Path, size: int) -> tuple[torch.Tensor, tuple[int, int]]:
    """Load an RGB image, bilinear-resize to size x size, scale to [0, 1].

    Returns the (3, size, size) tensor and the original (width, height) so
    gold boxes can be rescaled.
    """
    with Image.open(path) as im:
        orig = im.size
        arr = np.asarray(im.convert("RGB").resize((size, size), Image.BILINEAR), dtype=np.float32)
    return torch.from_numpy(arr / 255.0).permute(2, 0, 1), orig
