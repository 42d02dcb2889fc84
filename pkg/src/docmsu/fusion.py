"""Additive document-window fusion and the four-stage windowed-attention core.

Fusion adds the L x L x d document grid to every image window. The fused
windows are reassembled into the padded patch grid and pushed through four
stages of window attention blocks (alternating regular and shifted
partitions) separated by 2x2 patch merging, halving the side and doubling
the channels per stage. Per-token features are read from the first stage's
output by averaging each token's grid cell across all window tiles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig
from .image_encoder import WindowStack, window_reassemble
from .records import ValidationError
from .text_encoder import DocumentMatrix


@dataclass
class FusedStack:
    """Image windows with the document grid added to each tile."""

    windows: torch.Tensor        # (m, L, L, d)
    doc_mask: torch.Tensor       # (L, L) bool
    grid: tuple[int, int]
    pad: tuple[int, int]

    @property
    def m(self) -> int:
        return self.windows.shape[0]


@dataclass
class BackboneFeatures:
    """Per-stage grids plus the window-averaged token grid."""

    stages: list[torch.Tensor]      # 4 tensors (B, side_s, side_s, d * 2^s)
    token_features: torch.Tensor    # (B, L, L, d)

    @property
    def strides(self) -> tuple[int, ...]:
        # stage s cells cover (4 * 2^s)-pixel squares of the resized image
        return tuple(4 * 2**s for s in range(len(self.stages)))


def fuse(doc: DocumentMatrix, imgs: WindowStack) -> FusedStack:
    """Add the document grid to every image window (elementwise)."""
    if doc.values.shape != imgs.windows.shape[1:]:
        raise ValidationError(
            f"document grid {tuple(doc.values.shape)} does not match window "
            f"shape {tuple(imgs.windows.shape[1:])}"
        )
    return FusedStack(
        windows=imgs.windows + doc.values,
        doc_mask=doc.mask,
        grid=imgs.grid,
        pad=imgs.pad,
    )


def batched_fuse(doc_values: torch.Tensor, windows: torch.Tensor) -> torch.Tensor:
    """(B, L, L, d) + (B, m, L, L, d) -> per-window addition."""
    if doc_values.shape[-3:] != windows.shape[-3:]:
        raise ValidationError(
            f"document grid {tuple(doc_values.shape[-3:])} does not match "
            f"window shape {tuple(windows.shape[-3:])}"
        )
    return windows + doc_values.unsqueeze(1)


def _tile_windows(x: torch.Tensor, ws: int) -> torch.Tensor:
    """(B, H, W, C) -> (B * nW, ws*ws, C) raster window tiles."""
    B, H, W, C = x.shape
    x = x.reshape(B, H // ws, ws, W // ws, ws, C)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, ws * ws, C)


def _untile_windows(x: torch.Tensor, ws: int, H: int, W: int) -> torch.Tensor:
    B = x.shape[0] // ((H // ws) * (W // ws))
    x = x.reshape(B, H // ws, W // ws, ws, ws, -1)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(B, H, W, -1)


class WindowAttention(nn.Module):
    """Multi-head self-attention within windows, with relative position bias."""

    def __init__(self, dim: int, window: int, num_heads: int):
        super().__init__()
        self.dim = dim
        self.window = window
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

        self.relative_position_bias_table = nn.Parameter(
            torch.zeros((2 * window - 1) ** 2, num_heads)
        )
        coords = torch.stack(
            torch.meshgrid(torch.arange(window), torch.arange(window), indexing="ij")
        ).flatten(1)                                            # (2, ws*ws)
        rel = coords[:, :, None] - coords[:, None, :]           # (2, N, N)
        rel = rel.permute(1, 2, 0) + (window - 1)
        index = rel[..., 0] * (2 * window - 1) + rel[..., 1]
        self.register_buffer("relative_position_index", index, persistent=False)
        nn.init.trunc_normal_(self.relative_position_bias_table, std=0.02)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        B_, N, C = x.shape
        qkv = self.qkv(x).reshape(B_, N, 3, self.num_heads, C // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4).unbind(0)          # (B_, nh, N, hd)
        attn = (q * self.scale) @ k.transpose(-2, -1)
        bias = self.relative_position_bias_table[self.relative_position_index.reshape(-1)]
        bias = bias.reshape(N, N, self.num_heads).permute(2, 0, 1)
        attn = attn + bias.unsqueeze(0)
        if mask is not None:
            nW = mask.shape[0]
            attn = attn.reshape(B_ // nW, nW, self.num_heads, N, N) + mask[:, None]
            attn = attn.reshape(-1, self.num_heads, N, N)
        attn = attn.softmax(dim=-1)
        x = (attn @ v).transpose(1, 2).reshape(B_, N, C)
        return self.proj(x)


class SwinBlock(nn.Module):
    """One windowed-attention block at a fixed spatial resolution.

    The window is clamped to the grid side when the grid is smaller, and the
    shifted variant carries the standard region mask so rolled-in cells do
    not attend across the wrap boundary.
    """

    def __init__(
        self,
        dim: int,
        input_res: tuple[int, int],
        num_heads: int,
        window: int,
        shift: int,
        mlp_ratio: float = 4.0,
    ):
        super().__init__()
        H, W = input_res
        self.input_res = input_res
        ws = min(window, H, W)
        self.window = ws
        # a window covering the whole grid has nothing to shift against
        self.shift = ws // 2 if (shift > 0 and ws < min(H, W)) else 0
        self.pad = ((-H) % ws, (-W) % ws)   # bottom, right

        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, ws, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

        mask = self._region_mask() if self.shift > 0 else None
        self.register_buffer("attn_mask", mask, persistent=False)

    def _region_mask(self) -> torch.Tensor:
        H, W = self.input_res
        Hp, Wp = H + self.pad[0], W + self.pad[1]
        ws, shift = self.window, self.shift
        img = torch.zeros(1, Hp, Wp, 1)
        cnt = 0
        for hs in (slice(0, -ws), slice(-ws, -shift), slice(-shift, None)):
            for wsl in (slice(0, -ws), slice(-ws, -shift), slice(-shift, None)):
                img[:, hs, wsl, :] = cnt
                cnt += 1
        tiles = _tile_windows(img, ws).squeeze(-1)              # (nW, ws*ws)
        diff = tiles.unsqueeze(1) - tiles.unsqueeze(2)
        return torch.where(diff == 0, 0.0, -100.0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        H, W = self.input_res
        if x.shape[1] != H or x.shape[2] != W:
            raise ValidationError(
                f"block built for {H}x{W} grids, got {tuple(x.shape[1:3])}"
            )
        shortcut = x
        x = self.norm1(x)
        if self.pad != (0, 0):
            x = F.pad(x, (0, 0, 0, self.pad[1], 0, self.pad[0]))
        if self.shift > 0:
            x = torch.roll(x, shifts=(-self.shift, -self.shift), dims=(1, 2))
        Hp, Wp = x.shape[1], x.shape[2]
        tiles = _tile_windows(x, self.window)
        tiles = self.attn(tiles, self.attn_mask)
        x = _untile_windows(tiles, self.window, Hp, Wp)
        if self.shift > 0:
            x = torch.roll(x, shifts=(self.shift, self.shift), dims=(1, 2))
        if self.pad != (0, 0):
            x = x[:, :H, :W]
        x = shortcut + x
        return x + self.mlp(self.norm2(x))


class PatchMerging(nn.Module):
    """Concatenate 2x2 neighbors and project: side halves, channels double."""

    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim)
        self.reduction = nn.Linear(4 * dim, 2 * dim, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, H, W, C = x.shape
        if H % 2 or W % 2:
            x = F.pad(x, (0, 0, 0, W % 2, 0, H % 2))
        x = torch.cat(
            [x[:, 0::2, 0::2], x[:, 1::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 1::2]],
            dim=-1,
        )
        return self.reduction(self.norm(x))


class FusionBackbone(nn.Module):
    """Four stages of (shifted-)window attention over the fused grid."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.grid_side = math.ceil(cfg.patch_grid / cfg.L) * cfg.L
        side = self.grid_side
        self.stage_sides: list[int] = []
        stages: list[nn.Module] = []
        merges: list[nn.Module] = []
        for s in range(4):
            self.stage_sides.append(side)
            dim = cfg.stage_widths[s]
            blocks = []
            for b in range(cfg.stage_depths[s]):
                blocks.append(
                    SwinBlock(
                        dim,
                        (side, side),
                        cfg.num_heads[s],
                        window=cfg.L,
                        shift=0 if b % 2 == 0 else cfg.L // 2,
                    )
                )
            stages.append(nn.Sequential(*blocks))
            if s < 3:
                merges.append(PatchMerging(dim))
                side = math.ceil(side / 2)
        self.stages = nn.ModuleList(stages)
        self.merges = nn.ModuleList(merges)

    def forward(
        self,
        windows: torch.Tensor,
        grid: tuple[int, int],
        positions: torch.Tensor | None = None,
    ) -> BackboneFeatures:
        """(B, m, L, L, d) fused windows -> per-stage features + token grid."""
        x = window_reassemble(windows, grid, positions)
        if x.shape[1] != self.grid_side or x.shape[2] != self.grid_side:
            raise ValidationError(
                f"backbone built for {self.grid_side}x{self.grid_side} grids, "
                f"got {tuple(x.shape[1:3])}"
            )
        B = x.shape[0]
        L = self.cfg.L
        rows, cols = grid
        outs: list[torch.Tensor] = []
        token_features = None
        for s in range(4):
            x = self.stages[s](x)
            outs.append(x)
            if s == 0:
                tiles = x.reshape(B, rows, L, cols, L, -1)
                token_features = tiles.mean(dim=(1, 3))        # (B, L, L, d)
            if s < 3:
                x = self.merges[s](x)
        return BackboneFeatures(stages=outs, token_features=token_features)


def run_backbone(fused: FusedStack, net: FusionBackbone) -> BackboneFeatures:
    """Single-sample convenience wrapper around ``FusionBackbone``."""
    return net(fused.windows.unsqueeze(0), fused.grid)
