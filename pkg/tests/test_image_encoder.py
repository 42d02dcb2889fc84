import numpy as np
import pytest
import torch
from PIL import Image

from docmsu.config import ModelConfig
from docmsu.image_encoder import (
    ConvStack,
    ImageEncoder,
    PatchProjector,
    conv_stack,
    load_image,
    partition_stack,
    patch_project,
    window_partition,
    window_reassemble,
)
from docmsu.records import ValidationError


class TestConvStack:
    def test_preserves_dims_depth3(self):
        stack = ConvStack(depth=3, channels=8)
        out = stack(torch.randn(1, 3, 224, 224))
        assert out.shape == (1, 8, 224, 224)

    @pytest.mark.parametrize("depth", [0, 1, 2, 4, 5])
    def test_preserves_dims_any_depth(self, depth):
        stack = ConvStack(depth=depth, channels=6)
        out = stack(torch.randn(2, 3, 16, 20))
        expected_c = 3 if depth == 0 else 6
        assert out.shape == (2, expected_c, 16, 20)

    def test_depth_zero_is_identity(self):
        stack = ConvStack(depth=0, channels=6)
        x = torch.randn(1, 3, 8, 8)
        assert torch.equal(stack(x), x)

    def test_zero_image_zero_features_with_zero_bias(self):
        stack = ConvStack(depth=3, channels=4)
        with torch.no_grad():
            for m in stack.modules():
                if isinstance(m, torch.nn.Conv2d):
                    m.bias.zero_()
        out = stack(torch.zeros(1, 3, 12, 12))
        assert torch.equal(out, torch.zeros(1, 4, 12, 12))

    def test_non_rgb_rejected(self):
        with pytest.raises(ValidationError):
            ConvStack(1, 4)(torch.randn(1, 1, 8, 8))

    def test_per_sample_wrapper(self):
        fm = conv_stack(torch.randn(10, 12, 3), ConvStack(2, 5))
        assert fm.values.shape == (10, 12, 5)
        assert fm.c == 5


class TestPatchProjector:
    def test_grid_shapes(self):
        proj = PatchProjector(3, 8)
        assert proj(torch.randn(1, 3, 224, 224)).shape == (1, 56, 56, 8)
        assert proj(torch.randn(1, 3, 32, 32)).shape == (1, 8, 8, 8)

    def test_indivisible_rejected(self):
        with pytest.raises(ValidationError):
            PatchProjector(3, 8)(torch.randn(1, 3, 30, 32))

    def test_constant_input_identical_patches_before_norm(self):
        proj = PatchProjector(3, 8)
        x = torch.full((1, 3, 16, 16), 0.37)
        raw = proj.conv(x).permute(0, 2, 3, 1).reshape(-1, 8)
        assert torch.allclose(raw, raw[0].expand_as(raw), atol=1e-6)

    def test_per_sample_wrapper(self):
        from docmsu.image_encoder import FeatureMap

        grid = patch_project(FeatureMap(torch.randn(16, 16, 3)), PatchProjector(3, 8))
        assert grid.shape == (4, 4, 8)


class TestWindowPartition:
    def test_56_grid_gives_49_windows(self):
        windows, grid, pad = window_partition(torch.randn(1, 56, 56, 4), window=8)
        assert windows.shape == (1, 49, 8, 8, 4)
        assert grid == (7, 7) and pad == (0, 0)

    def test_exact_single_window(self):
        windows, grid, pad = window_partition(torch.randn(1, 8, 8, 4), window=8)
        assert windows.shape[1] == 1 and grid == (1, 1)

    def test_nine_grid_pads_to_four_windows(self):
        windows, grid, pad = window_partition(torch.randn(1, 9, 9, 4), window=8)
        assert windows.shape[1] == 4
        assert grid == (2, 2) and pad == (7, 7)

    def test_roundtrip_with_crop(self):
        x = torch.randn(2, 9, 13, 4)
        windows, grid, pad = window_partition(x, window=8)
        back = window_reassemble(windows, grid)
        assert torch.equal(back[:, :9, :13], x)
        # padding region is zero
        assert torch.equal(back[:, 9:], torch.zeros_like(back[:, 9:]))

    def test_raster_order(self):
        x = torch.arange(16, dtype=torch.float32).reshape(1, 4, 4, 1)
        windows, grid, _ = window_partition(x, window=2)
        assert windows[0, 0, :, :, 0].tolist() == [[0, 1], [4, 5]]
        assert windows[0, 1, :, :, 0].tolist() == [[2, 3], [6, 7]]
        assert windows[0, 2, :, :, 0].tolist() == [[8, 9], [12, 13]]

    def test_positions_reassembly(self):
        x = torch.randn(1, 8, 8, 3)
        windows, grid, _ = window_partition(x, window=4)
        perm = torch.tensor([2, 0, 3, 1])
        shuffled = windows[:, perm]
        back = window_reassemble(shuffled, grid, positions=perm)
        assert torch.equal(back, x)

    def test_per_sample_wrapper(self):
        stack = partition_stack(torch.randn(8, 8, 4), window=8)
        assert stack.m == 1 and stack.windows.shape == (1, 8, 8, 4)

    def test_window_shape_matches_document_grid(self):
        cfg = ModelConfig.test_preset()
        enc = ImageEncoder(cfg)
        windows, grid, _ = enc(torch.randn(1, 3, cfg.image_size, cfg.image_size))
        assert windows.shape[2:] == (cfg.L, cfg.L, cfg.d)


class TestLoadImage:
    def test_resize_and_range(self, tmp_path):
        arr = np.zeros((40, 60, 3), dtype=np.uint8)
        arr[:, :, 0] = 255
        Image.fromarray(arr).save(tmp_path / "img.png")
        tensor, orig = load_image(tmp_path / "img.png", 32)
        assert tensor.shape == (3, 32, 32)
        assert orig == (60, 40)
        assert tensor.max() <= 1.0 and tensor.min() >= 0.0
        assert tensor[0].mean() == pytest.approx(1.0)
