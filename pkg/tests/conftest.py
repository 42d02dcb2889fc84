import pytest
import torch

from docmsu.config import ModelConfig
from docmsu.data import gen_fixtures


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory):
    """Small standard corpus with images on disk (test-preset image size)."""
    root = tmp_path_factory.mktemp("corpus")
    records = gen_fixtures(12, seed=7, image_size=32, out_dir=root)
    return records, root


@pytest.fixture()
def test_cfg():
    return ModelConfig.test_preset()


@pytest.fixture()
def tiny_model(test_cfg):
    from docmsu.model import SarcasmModel

    torch.manual_seed(0)
    return SarcasmModel(test_cfg)
