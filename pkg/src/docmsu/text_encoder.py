"""Document encoding: token vectors, width projection, square grid reshape.

A document of n whitespace tokens becomes an (n, d_lm) embedding matrix,
is projected to width d, and is laid out raster-order into an L x L x d
grid with zero padding and a boolean mask over the first n cells. Backends:
``hash`` (deterministic per-token vectors, no weights to download) and
``pretrained`` (contextual transformer, first-subpiece pooling).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .records import ValidationError, tokenize


@dataclass
class TokenEmbeddings:
    """Per-token vectors (n, d_lm) plus the subpiece-to-token alignment."""

    values: torch.Tensor
    token_map: list[int]

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class DocumentMatrix:
    """Square document grid: values (L, L, d), mask True at real-token cells."""

    values: torch.Tensor
    mask: torch.Tensor
    L: int
    d: int


class HashEmbeddingBackend:
    """Deterministic per-token embeddings derived from a token-content hash.

    Vectors are unit-norm, independent of context, and identical across
    processes; intended for tests and desk-scale runs.
    """

    name = "hash"

    def __init__(self, d_lm: int = 32):
        self.d_lm = d_lm
        self._cache: dict[str, np.ndarray] = {}

    def _vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            seed = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "big")
            vec = np.random.default_rng(seed).standard_normal(self.d_lm)
            vec /= np.linalg.norm(vec)
            self._cache[token] = vec
        return vec

    def encode(self, tokens: list[str]) -> TokenEmbeddings:
        values = torch.from_numpy(np.stack([self._vector(t) for t in tokens])).float()
        return TokenEmbeddings(values=values, token_map=list(range(len(tokens))))


class PretrainedBackend:
    """Contextual transformer embeddings with first-subpiece pooling.

    Requires the optional ``transformers`` dependency and downloadable
    weights; width is 768.
    """

    name = "pretrained"

    def __init__(self, model_name: str = "bert-base-uncased"):
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise ValidationError(
                "the pretrained backend needs the 'transformers' extra: "
                "pip install docmsu[pretrained]"
            ) from exc
        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModel.from_pretrained(model_name)
        self.model.eval()
        self.d_lm = self.model.config.hidden_size

    def encode(self, tokens: list[str]) -> TokenEmbeddings:
        enc = self.tokenizer(
            tokens, is_split_into_words=True, return_tensors="pt", truncation=True
        )
        with torch.no_grad():
            hidden = self.model(**enc).last_hidden_state[0]
        word_ids = enc.word_ids(0)
        first: dict[int, int] = {}
        for pos, wid in enumerate(word_ids):
            if wid is not None and wid not in first:
                first[wid] = pos
        if len(first) != len(tokens):
            raise ValidationError(
                f"document too long for the pretrained backend: only "
                f"{len(first)} of {len(tokens)} tokens survived subword truncation"
            )
        idx = [first[w] for w in range(len(tokens))]
        return TokenEmbeddings(values=hidden[idx], token_map=idx)


def make_backend(name: str, d_lm: int = 32):
    if name == "hash":
        return HashEmbeddingBackend(d_lm)
    if name == "pretrained":
        return PretrainedBackend()
    raise ValidationError(f"unknown text backend {name!r}")


def encode_tokens(text: str, backend) -> TokenEmbeddings:
    """Embed each whitespace token of a document; deterministic per backend."""
    tokens = tokenize(text)
    if not tokens:
        raise ValidationError("cannot encode an empty document")
    return backend.encode(tokens)


class TokenProjector(nn.Module):
    """Affine width adapter d_lm -> d applied per token."""

    def __init__(self, d_lm: int, d: int):
        super().__init__()
        self.linear = nn.Linear(d_lm, d)

    @property
    def d_lm(self) -> int:
        return self.linear.in_features

    @property
    def d(self) -> int:
        return self.linear.out_features

    def forward(self, values: torch.Tensor) -> torch.Tensor:
        return self.linear(values)


def project_tokens(emb: TokenEmbeddings, projector: TokenProjector) -> torch.Tensor:
    """Project (n, d_lm) token vectors to (n, d)."""
    if emb.width != projector.d_lm:
        raise ValidationError(
            f"embedding width {emb.width} does not match projector input {projector.d_lm}"
        )
    return projector(emb.values.to(projector.linear.weight.dtype))


def square_reshape(projected: torch.Tensor, L: int) -> DocumentMatrix:
    """Lay out n projected tokens into an L x L grid in raster order.

    Remaining cells are zero with mask False. Documents longer than L^2 are
    the caller's responsibility to truncate first.
    """
    n, d = projected.shape
    if n > L * L:
        raise ValidationError(f"document exceeds L^2 = {L * L} tokens (got {n})")
    flat = projected.new_zeros((L * L, d))
    flat[:n] = projected
    mask = torch.zeros(L * L, dtype=torch.bool)
    mask[:n] = True
    return DocumentMatrix(values=flat.reshape(L, L, d), mask=mask.reshape(L, L), L=L, d=d)


def unsquare(matrix: DocumentMatrix) -> torch.Tensor:
    """Inverse of ``square_reshape``: recover the (n, d) token matrix."""
    flat = matrix.values.reshape(-1, matrix.d)
    return flat[matrix.mask.reshape(-1)]


def batch_square(projected: torch.Tensor, lengths: list[int], L: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Batched grid layout: (B, L*L, d) zero-padded input -> values + mask.

    ``projected`` rows past each sample's length are zeroed here, so padded
    cells are exact zeros regardless of projection bias.
    """
    B, cells, d = projected.shape
    if cells != L * L:
        raise ValidationError(f"expected {L * L} cells, got {cells}")
    mask = torch.zeros(B, cells, dtype=torch.bool, device=projected.device)
    for b, n in enumerate(lengths):
        if n > cells:
            raise ValidationError(f"document exceeds L^2 = {cells} tokens (got {n})")
        mask[b, :n] = True
    values = projected * mask.unsqueeze(-1).to(projected.dtype)
    return values.reshape(B, L, L, d), mask.reshape(B, L, L)
