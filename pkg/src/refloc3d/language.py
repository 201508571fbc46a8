"""Tokenization, word embeddings and the recurrent description encoder."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import GRUWeights, Tensor

UNK = "<unk>"
PAD = "<pad>"

# One word, one contraction suffix ('s, 're, ...) or one detached
# punctuation mark per match; everything is lowercased first.
_TOKEN_RE = re.compile(r"'[a-z0-9]+|[a-z0-9]+|[,.!?;:()'\-]")

DEFAULT_MAX_TOKENS = 126


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace and detach punctuation."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Dense token -> index map with <pad>=0 and <unk>=1 reserved."""

    def __init__(self, tokens: list[str]):
        self.tokens = [PAD, UNK] + [t for t in tokens if t not in (PAD, UNK)]
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def from_records(cls, records) -> "Vocabulary":
        seen: dict[str, None] = {}
        for rec in records:
            for tok in rec.tokens:
                seen.setdefault(tok, None)
        return cls(sorted(seen))

    def __len__(self) -> int:
        return len(self.tokens)

    def lookup(self, token: str) -> int:
        return self.index.get(token, self.index[UNK])

    def encode(self, tokens: list[str]) -> np.ndarray:
        return np.array([self.lookup(t) for t in tokens], dtype=np.int64)


class EmbeddingTable:
    """V x D embedding matrix, frozen by default."""

    def __init__(self, matrix: np.ndarray, frozen: bool = True):
        matrix = np.asarray(matrix)
        if matrix.ndim != 2:
            raise ValueError("embedding matrix must be 2-D")
        self.tensor = Tensor(matrix, requires_grad=not frozen)
        self.frozen = frozen

    @property
    def dim(self) -> int:
        return self.tensor.shape[1]

    @property
    def rows(self) -> int:
        return self.tensor.shape[0]

    @classmethod
    def random(cls, vocab: Vocabulary, dim: int, rng: np.random.Generator,
               frozen: bool = True, dtype=np.float32) -> "EmbeddingTable":
        mat = (rng.standard_normal((len(vocab), dim)) * 0.1).astype(dtype)
        mat[vocab.index[PAD]] = 0.0
        return cls(mat, frozen=frozen)

    @classmethod
    def from_text_file(cls, path: str | Path, vocab: Vocabulary, dim: int,
                       rng: np.random.Generator, frozen: bool = True,
                       dtype=np.float32) -> "EmbeddingTable":
        """Load rows from a word-vector text file (word then D floats).

        Vocabulary tokens missing from the file get a seeded random row
        scaled by 0.1.
        """
        mat = (rng.standard_normal((len(vocab), dim)) * 0.1).astype(dtype)
        mat[vocab.index[PAD]] = 0.0
        found = 0
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                parts = line.rstrip("\n").split(" ")
                if len(parts) != dim + 1:
                    continue
                word = parts[0]
                if word in vocab.index:
                    mat[vocab.index[word]] = np.array(parts[1:], dtype=dtype)
                    found += 1
        if found == 0:
            raise ValueError(f"no vocabulary token found in embedding file {path}")
        return cls(mat, frozen=frozen)


class DescriptionEncoder:
    """Runs a GRU over token embeddings and keeps the final hidden state."""

    def __init__(self, gru: GRUWeights, classifier_weight: Tensor, classifier_bias: Tensor,
                 max_tokens: int = DEFAULT_MAX_TOKENS):
        self.gru = gru
        self.classifier_weight = classifier_weight
        self.classifier_bias = classifier_bias
        self.max_tokens = max_tokens

    def encode(self, tokens: list[str], vocab: Vocabulary, table: EmbeddingTable) -> Tensor:
        if not tokens:
            raise ValueError("cannot encode an empty description")
        ids = vocab.encode(tokens[: self.max_tokens])
        rows = ad.gather_rows(table.tensor, ids)
        hidden = ad.constant(np.zeros(self.gru.hidden, dtype=table.tensor.dtype))
        for t in range(ids.shape[0]):
            x = ad.gather_rows(rows, np.array(t))
            hidden = ad.gru_cell(x, hidden, self.gru)
        return hidden

    def classify(self, embedding: Tensor) -> Tensor:
        """Class logits for the described object's semantic category."""
        return ad.add(ad.matmul(embedding, self.classifier_weight), self.classifier_bias)

    def named_parameters(self, prefix: str):
        from .nn import gru_named_parameters

        yield from gru_named_parameters(self.gru, f"{prefix}.gru")
        yield f"{prefix}.classifier.weight", self.classifier_weight
        yield f"{prefix}.classifier.bias", self.classifier_bias


def encode_description(tokens: list[str], vocab: Vocabulary, table: EmbeddingTable,
                       encoder: DescriptionEncoder) -> Tensor:
    return encoder.encode(tokens, vocab, table)
