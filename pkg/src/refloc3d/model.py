"""The full localization model: detector + description encoder + fusion.

A model is built from a RunConfig plus a vocabulary; checkpoints carry the
config echo (with the vocabulary folded in as one key) so a saved model
can be reconstructed from the file alone.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .detector import Detector
from .grounding import FusionScorer
from .language import DescriptionEncoder, EmbeddingTable, Vocabulary
from .nn import Linear, make_gru_weights, xavier_uniform
from .scenes import NUM_SEM_CLASSES


class GroundingModel:
    def __init__(self, config: RunConfig, vocab: Vocabulary,
                 embeddings: EmbeddingTable | None = None, dtype=np.float32):
        self.config = config
        self.vocab = vocab
        self.dtype = dtype
        self.feature_config = config.feature_config()
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7]))

        if embeddings is None:
            if config.lang_embeddings_path:
                embeddings = EmbeddingTable.from_text_file(
                    config.lang_embeddings_path, vocab, config.lang_embed_dim, rng,
                    frozen=config.lang_freeze_embeddings, dtype=dtype)
            else:
                embeddings = EmbeddingTable.random(
                    vocab, config.lang_embed_dim, rng,
                    frozen=config.lang_freeze_embeddings, dtype=dtype)
        self.embeddings = embeddings

        hidden = config.lang_hidden_dim
        self.encoder = DescriptionEncoder(
            gru=make_gru_weights(config.lang_embed_dim, hidden, rng, dtype),
            classifier_weight=ad.parameter(xavier_uniform(rng, hidden, NUM_SEM_CLASSES, dtype=dtype)),
            classifier_bias=ad.parameter(np.zeros(NUM_SEM_CLASSES, dtype=dtype)),
            max_tokens=config.lang_max_tokens,
        )
        self.detector = Detector(self.feature_config.width, config.detector_config(),
                                 rng, dtype=dtype)
        self.fusion = FusionScorer(config.det_cluster_width, hidden, rng, dtype=dtype)

    # -- parameters --------------------------------------------------------

    def named_parameters(self):
        yield "embeddings.table", self.embeddings.tensor
        yield from self.encoder.named_parameters("encoder")
        yield from self.detector.named_parameters("detector")
        yield from self.fusion.named_parameters("grounding")

    def trainable_parameters(self, mode: str = "end_to_end"):
        for name, tensor in self.named_parameters():
            if name == "embeddings.table" and self.embeddings.frozen:
                continue
            if mode == "frozen_detector" and name.startswith("detector."):
                continue
            yield name, tensor

    def encode(self, tokens):
        return self.encoder.encode(list(tokens), self.vocab, self.embeddings)

    # -- persistence -------------------------------------------------------

    def checkpoint_params(self) -> dict[str, np.ndarray]:
        params = {name: t.numpy() for name, t in self.named_parameters()}
        params["size_templates"] = self.detector.size_templates
        return params

    def save(self, path: str | Path) -> None:
        config_text = self.config.to_text() + "vocab = " + " ".join(self.vocab.tokens) + "\n"
        save_checkpoint(path, config_text, self.checkpoint_params())

    @classmethod
    def load(cls, path: str | Path, dtype=np.float32) -> "GroundingModel":
        config_text, params = load_checkpoint(path)
        config_lines, vocab_tokens = [], []
        for line in config_text.splitlines():
            if line.startswith("vocab ="):
                vocab_tokens = line.partition("=")[2].split()
            else:
                config_lines.append(line)
        config = RunConfig.from_text("\n".join(config_lines))
        vocab = Vocabulary(vocab_tokens)
        model = cls(config, vocab, dtype=dtype)
        model.load_params(params)
        return model

    def load_params(self, params: dict[str, np.ndarray], prefix: str = "") -> None:
        own = dict(self.named_parameters())
        for name, arr in params.items():
            if name == "size_templates":
                self.detector.size_templates = arr.astype(np.float32)
                continue
            if prefix and not name.startswith(prefix):
                continue
            if name not in own:
                raise KeyError(f"checkpoint parameter {name!r} not in model")
            if own[name].shape != arr.shape:
                raise ValueError(
                    f"checkpoint parameter {name!r} has shape {arr.shape}, expected {own[name].shape}")
            own[name].data = arr.astype(self.dtype)

    def load_detector_from(self, path: str | Path) -> None:
        """Copy only detector weights (and size templates) from a checkpoint."""
        _, params = load_checkpoint(path)
        subset = {k: v for k, v in params.items()
                  if k.startswith("detector.") or k == "size_templates"}
        if not subset:
            raise ValueError(f"no detector parameters found in {path}")
        self.load_params(subset)
