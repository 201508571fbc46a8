"""Corpus statistics: counts, vocabulary size, description lengths and
attribute-lexicon usage percentages."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .language import tokenize
from .scenes import DescriptionRecord

LEXICON_KINDS = ("spatial", "color", "shape", "size")


def load_lexicon(path: str | Path) -> list[list[str]]:
    """One term per line; multi-word terms match as token subsequences."""
    terms = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            terms.append(tokenize(line))
    return terms


def default_lexicons() -> dict[str, list[list[str]]]:
    out = {}
    for kind in LEXICON_KINDS:
        text = resources.files("refloc3d").joinpath(f"lexicons/{kind}.txt").read_text("utf-8")
        terms = []
        for line in text.splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                terms.append(tokenize(line))
        out[kind] = terms
    return out


def _contains_term(tokens: tuple[str, ...], term: list[str]) -> bool:
    if len(term) == 1:
        return term[0] in tokens
    n = len(term)
    return any(list(tokens[i:i + n]) == term for i in range(len(tokens) - n + 1))


@dataclass
class CorpusStats:
    n_descriptions: int
    n_scenes: int
    n_objects: int
    objects_per_scene: float
    descriptions_per_scene: float
    descriptions_per_object: float
    vocabulary_size: int
    avg_description_length: float
    lexicon_usage: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [
            f"descriptions            {self.n_descriptions}",
            f"scenes                  {self.n_scenes}",
            f"objects                 {self.n_objects}",
            f"objects per scene       {self.objects_per_scene:.2f}",
            f"descriptions per scene  {self.descriptions_per_scene:.2f}",
            f"descriptions per object {self.descriptions_per_object:.2f}",
            f"vocabulary size         {self.vocabulary_size}",
            f"avg description length  {self.avg_description_length:.2f}",
        ]
        for kind in sorted(self.lexicon_usage):
            lines.append(f"{kind + ' terms':<24}{self.lexicon_usage[kind]:.1f}%")
        return "\n".join(lines)


def dataset_stats(records: list[DescriptionRecord],
                  lexicons: dict[str, list[list[str]]] | None = None) -> CorpusStats:
    if not records:
        raise ValueError("no records to summarize")
    scene_ids = {r.scene_id for r in records}
    object_keys = {(r.scene_id, r.object_id) for r in records}
    vocab = set()
    total_len = 0
    for r in records:
        vocab.update(r.tokens)
        total_len += len(r.tokens)
    lexicons = lexicons if lexicons is not None else default_lexicons()
    usage = {}
    for kind, terms in lexicons.items():
        hits = sum(1 for r in records if any(_contains_term(r.tokens, t) for t in terms))
        usage[kind] = 100.0 * hits / len(records)
    return CorpusStats(
        n_descriptions=len(records),
        n_scenes=len(scene_ids),
        n_objects=len(object_keys),
        objects_per_scene=len(object_keys) / len(scene_ids),
        descriptions_per_scene=len(records) / len(scene_ids),
        descriptions_per_object=len(records) / len(object_keys),
        vocabulary_size=len(vocab),
        avg_description_length=total_len / len(records),
        lexicon_usage=usage,
    )
