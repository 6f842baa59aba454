"""Whitespace word <-> token-id mapping for built-in models.

Built-in models work on integer ids; datasets and corpora are text. The
mapping is deliberately simple and fully documented: split on whitespace,
assign id 0 to the reserved end-of-sequence word and a sorted-order id to
every distinct corpus word. The sort makes the dictionary a pure function
of the corpus vocabulary, independent of file ordering. External models
own their tokenizers and bypass this module entirely.
"""

from __future__ import annotations

from typing import Iterable, Sequence

from .errors import DatasetError
from .models import VocabInfo

EOS_WORD = "<eos>"


class WordVocab:
    """Run-scoped whitespace-word dictionary over a training corpus."""

    def __init__(self, words: Iterable[str]) -> None:
        unique = sorted(set(words) - {EOS_WORD})
        self.texts: list[str] = [EOS_WORD] + unique
        self._ids = {word: i for i, word in enumerate(self.texts)}

    @classmethod
    def from_corpus_lines(cls, lines: Iterable[str]) -> "WordVocab":
        words: set[str] = set()
        for line in lines:
            words.update(line.split())
        if not words:
            raise DatasetError("corpus contains no words")
        return cls(words)

    @property
    def vocab(self) -> VocabInfo:
        return VocabInfo(vocab_size=len(self.texts), eos_id=0)

    @property
    def eos_id(self) -> int:
        return 0

    def encode(self, text: str, append_eos: bool = False) -> list[int]:
        ids = []
        for word in text.split():
            if word not in self._ids:
                raise DatasetError(f"word {word!r} not in the model dictionary")
            ids.append(self._ids[word])
        if append_eos:
            ids.append(self.eos_id)
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.texts[i] for i in ids)
