"""Vocabulary, encoding, TSV datasets and a synthetic sentiment corpus."""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InputError, ParseError

PAD, UNK, CLS = "[pad]", "[unk]", "[cls]"
PAD_ID, UNK_ID, CLS_ID = 0, 1, 2
RESERVED = (PAD, UNK, CLS)


def tokenize(text: str) -> list[str]:
    return text.lower().split()


class Vocab:
    def __init__(self, tokens: Sequence[str] = ()):
        self.itos = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def save(self, path) -> None:
        # one token per line; line number == id - len(RESERVED)
        text = "".join(t + "\n" for t in self.itos[len(RESERVED):])
        atomic_write_text(path, text)

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as f:
            return cls([line.rstrip("\n") for line in f])


def build_vocab(corpus: Iterable[str], vocab_size: Optional[int] = None) -> Vocab:
    """Rank lowercased whitespace tokens by frequency, ties lexicographic."""
    texts = list(corpus)
    if not texts:
        raise InputError("cannot build a vocabulary from an empty corpus")
    counts = Counter(tok for text in texts for tok in tokenize(text))
    for tok in RESERVED:
        counts.pop(tok, None)
    ranked = sorted(counts, key=lambda t: (-counts[t], t))
    if vocab_size is not None:
        ranked = ranked[: max(vocab_size - len(RESERVED), 0)]
    return Vocab(ranked)


def encode(text: str, vocab: Vocab, max_seq_len: int) -> list[int]:
    ids = [CLS_ID] + [vocab.id(t) for t in tokenize(text)]
    ids = ids[:max_seq_len]
    return ids + [PAD_ID] * (max_seq_len - len(ids))


@dataclass(frozen=True)
class Example:
    text: str
    label: int
    hard: bool = False

    def __post_init__(self):
        if not self.text:
            raise InputError("example text is empty")
        if self.label < 0:
            raise InputError(f"negative label {self.label}")


def load_tsv(path) -> list[Example]:
    """Parse ``label<TAB>text`` lines; only the first tab separates fields."""
    examples = []
    with open(path, encoding="utf-8", newline="") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if "\t" not in line:
                raise ParseError("expected 'label<TAB>text'", lineno)
            label, text = line.split("\t", 1)
            try:
                label = int(label)
            except ValueError:
                raise ParseError(f"label {label!r} is not an integer", lineno) from None
            try:
                examples.append(Example(text, label))
            except InputError as e:
                raise ParseError(str(e), lineno) from None
    return examples


def dump_tsv(examples: Iterable[Example]) -> str:
    return "".join(f"{ex.label}\t{ex.text}\n" for ex in examples)


def write_tsv(examples: Iterable[Example], path) -> None:
    atomic_write_text(path, dump_tsv(examples))


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


@dataclass
class EncodedDataset:
    """Padded id matrix plus labels, ready for the model."""

    ids: np.ndarray
    labels: np.ndarray
    num_classes: int
    hard: Optional[np.ndarray] = None
    texts: list = field(default_factory=list)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.ids.ndim != 2 or len(self.ids) != len(self.labels):
            raise InputError("ids must be (n, seq_len) with one label per row")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InputError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index) -> "EncodedDataset":
        index = np.asarray(index, dtype=np.int64)
        return EncodedDataset(
            self.ids[index],
            self.labels[index],
            self.num_classes,
            None if self.hard is None else self.hard[index],
            [self.texts[i] for i in index] if self.texts else [],
        )


def encode_dataset(
    examples: Sequence[Example], vocab: Vocab, max_seq_len: int, num_classes: int
) -> EncodedDataset:
    return EncodedDataset(
        np.array([encode(ex.text, vocab, max_seq_len) for ex in examples], dtype=np.int64).reshape(
            len(examples), max_seq_len
        ),
        np.array([ex.label for ex in examples], dtype=np.int64),
        num_classes,
        np.array([ex.hard for ex in examples], dtype=bool),
        [ex.text for ex in examples],
    )


POSITIVE_WORDS = (
    "good", "great", "excellent", "wonderful", "brilliant", "delightful",
    "superb", "charming", "benign", "moving", "fresh", "clever",
)
NEGATIVE_WORDS = (
    "bad", "awful", "terrible", "boring", "dull", "hampered",
    "tedious", "clumsy", "weak", "bland", "messy", "painful",
)
NEGATION_WORDS = ("not", "never", "rarely", "hardly")
FILLER_WORDS = (
    "the", "a", "movie", "film", "story", "plot", "actor", "scene", "it",
    "was", "is", "this", "that", "of", "and", "with", "in", "on", "to",
    "director", "music", "ending", "cast", "script", "really", "quite",
    "overall", "some", "its", "for", "at", "by", "an", "as", "one", "two",
    "time", "minutes", "character", "screen",
)


@dataclass(frozen=True)
class SynthSpec:
    positive: tuple = POSITIVE_WORDS
    negative: tuple = NEGATIVE_WORDS
    negations: tuple = NEGATION_WORDS
    filler: tuple = FILLER_WORDS
    negation_rate: float = 0.3
    min_len: int = 5
    max_len: int = 20
    seed: int = 0

    def __post_init__(self):
        if set(self.positive) & set(self.negative):
            raise InputError("positive and negative keyword lists overlap")
        if not self.positive or not self.negative:
            raise InputError("keyword lists must be non-empty")
        if not 0.0 <= self.negation_rate <= 1.0:
            raise InputError("negation_rate must be in [0, 1]")
        if not 2 <= self.min_len <= self.max_len:
            raise InputError("need 2 <= min_len <= max_len")


def generate_synthetic(spec: SynthSpec, n: int) -> list[Example]:
    """Filler sentences with one sentiment keyword; label 1 = positive.

    With probability ``negation_rate`` a negation word is placed somewhere
    before the keyword and the label flips.  Such examples are marked hard.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    rng = np.random.default_rng(spec.seed)
    out = []
    for _ in range(n):
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        positive = bool(rng.random() < 0.5)
        negated = bool(rng.random() < spec.negation_rate)
        words = list(rng.choice(spec.filler, size=length))
        pool = spec.positive if positive else spec.negative
        kw_pos = int(rng.integers(1 if negated else 0, length))
        words[kw_pos] = str(rng.choice(pool))
        if negated:
            words[int(rng.integers(0, kw_pos))] = str(rng.choice(spec.negations))
        label = int(positive != negated)
        out.append(Example(" ".join(words), label, hard=negated))
    return out
