"""Vocabularies, word embeddings, labeled corpora and a synthetic sentiment grammar."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, EmptyVocabularyError, ParseError

UNK = "<unk>"


class Vocabulary:
    """Dense token ids with a reserved unknown-token id (always 0)."""

    unk_id = 0

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if not tokens or tokens[0] != UNK:
            raise ValueError(f"vocabulary must start with {UNK!r}")
        index = {}
        for i, tok in enumerate(tokens):
            if tok in index:
                raise ValueError(f"duplicate token {tok!r} in vocabulary")
            index[tok] = i
        self.tokens = tokens
        self.index = index

    @classmethod
    def build(cls, tokens: Iterable[str]) -> "Vocabulary":
        """Vocabulary over ``tokens`` in first-seen order, with unk prepended."""
        seen = {UNK: None}
        for tok in tokens:
            seen.setdefault(tok, None)
        return cls(list(seen))

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __repr__(self):
        return f"Vocabulary(n={len(self)})"

    def lookup(self, token: str) -> int:
        return self.index.get(token, self.unk_id)

    def token(self, i: int) -> str:
        return self.tokens[i]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.lookup(t) for t in tokens]


@dataclass
class EmbeddingTable:
    vectors: np.ndarray  # (vocab size, dim)
    trainable: bool = False

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or 0 in self.vectors.shape:
            raise ValueError(f"embedding table must be a non-empty 2-D array, got {self.vectors.shape}")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embedding table contains non-finite entries")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return self.vectors.shape[0]

    def lookup(self, token_ids: Sequence[int]) -> list[np.ndarray]:
        return [self.vectors[i] for i in token_ids]


def one_hot_embeddings(n: int) -> EmbeddingTable:
    return EmbeddingTable(np.eye(n), trainable=False)


@dataclass(frozen=True)
class LabeledSequence:
    token_ids: tuple[int, ...]
    label: int
    text: str | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "token_ids", tuple(int(i) for i in self.token_ids))
        if not self.token_ids:
            raise DomainError("a labeled sequence needs at least one token")
        if self.label < 0:
            raise DomainError(f"negative label {self.label}")

    def __len__(self):
        return len(self.token_ids)


@dataclass
class Corpus:
    examples: list[LabeledSequence]
    n_classes: int
    split: str = "train"

    def __post_init__(self):
        if self.n_classes < 2:
            raise DomainError(f"need at least 2 classes, got {self.n_classes}")
        if self.split not in ("train", "dev", "test"):
            raise DomainError(f"unknown split {self.split!r}")
        for i, ex in enumerate(self.examples):
            if ex.label >= self.n_classes:
                raise DomainError(f"example {i}: label {ex.label} >= K={self.n_classes}")

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    @property
    def labels(self) -> list[int]:
        return [ex.label for ex in self.examples]


def augment_with_bias(x) -> np.ndarray:
    """``[x; 1]``."""
    x = np.asarray(x, dtype=np.float64)
    return np.append(x, 1.0)


def load_embeddings_text(path, vocab_filter: Vocabulary | None = None, lowercase: bool = True):
    """Read a word2vec-style text file: ``count dim`` header, then ``token v1 .. v_dim`` rows.

    Returns ``(Vocabulary, EmbeddingTable)``. The unk vector is the mean of the
    loaded vectors. Later duplicates of a token (after lowercasing) are ignored.
    """
    path = Path(path)
    tokens = [UNK]
    rows = []
    seen = {UNK}
    with path.open(encoding="utf-8") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 2:
            raise ParseError("header must be '<count> <dim>'", path, 1)
        try:
            count, dim = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"non-integer header {header.strip()!r}", path, 1) from None
        if count < 0 or dim < 1:
            raise ParseError(f"invalid header values count={count} dim={dim}", path, 1)
        n_rows = 0
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            n_rows += 1
            fields = line.rstrip("\r\n").split(" ")
            fields = [f for f in fields if f]
            if len(fields) != dim + 1:
                raise ParseError(
                    f"expected token plus {dim} values, found {len(fields) - 1} values", path, line_no
                )
            tok = fields[0].lower() if lowercase else fields[0]
            if tok in seen:
                continue
            if vocab_filter is not None and tok not in vocab_filter:
                continue
            try:
                vec = np.array([float(v) for v in fields[1:]])
            except ValueError:
                raise ParseError("non-numeric vector entry", path, line_no) from None
            if not np.all(np.isfinite(vec)):
                raise ParseError("non-finite vector entry", path, line_no)
            seen.add(tok)
            tokens.append(tok)
            rows.append(vec)
    if n_rows != count:
        raise ParseError(f"header declares {count} rows but file has {n_rows}", path)
    if not rows:
        raise EmptyVocabularyError(f"{path}: no usable embedding rows")
    table = np.vstack([np.mean(rows, axis=0)] + rows)
    return Vocabulary(tokens), EmbeddingTable(table, trainable=False)


def init_random_embeddings(vocab: Vocabulary, dim: int, scale: float, seed: int) -> EmbeddingTable:
    if dim < 1:
        raise DomainError(f"embedding dim must be >= 1, got {dim}")
    if scale <= 0:
        raise DomainError(f"scale must be positive, got {scale}")
    rng = np.random.default_rng(seed)
    return EmbeddingTable(rng.uniform(-scale, scale, size=(len(vocab), dim)), trainable=True)


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def scan_tsv(path):
    """Yield ``(line_no, label, tokens, text)`` for every example line of a corpus TSV."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            if "\t" not in line:
                raise ParseError("expected '<label>\\t<tokens>'", path, line_no)
            label_text, text = line.split("\t", 1)
            try:
                label = int(label_text.strip())
            except ValueError:
                raise ParseError(f"non-integer label {label_text!r}", path, line_no) from None
            tokens = tokenize(text)
            if not tokens:
                raise ParseError("empty token sequence", path, line_no)
            yield line_no, label, tokens, text


def load_corpus_tsv(path, vocab: Vocabulary, n_classes: int, split: str = "train") -> Corpus:
    examples = []
    for line_no, label, tokens, text in scan_tsv(path):
        if not 0 <= label < n_classes:
            raise ParseError(f"label {label} out of range [0, {n_classes - 1}]", path, line_no)
        examples.append(LabeledSequence(vocab.encode(tokens), label, text=text))
    return Corpus(examples, n_classes, split)


def format_tsv_line(ex: LabeledSequence, vocab: Vocabulary) -> str:
    return f"{ex.label}\t" + " ".join(vocab.token(i) for i in ex.token_ids)


def write_corpus_tsv(path, corpus: Corpus, vocab: Vocabulary):
    with Path(path).open("w", encoding="utf-8") as fh:
        for ex in corpus:
            fh.write(format_tsv_line(ex, vocab) + "\n")


# -- synthetic compositional grammar -----------------------------------------

POLARITY = {
    "terrible": -2, "awful": -2, "horrible": -2,
    "bad": -1, "poor": -1, "dull": -1,
    "okay": 0, "average": 0, "plain": 0,
    "good": 1, "nice": 1, "fine": 1,
    "great": 2, "excellent": 2, "wonderful": 2,
}
INTENSIFIERS = ("very", "extremely", "really")
NEGATOR = "not"
SYNTHETIC_TOKENS = tuple(POLARITY) + INTENSIFIERS + (NEGATOR,)


def synthetic_vocabulary() -> Vocabulary:
    return Vocabulary.build(SYNTHETIC_TOKENS)


def base_label(score: int, K: int) -> int:
    """Map a signed polarity score onto ``K`` ordered classes around the center."""
    center = (K - 1) / 2
    if score > 0:
        label = math.ceil(center + score - 0.5)
    elif score < 0:
        label = math.floor(center + score + 0.5)
    else:
        label = math.floor(center)
    return min(max(label, 0), K - 1)


def compose_label(tokens: Sequence[str], K: int) -> int:
    """Label of ``modifier* polarity_word`` with modifiers applied innermost first.

    Intensifiers move one class away from the center (clamped), the negator
    reflects the label about the center.
    """
    *modifiers, word = tokens
    if word not in POLARITY:
        raise DomainError(f"phrase must end in a polarity word, got {word!r}")
    center = (K - 1) / 2
    label = base_label(POLARITY[word], K)
    for mod in reversed(modifiers):
        if mod == NEGATOR:
            label = K - 1 - label
        elif mod in INTENSIFIERS:
            if label > center:
                label = min(label + 1, K - 1)
            elif label < center:
                label = max(label - 1, 0)
        else:
            raise DomainError(f"unknown modifier {mod!r}")
    return label


def generate_synthetic_corpus(seed: int, n_examples: int, K: int, split: str = "train"):
    """Deterministic sample of ``n_examples`` phrases of length 1-4 from the grammar."""
    if K < 2:
        raise DomainError(f"need at least 2 classes, got K={K}")
    if n_examples < K:
        raise DomainError(f"need n_examples >= K, got {n_examples} < {K}")
    vocab = synthetic_vocabulary()
    rng = np.random.default_rng(seed)
    words = list(POLARITY)
    modifiers = list(INTENSIFIERS) + [NEGATOR]
    mod_p = [0.2, 0.2, 0.2, 0.4]
    examples = []
    for _ in range(n_examples):
        n_mod = int(rng.integers(0, 4))
        mods = [modifiers[int(i)] for i in rng.choice(len(modifiers), size=n_mod, p=mod_p)]
        tokens = mods + [words[int(rng.integers(len(words)))]]
        examples.append(
            LabeledSequence(vocab.encode(tokens), compose_label(tokens, K), text=" ".join(tokens))
        )
    return vocab, Corpus(examples, K, split)


def synthetic_splits(seed: int, n_train: int, n_dev: int, K: int):
    """One seeded draw of ``n_train + n_dev`` phrases split into train and dev corpora."""
    vocab, full = generate_synthetic_corpus(seed, n_train + n_dev, K)
    train = Corpus(full.examples[:n_train], K, "train")
    dev = Corpus(full.examples[n_train:], K, "dev")
    return vocab, train, dev
