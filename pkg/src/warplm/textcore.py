"""Word-level vocabulary, encoding/decoding, and corpus ingestion.

Ids 0..4 are reserved for the special tokens PAD, UNK, CLS, MASK, INS;
corpus-derived tokens start at id 5. The vocab file format is one token
per line (line number == id), so identical corpora always serialize to
byte-identical files.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
MASK_ID = 3
INS_ID = 4

SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[MASK]", "[INS]")
N_SPECIALS = len(SPECIAL_TOKENS)


@dataclass
class Vocab:
    """Bidirectional token<->id mapping with fixed special-token layout."""

    id_to_token: list[str]
    lowercase: bool = True
    token_to_id: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if list(self.id_to_token[:N_SPECIALS]) != list(SPECIAL_TOKENS):
            raise ValueError("vocab must start with the special tokens")
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate token in vocab")

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def n_words(self) -> int:
        """Number of non-special entries."""
        return len(self.id_to_token) - N_SPECIALS

    def normalize(self, sentence: str) -> str:
        """Canonical form used by the encode/decode round trip."""
        s = " ".join(sentence.split())
        return s.lower() if self.lowercase else s

    def encode(self, sentence: str) -> list[int]:
        """Whitespace-split tokens to ids; out-of-vocabulary words map to UNK."""
        return self.encode_tokens(self.normalize(sentence).split())

    def encode_tokens(self, tokens: list[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode_one(self, i) -> str:
        i = int(i)
        if i < 0 or i >= len(self.id_to_token):
            raise ValueError(f"unknown id {i}")
        return self.id_to_token[i]

    def decode(self, ids) -> str:
        """Space-joined tokens; special ids render as their bracketed literals."""
        return " ".join(self.decode_one(i) for i in ids)

    @property
    def content_hash(self) -> str:
        """sha256 of the serialized token list; pins checkpoints to a vocab."""
        payload = "\n".join(self.id_to_token).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


def build_vocab(corpus_text: str, min_count: int = 1, max_size: int = 50000,
                lowercase: bool = True) -> Vocab:
    """Build a vocab from line-delimited text.

    Keeps up to (max_size - 5) most frequent whitespace tokens with
    frequency >= min_count; ties break lexicographically, so the result is
    deterministic for a given corpus.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    if max_size < N_SPECIALS:
        raise ValueError(f"max_size must be >= {N_SPECIALS}")
    text = corpus_text.lower() if lowercase else corpus_text
    counts = Counter(text.split())
    for special in SPECIAL_TOKENS:
        counts.pop(special, None)
    if not counts:
        raise ValueError("empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, c in ranked if c >= min_count][: max_size - N_SPECIALS]
    return Vocab(list(SPECIAL_TOKENS) + kept, lowercase=lowercase)


def save_vocab(vocab: Vocab, path: str | Path) -> None:
    Path(path).write_text("\n".join(vocab.id_to_token) + "\n", encoding="utf-8")


def load_vocab(path: str | Path, lowercase: bool = True) -> Vocab:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if len(lines) < N_SPECIALS:
        raise ValueError(f"vocab file too short: {path}")
    return Vocab(lines, lowercase=lowercase)


@dataclass
class Corpus:
    """Encoded sentences plus provenance. Immutable after construction."""

    sentences: list[list[int]]
    source_path: str = ""

    def __len__(self) -> int:
        return len(self.sentences)


def corpus_from_text(text: str, vocab: Vocab, source_path: str = "<memory>") -> Corpus:
    """Encode line-delimited text. Non-UNK special ids are remapped to UNK so
    corpus sentences never contain PAD/CLS/MASK/INS."""
    sentences = []
    for line in text.splitlines():
        ids = vocab.encode(line)
        if not ids:
            continue
        ids = [UNK_ID if (i < N_SPECIALS and i != UNK_ID) else i for i in ids]
        sentences.append(ids)
    return Corpus(sentences, source_path)


def load_corpus(path: str | Path, vocab: Vocab) -> Corpus:
    """Read a one-sentence-per-line UTF-8 corpus file. Blank lines are skipped."""
    return corpus_from_text(Path(path).read_text(encoding="utf-8"), vocab, str(path))
