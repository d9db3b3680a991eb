"""Greedy longest-match subword tokenizer with character offset alignment.

Self-contained stand-in for a pretrained wordpiece vocabulary: the vocabulary
is either built from corpus text (every word plus character fallbacks, so
synthetic corpora tokenize without [UNK]) or loaded from an external
one-token-per-line vocab file. Continuation pieces carry the usual "##"
marker. Every produced token records its [start, end) character range in the
source string so span labels can be aligned and decoded.
"""

from __future__ import annotations

import re
from collections import Counter
from pathlib import Path
from typing import Iterable

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN)

# words are alphanumeric runs; any other non-space character stands alone
_WORD_RE = re.compile(r"[A-Za-z0-9]+|[^\sA-Za-z0-9]")


def basic_tokenize(text: str) -> list[tuple[str, int, int]]:
    """Split into words/punctuation with [start, end) character offsets."""
    return [(m.group(0), m.start(), m.end()) for m in _WORD_RE.finditer(text)]


class SubwordTokenizer:
    """Deterministic greedy longest-match subword tokenizer."""

    def __init__(self, vocab: Iterable[str], lowercase: bool = True):
        self.vocab = list(vocab)
        self.lowercase = lowercase
        self.token_to_id = {tok: i for i, tok in enumerate(self.vocab)}
        if len(self.token_to_id) != len(self.vocab):
            raise ValueError("duplicate tokens in vocabulary")
        for tok in SPECIAL_TOKENS:
            if tok not in self.token_to_id:
                raise ValueError(f"vocabulary missing special token {tok}")
        self.pad_id = self.token_to_id[PAD_TOKEN]
        self.unk_id = self.token_to_id[UNK_TOKEN]
        self.cls_id = self.token_to_id[CLS_TOKEN]
        self.sep_id = self.token_to_id[SEP_TOKEN]

    def __len__(self) -> int:
        return len(self.vocab)

    @classmethod
    def build_from_texts(
        cls, texts: Iterable[str], lowercase: bool = True, min_freq: int = 1
    ) -> "SubwordTokenizer":
        """Build a vocabulary from corpus text: frequent words first, then
        character-level fallbacks so any in-alphabet word stays representable."""
        word_counts: Counter[str] = Counter()
        chars: set[str] = set()
        for text in texts:
            if lowercase:
                text = text.lower()
            for word, _, _ in basic_tokenize(text):
                word_counts[word] += 1
                chars.update(word)
        words = sorted(
            (w for w, c in word_counts.items() if c >= min_freq),
            key=lambda w: (-word_counts[w], w),
        )
        fallbacks = []
        for ch in sorted(chars):
            fallbacks.append(ch)
            fallbacks.append("##" + ch)
        vocab = list(SPECIAL_TOKENS)
        seen = set(vocab)
        # the query-side name/description delimiter must never fall back to UNK
        for tok in [":"] + words + fallbacks:
            if tok not in seen:
                vocab.append(tok)
                seen.add(tok)
        return cls(vocab, lowercase=lowercase)

    @classmethod
    def from_vocab_file(cls, path: str | Path, lowercase: bool = True) -> "SubwordTokenizer":
        vocab = Path(path).read_text().splitlines()
        return cls([v for v in vocab if v], lowercase=lowercase)

    def save_vocab(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.vocab) + "\n")

    def _split_word(self, word: str) -> list[tuple[str, int, int]] | None:
        """Greedy longest-match pieces of one word, with offsets inside the word.
        Returns None when some position cannot be matched."""
        pieces = []
        start = 0
        while start < len(word):
            end = len(word)
            found = None
            while start < end:
                piece = word[start:end]
                if start > 0:
                    piece = "##" + piece
                if piece in self.token_to_id:
                    found = piece
                    break
                end -= 1
            if found is None:
                return None
            pieces.append((found, start, end))
            start = end
        return pieces

    def tokenize_with_offsets(self, text: str) -> tuple[list[str], list[tuple[int, int]]]:
        """Tokenize; offsets are [start, end) ranges into the original text.

        A word with an unmatchable character becomes a single [UNK] covering
        the whole word.
        """
        tokens: list[str] = []
        offsets: list[tuple[int, int]] = []
        for word, wstart, wend in basic_tokenize(text):
            matched = self._split_word(word.lower() if self.lowercase else word)
            if matched is None:
                tokens.append(UNK_TOKEN)
                offsets.append((wstart, wend))
                continue
            for piece, pstart, pend in matched:
                tokens.append(piece)
                offsets.append((wstart + pstart, wstart + pend))
        return tokens, offsets

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.token_to_id.get(t, self.unk_id) for t in tokens]
