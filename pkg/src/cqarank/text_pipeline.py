"""Text preprocessing: tokenization, vocabulary, and word-overlap indicators.

Questions and comments enter as raw (subject, body) strings and leave as
bounded lowercase token sequences with vocabulary ids and per-token binary
overlap indicators relative to the paired text(s).
"""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1

DEFAULT_MAX_LEN = 100


@dataclass(frozen=True)
class TokenizedText:
    """A preprocessed token sequence.

    ``ids`` and ``overlaps`` start out unfilled (None) and are attached by
    ``Vocabulary.encode`` and ``overlap_indicators`` respectively; when
    present they have the same length as ``tokens``.
    """

    tokens: tuple[str, ...]
    ids: Optional[tuple[int, ...]] = None
    overlaps: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.ids is not None and len(self.ids) != len(self.tokens):
            raise ValueError("ids length does not match token count")
        if self.overlaps is not None and len(self.overlaps) != len(self.tokens):
            raise ValueError("overlaps length does not match token count")

    def __len__(self) -> int:
        return len(self.tokens)

    def with_ids(self, ids: Sequence[int]) -> "TokenizedText":
        return TokenizedText(self.tokens, tuple(ids), self.overlaps)

    def with_overlaps(self, overlaps: Sequence[int]) -> "TokenizedText":
        return TokenizedText(self.tokens, self.ids, tuple(overlaps))


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _split_token(token: str) -> list[str]:
    # Peel leading/trailing punctuation characters into their own tokens;
    # interior punctuation (don't, e-mail) stays attached.
    lead: list[str] = []
    trail: list[str] = []
    while len(token) > 1 and _is_punct(token[0]):
        lead.append(token[0])
        token = token[1:]
    while len(token) > 1 and _is_punct(token[-1]):
        trail.append(token[-1])
        token = token[:-1]
    return lead + [token] + trail[::-1]


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace, separating edge punctuation."""
    out: list[str] = []
    for raw in text.lower().split():
        out.extend(_split_token(raw))
    return out


def preprocess(subject: Optional[str], body: str, max_len: int = DEFAULT_MAX_LEN) -> TokenizedText:
    """Tokenize subject+body (subject first) and truncate to ``max_len`` tokens."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    parts = []
    if subject:
        parts.append(subject)
    if body:
        parts.append(body)
    tokens = tokenize(" ".join(parts))
    return TokenizedText(tuple(tokens[:max_len]))


class Vocabulary:
    """Token-to-id map with reserved PAD=0 and UNK=1 entries."""

    def __init__(self, tokens: Iterable[str] = ()):
        """``tokens`` are the non-reserved entries, in id order (id 2, 3, ...)."""
        self._token_to_id: dict[str, int] = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
        self._id_to_token: list[str] = [PAD_TOKEN, UNK_TOKEN]
        for tok in tokens:
            if tok in self._token_to_id:
                raise ValueError(f"duplicate vocabulary token: {tok!r}")
            self._token_to_id[tok] = len(self._id_to_token)
            self._id_to_token.append(tok)

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self._id_to_token[idx]

    @property
    def tokens(self) -> tuple[str, ...]:
        """All tokens in id order, reserved entries included."""
        return tuple(self._id_to_token)

    def encode(self, text: TokenizedText) -> TokenizedText:
        return text.with_ids(self.id_of(t) for t in text.tokens)


def build_vocabulary(corpus: Iterable[TokenizedText], min_count: int = 1) -> Vocabulary:
    """Vocabulary of tokens occurring >= min_count times, ids assigned by
    descending frequency then lexicographic order."""
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts: Counter[str] = Counter()
    for text in corpus:
        counts.update(text.tokens)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


def overlap_indicators(target: TokenizedText, others: Iterable[TokenizedText]) -> tuple[int, ...]:
    """1 at position j iff target token j occurs in at least one of ``others``.

    Computed on surface tokens, not ids, so UNK collisions cannot create
    false overlaps.
    """
    shared: set[str] = set()
    for other in others:
        shared.update(other.tokens)
    return tuple(1 if tok in shared else 0 for tok in target.tokens)
