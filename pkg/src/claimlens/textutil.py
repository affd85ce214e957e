"""Small text helpers shared across modules.

Everything here is deterministic and dependency-free so that pipeline
outputs are reproducible across platforms.
"""

from __future__ import annotations

import hashlib
import math
import re

# Sentence boundary: terminator cluster followed by whitespace. Closing
# quotes/brackets stay attached to the preceding sentence.
_SENTENCE_BOUNDARY = re.compile(r"(?<=[.!?])[\"'’”)\]]*\s+")

_WORD = re.compile(r"[a-z0-9]+")


def estimate_tokens(text: str) -> int:
    """Tokenizer-agnostic size estimate: ceil(characters / 4)."""
    return math.ceil(len(text) / 4)


def stable_hash(*parts: str, length: int = 16) -> str:
    """Content-derived hex id, stable across runs and platforms.

    Parts are joined with an unambiguous separator before hashing so that
    ("ab", "c") and ("a", "bc") differ.
    """
    joined = "\x1f".join(parts)
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()[:length]


def split_sentences(text: str) -> list[tuple[int, int]]:
    """Return (start, end) character spans of sentences in `text`.

    Spans cover the stripped sentence content; concatenating text[s:e] for
    all spans recovers every non-whitespace character in order.
    """
    spans: list[tuple[int, int]] = []
    pos = 0
    for match in _SENTENCE_BOUNDARY.finditer(text):
        # closing quotes/brackets belong to the sentence, the whitespace does not
        end = match.start() + len(match.group().rstrip())
        spans.append((pos, end))
        pos = match.end()
    if pos < len(text):
        spans.append((pos, len(text)))
    # trim leading/trailing whitespace inside each span, drop empties
    trimmed = []
    for start, end in spans:
        chunk = text[start:end]
        lead = len(chunk) - len(chunk.lstrip())
        trail = len(chunk) - len(chunk.rstrip())
        if start + lead < end - trail:
            trimmed.append((start + lead, end - trail))
    return trimmed


def sentence_texts(text: str) -> list[str]:
    return [text[s:e] for s, e in split_sentences(text)]


def normalize_for_match(text: str) -> str:
    """Lowercase, fold curly quotes/dashes, strip punctuation and squeeze
    whitespace. Used for duplicate collapsing and lenient span matching."""
    folded = (
        text.replace("‘", "'")
        .replace("’", "'")
        .replace("“", '"')
        .replace("”", '"')
        .replace("–", "-")
        .replace("—", "-")
    )
    return " ".join(_WORD.findall(folded.lower()))


def word_tokens(text: str) -> list[str]:
    return _WORD.findall(normalize_for_match(text))


def overlap_score(utterance: str, sentence: str) -> float:
    """Fraction of utterance word tokens present in the sentence (recall).

    Brute-force lexical overlap; 0.0 when the texts share nothing.
    """
    u_tokens = word_tokens(utterance)
    if not u_tokens:
        return 0.0
    s_tokens = set(word_tokens(sentence))
    hits = sum(1 for t in u_tokens if t in s_tokens)
    return hits / len(u_tokens)


def truncate_at_sentence(text: str, max_tokens: int) -> tuple[str, bool]:
    """Cut `text` at the last sentence boundary fitting `max_tokens`.

    Returns (text, truncated_flag). Falls back to a hard character cut when
    even the first sentence exceeds the budget.
    """
    if estimate_tokens(text) <= max_tokens:
        return text, False
    kept_end = 0
    for start, end in split_sentences(text):
        if estimate_tokens(text[:end]) > max_tokens:
            break
        kept_end = end
    if kept_end == 0:
        return text[: max_tokens * 4], True
    return text[:kept_end], True
