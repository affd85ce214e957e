"""Claim extraction: one LLM call per article, parsed into validated Claims.

Articles over the context budget are truncated at a sentence boundary (with
a warning) rather than chunked. Actor names are kept exactly as extracted;
normalization happens later via the enrichment override map.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from string import Template
from typing import Sequence

from .gateway import ChatRequest, LlmGateway
from .llmio import complete_json_array
from .model import Claim, NewsArticle, corpus_index, validate_claim
from .prompts import load_template
from .textutil import (
    normalize_for_match,
    overlap_score,
    split_sentences,
    truncate_at_sentence,
    word_tokens,
)

log = logging.getLogger(__name__)

# minimum token recall for the best-overlap sentence before giving up
OVERLAP_THRESHOLD = 0.3


def matches_topic(article: NewsArticle, keywords: Sequence[str]) -> bool:
    """Keyword topic filter: a tagged topic, or a keyword occurrence in the
    title or body."""
    lowered = [k.lower() for k in keywords]
    tags = {t.lower() for t in article.topics}
    if any(k in tags for k in lowered):
        return True
    haystack = f"{article.title}\n{article.body}".lower()
    return any(re.search(rf"\b{re.escape(k)}\b", haystack) for k in lowered)


def extract_claims(
    article: NewsArticle,
    gateway: LlmGateway,
    model_id: str,
    prompt_template: Template | None = None,
    temperature: float = 0.0,
    max_output_tokens: int = 4096,
    article_token_budget: int = 24000,
) -> list[Claim]:
    """Extract actor-attributed claims from one article.

    Sends a single prompt, parses a JSON array of {utterance, actor},
    drops items that fail validation (logged), collapses duplicates with the
    same normalized utterance and actor, and returns claims in claim_id
    order inheriting the article's source/date/topic.
    """
    template = prompt_template or load_template("extraction")
    body, truncated = truncate_at_sentence(article.body, article_token_budget)
    if truncated:
        log.warning(
            "article %s exceeds the context budget, truncated at a sentence boundary",
            article.article_id,
        )
    prompt = template.substitute(
        title=article.title,
        source=article.source,
        date=article.published_date,
        body=body,
    )
    request = ChatRequest(
        model_id=model_id,
        messages=(("user", prompt),),
        temperature=temperature,
        max_output_tokens=max_output_tokens,
    )
    items = complete_json_array(gateway, request, f"extraction for {article.article_id}")

    claims: list[Claim] = []
    seen: set[tuple[str, str]] = set()
    for item in items:
        if not isinstance(item, dict):
            log.warning("article %s: dropping non-object item %r", article.article_id, item)
            continue
        utterance = str(item.get("utterance", "") or "").strip()
        actor = str(item.get("actor", "") or "").strip()
        if not utterance or not actor:
            log.warning(
                "article %s: dropping item with empty utterance or actor: %r",
                article.article_id,
                item,
            )
            continue
        key = (normalize_for_match(utterance), normalize_for_match(actor))
        if key in seen:
            continue
        seen.add(key)
        claims.append(Claim.build(utterance, actor, article))
    claims.sort(key=lambda c: c.claim_id)
    return claims


def extract_corpus(
    articles: Sequence[NewsArticle],
    gateway: LlmGateway,
    model_id: str,
    topic_keywords: Sequence[str] = (),
    prompt_template: Template | None = None,
    temperature: float = 0.0,
    max_output_tokens: int = 4096,
    article_token_budget: int = 24000,
    concurrency: int = 1,
    locate: bool = True,
) -> list[Claim]:
    """Extract claims from every (topic-matching) article.

    Output order is canonical (article_id, then claim_id) regardless of the
    parallelism used, and every claim passes core-model validation.
    """
    selected = [
        a for a in articles if not topic_keywords or matches_topic(a, topic_keywords)
    ]
    selected = sorted(selected, key=lambda a: a.article_id)
    index = corpus_index(articles)
    template = prompt_template or load_template("extraction")

    def run_one(article: NewsArticle) -> list[Claim]:
        claims = extract_claims(
            article,
            gateway,
            model_id,
            prompt_template=template,
            temperature=temperature,
            max_output_tokens=max_output_tokens,
            article_token_budget=article_token_budget,
        )
        if locate:
            claims = [locate_and_tag(c, article) for c in claims]
        return claims

    results: list[Claim] = []
    if concurrency <= 1 or len(selected) <= 1:
        for article in selected:
            results.extend(run_one(article))
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            for claims in pool.map(run_one, selected):
                results.extend(claims)
    results.sort(key=lambda c: (c.article_id, c.claim_id))
    return [validate_claim(c, index) for c in results]


# --------------------------------------------------------------------------
# utterance location
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class UtteranceLocation:
    start: int
    end: int
    verbatim: bool


def _char_fold(text: str) -> str:
    # length-preserving fold so match offsets stay valid in the raw body
    return (
        text.replace("‘", "'")
        .replace("’", "'")
        .replace("“", '"')
        .replace("”", '"')
        .lower()
    )


def locate_utterance(utterance: str, body: str) -> UtteranceLocation | None:
    """Best-effort character span of an utterance inside an article body.

    Tries, in order: exact substring (verbatim_span=true), case- and
    punctuation-insensitive match, then the sentence with the highest token
    overlap. Returns None when nothing overlaps, as for pure paraphrases.
    """
    if not utterance or not body:
        return None
    pos = body.find(utterance)
    if pos >= 0:
        return UtteranceLocation(pos, pos + len(utterance), verbatim=True)

    folded_body = _char_fold(body)
    folded_utt = _char_fold(utterance)
    pos = folded_body.find(folded_utt)
    if pos >= 0:
        return UtteranceLocation(pos, pos + len(utterance), verbatim=False)

    tokens = word_tokens(utterance)
    if tokens:
        pattern = r"[\W_]+".join(re.escape(t) for t in tokens)
        match = re.search(pattern, body, flags=re.IGNORECASE)
        if match:
            return UtteranceLocation(match.start(), match.end(), verbatim=False)

    best: tuple[float, tuple[int, int]] | None = None
    for start, end in split_sentences(body):
        score = overlap_score(utterance, body[start:end])
        if best is None or score > best[0]:
            best = (score, (start, end))
    if best is None or best[0] < OVERLAP_THRESHOLD:
        return None
    return UtteranceLocation(best[1][0], best[1][1], verbatim=False)


def locate_and_tag(claim: Claim, article: NewsArticle) -> Claim:
    """Return the claim with span/verbatim_span filled from its article."""
    loc = locate_utterance(claim.utterance, article.body)
    if loc is None:
        return replace(claim, verbatim_span=False, span=None)
    return replace(claim, verbatim_span=loc.verbatim, span=(loc.start, loc.end))
