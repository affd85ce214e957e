"""Hybrid human-machine viewpoint identification.

Utterances are packed into token-budgeted batches, each batch yields
candidate viewpoints from one LLM call, a single consolidation call merges
all candidates, and the result round-trips through a hand-editable review
file before it is accepted for classification.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from string import Template
from typing import Sequence

from .errors import (
    EmptySetAfterReview,
    FormatError,
    UtteranceTooLarge,
)
from .gateway import ChatRequest, LlmGateway
from .llmio import complete_json_array
from .model import (
    Provenance,
    ReviewEntry,
    Viewpoint,
    ViewpointSet,
    validate_viewpoint_set,
)
from .prompts import load_template
from .textutil import estimate_tokens

log = logging.getLogger(__name__)

REFERENCE_VIEWPOINTS_RESOURCE = "uk_immigration_viewpoints.json"


def load_reference_viewpoints() -> ViewpointSet:
    """The reviewed nine-viewpoint set shipped for the UK immigration case
    study."""
    text = (
        resources.files("claimlens")
        .joinpath("data", REFERENCE_VIEWPOINTS_RESOURCE)
        .read_text(encoding="utf-8")
    )
    return validate_viewpoint_set(ViewpointSet.from_json_dict(json.loads(text)))


# --------------------------------------------------------------------------
# batching
# --------------------------------------------------------------------------


def partition_utterances(utterances: Sequence[str], token_budget: int) -> list[list[str]]:
    """Greedy in-order packing: each batch's estimated token total stays
    within the budget, order is preserved, and no utterance is split."""
    batches: list[list[str]] = []
    current: list[str] = []
    current_tokens = 0
    for index, utterance in enumerate(utterances):
        tokens = estimate_tokens(utterance)
        if tokens > token_budget:
            raise UtteranceTooLarge(index, tokens, token_budget)
        if current and current_tokens + tokens > token_budget:
            batches.append(current)
            current = []
            current_tokens = 0
        current.append(utterance)
        current_tokens += tokens
    if current:
        batches.append(current)
    return batches


# --------------------------------------------------------------------------
# proposal + consolidation
# --------------------------------------------------------------------------


def _parse_candidates(items: list, topic: str, what: str) -> list[Viewpoint]:
    viewpoints = []
    for item in items:
        if not isinstance(item, dict):
            log.warning("%s: dropping non-object candidate %r", what, item)
            continue
        title = str(item.get("title", "") or "").strip()
        description = str(item.get("description", "") or "").strip()
        if not title or not description:
            log.warning("%s: dropping candidate without title/description: %r", what, item)
            continue
        viewpoints.append(
            Viewpoint(
                viewpoint_id=len(viewpoints) + 1,
                title=title,
                description=description,
                topic=topic,
            )
        )
    return viewpoints


def propose_viewpoints(
    batch: Sequence[str],
    topic: str,
    gateway: LlmGateway,
    model_id: str,
    prompt_template: Template | None = None,
    temperature: float = 0.7,
    max_output_tokens: int = 2048,
) -> list[Viewpoint]:
    """One LLM call proposing candidate viewpoints for a batch of
    utterances. Candidate ids are provisional (renumbered at
    consolidation)."""
    if not batch:
        raise ValueError("cannot propose viewpoints from an empty batch")
    template = prompt_template or load_template("viewpoint_proposal")
    listing = "\n".join(f"- {u}" for u in batch)
    request = ChatRequest(
        model_id=model_id,
        messages=(("user", template.substitute(topic=topic, utterances=listing)),),
        temperature=temperature,
        max_output_tokens=max_output_tokens,
    )
    items = complete_json_array(gateway, request, f"viewpoint proposal ({topic})")
    return _parse_candidates(items, topic, "viewpoint proposal")


def propose_all(
    batches: Sequence[Sequence[str]],
    topic: str,
    gateway: LlmGateway,
    model_id: str,
    prompt_template: Template | None = None,
    temperature: float = 0.7,
    max_output_tokens: int = 2048,
    concurrency: int = 1,
) -> list[Viewpoint]:
    """Propose candidates for every batch, preserving batch order."""

    def run_one(batch: Sequence[str]) -> list[Viewpoint]:
        return propose_viewpoints(
            batch, topic, gateway, model_id,
            prompt_template=prompt_template,
            temperature=temperature,
            max_output_tokens=max_output_tokens,
        )

    candidates: list[Viewpoint] = []
    if concurrency <= 1 or len(batches) <= 1:
        batch_results = [run_one(b) for b in batches]
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            batch_results = list(pool.map(run_one, batches))
    for result in batch_results:
        candidates.extend(result)
    return candidates


def consolidate_viewpoints(
    candidates: Sequence[Viewpoint],
    topic: str,
    gateway: LlmGateway,
    model_id: str,
    prompt_template: Template | None = None,
    temperature: float = 0.0,
    max_output_tokens: int = 4096,
) -> ViewpointSet:
    """Single consolidation call over all candidates; the merged set carries
    machine-candidate provenance and must pass set validation (unique,
    non-duplicate titles)."""
    if not candidates:
        raise ValueError("cannot consolidate an empty candidate list")
    template = prompt_template or load_template("viewpoint_consolidation")
    listing = json.dumps(
        [{"title": c.title, "description": c.description} for c in candidates],
        ensure_ascii=False,
        indent=2,
    )
    request = ChatRequest(
        model_id=model_id,
        messages=(("user", template.substitute(topic=topic, candidates=listing)),),
        temperature=temperature,
        max_output_tokens=max_output_tokens,
    )
    items = complete_json_array(gateway, request, f"viewpoint consolidation ({topic})")
    merged = _parse_candidates(items, topic, "viewpoint consolidation")
    vset = ViewpointSet(
        topic=topic,
        viewpoints=tuple(merged),
        provenance=Provenance.MACHINE_CANDIDATE,
    )
    return validate_viewpoint_set(vset)


# --------------------------------------------------------------------------
# human review round-trip
# --------------------------------------------------------------------------

_REVIEW_HEADER = """\
# Viewpoint review for topic: {topic}
# One block per viewpoint, separated by --- lines.
# Edit titles and descriptions freely. Set "action: remove" to drop a
# viewpoint. To add one, append a new block with "id: new".
"""

_BLOCK_KEYS = ("id", "title", "description", "action")


def export_for_review(vset: ViewpointSet, path) -> None:
    """Write the hand-editable review file for a machine-candidate set."""
    if vset.provenance is not Provenance.MACHINE_CANDIDATE:
        raise ValueError("only machine-candidate sets are exported for review")
    lines = [_REVIEW_HEADER.format(topic=vset.topic)]
    for v in vset.viewpoints:
        lines.append("---")
        lines.append(f"id: {v.viewpoint_id}")
        lines.append(f"title: {v.title}")
        lines.append(f"description: {v.description}")
        lines.append("action: keep")
        lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))


def _parse_review_blocks(text: str) -> list[dict]:
    blocks: list[dict] = []
    current: dict | None = None
    current_key: str | None = None
    for raw in text.splitlines():
        line = raw.rstrip("\n")
        stripped = line.strip()
        if stripped.startswith("#"):
            continue
        if stripped == "---":
            current = {}
            current_key = None
            blocks.append(current)
            continue
        if current is None:
            if stripped:
                raise FormatError(f"content before the first block separator: {stripped!r}")
            continue
        matched = False
        for key in _BLOCK_KEYS:
            prefix = f"{key}:"
            if stripped.lower().startswith(prefix):
                current[key] = stripped[len(prefix) :].strip()
                current_key = key
                matched = True
                break
        if matched:
            continue
        if stripped and current_key in ("title", "description"):
            # hand-wrapped continuation line
            current[current_key] = f"{current[current_key]} {stripped}".strip()
        elif stripped:
            raise FormatError(
                f"unrecognised line in block {len(blocks)}: {stripped!r}", line=len(blocks)
            )
    return [b for b in blocks if b]


def import_reviewed(path, baseline: ViewpointSet) -> ViewpointSet:
    """Parse the edited review file, diff it against the exported baseline
    into the review log, and return a human-reviewed set."""
    with open(path, encoding="utf-8") as fh:
        blocks = _parse_review_blocks(fh.read())

    baseline_by_id = baseline.by_id()
    next_id = max(baseline_by_id, default=0) + 1
    final: list[Viewpoint] = []
    seen_ids: set[int] = set()
    removed_ids: set[int] = set()
    log_entries: dict[int, ReviewEntry] = {}
    added_entries: list[ReviewEntry] = []

    for number, block in enumerate(blocks, start=1):
        for required in ("id", "title", "description"):
            if not block.get(required):
                raise FormatError(f"block {number} is missing {required!r}", line=number)
        action = block.get("action", "keep").lower()
        if action not in ("keep", "remove"):
            raise FormatError(f"block {number} has unknown action {action!r}", line=number)
        raw_id = block["id"].lower()
        if raw_id == "new":
            vid = next_id
            next_id += 1
            is_new = True
        else:
            try:
                vid = int(raw_id)
            except ValueError:
                raise FormatError(f"block {number} has a non-integer id {block['id']!r}", line=number) from None
            is_new = vid not in baseline_by_id
            if is_new and vid >= next_id:
                next_id = vid + 1
        if action == "remove":
            if not is_new:
                removed_ids.add(vid)
                log_entries[vid] = ReviewEntry("removed", vid, note=baseline_by_id[vid].title)
            continue
        if vid in seen_ids:
            raise FormatError(f"block {number} repeats id {vid}", line=number)
        seen_ids.add(vid)
        viewpoint = Viewpoint(
            viewpoint_id=vid,
            title=block["title"],
            description=block["description"],
            topic=baseline.topic,
        )
        final.append(viewpoint)
        if is_new:
            added_entries.append(ReviewEntry("added", vid, note=viewpoint.title))
        else:
            original = baseline_by_id[vid]
            if original.title == viewpoint.title and original.description == viewpoint.description:
                log_entries[vid] = ReviewEntry("kept", vid)
            else:
                log_entries[vid] = ReviewEntry("edited", vid, note=original.title)

    for vid, original in baseline_by_id.items():
        if vid not in seen_ids and vid not in removed_ids:
            log_entries[vid] = ReviewEntry("removed", vid, note=original.title)

    if not final:
        raise EmptySetAfterReview("every viewpoint was removed in review")

    review_log = tuple(
        [log_entries[vid] for vid in sorted(log_entries)] + added_entries
    )
    reviewed = ViewpointSet(
        topic=baseline.topic,
        viewpoints=tuple(final),
        provenance=Provenance.HUMAN_REVIEWED,
        review_log=review_log,
    )
    return validate_viewpoint_set(reviewed)
