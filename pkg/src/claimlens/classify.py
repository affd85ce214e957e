"""Binary claim-viewpoint classification under three context settings.

Context comes from the surrounding article text (the located utterance
sentence plus a configurable window), the rendered actor description, or
both (actor background first: speaker identity frames the quote). Prompts
are byte-stable for fixed inputs so fine-tune exports can never drift from
inference prompts.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .errors import (
    ConfigError,
    GatewayError,
    MissingArticleBody,
    ParseFailure,
)
from .extraction import locate_utterance
from .gateway import ChatRequest, ChatResponse, LlmGateway
from .model import (
    ContextConfig,
    DatasetInstance,
    LearningMode,
    Prediction,
    load_predictions,
    save_predictions,
)
from .prompts import template_text
from .textutil import split_sentences

log = logging.getLogger(__name__)

_STANDALONE_BIT = re.compile(r"(?<![\w.])[01](?!\w|\.\d)")
_YES_NO = re.compile(r"\b(yes|no)\b", re.IGNORECASE)

MODE_SHORT = {LearningMode.ZERO_SHOT: "zsl", LearningMode.FINE_TUNED: "ft"}
CONFIG_SLUG = {
    ContextConfig.TEXT: "text",
    ContextConfig.KG: "kg",
    ContextConfig.TEXT_AND_KG: "text_and_kg",
}


def surrounding_text(utterance: str, body: str, window_sentences: int = 1) -> str:
    """The sentence containing the utterance plus `window_sentences` before
    and after. Falls back to the utterance itself when it cannot be located
    in the body."""
    located = locate_utterance(utterance, body)
    if located is None:
        return utterance
    sentences = split_sentences(body)
    if not sentences:
        return utterance
    covering = [
        i
        for i, (start, end) in enumerate(sentences)
        if start < located.end and end > located.start
    ]
    if not covering:
        return utterance
    first = max(0, covering[0] - window_sentences)
    last = min(len(sentences) - 1, covering[-1] + window_sentences)
    return body[sentences[first][0] : sentences[last][1]]


def build_context(
    instance: DatasetInstance, config: ContextConfig, window_sentences: int = 1
) -> str:
    """Assemble the context block for one instance under one setting."""
    if config in (ContextConfig.TEXT, ContextConfig.TEXT_AND_KG):
        if not instance.article_body.strip():
            raise MissingArticleBody(instance.instance_id)
    kg_text = instance.actor_description or f"{instance.actor_name}."
    if config is ContextConfig.KG:
        return kg_text
    text_block = surrounding_text(
        instance.utterance, instance.article_body, window_sentences
    )
    if config is ContextConfig.TEXT:
        return text_block
    if config is ContextConfig.TEXT_AND_KG:
        return f"Actor background:\n{kg_text}\n\nSurrounding text:\n{text_block}"
    raise ConfigError(f"unhandled context configuration: {config}")


def build_prompt(
    instance: DatasetInstance,
    config: ContextConfig,
    model_id: str,
    task_description: str | None = None,
    window_sentences: int = 1,
    temperature: float = 0.0,
    max_output_tokens: int = 4,
) -> ChatRequest:
    """Byte-stable classification prompt: task description as the system
    message; claim, viewpoint, and context in fixed order in the user
    message."""
    system = (task_description or template_text("classification")).strip()
    context = build_context(instance, config, window_sentences)
    user = (
        "Claim:\n"
        f"{instance.actor_name}: \"{instance.utterance}\"\n\n"
        "Viewpoint:\n"
        f"{instance.viewpoint_description}\n\n"
        "Context:\n"
        f"{context}"
    )
    return ChatRequest(
        model_id=model_id,
        messages=(("system", system), ("user", user)),
        temperature=temperature,
        max_output_tokens=max_output_tokens,
    )


def parse_label(response: str, strict: bool = True) -> bool:
    """Map a model response to a boolean.

    Strict mode accepts exactly "1" or "0" after trimming. Lenient mode
    falls back to the first standalone 0/1 token, then to a yes/no token.
    """
    trimmed = response.strip()
    if trimmed == "1":
        return True
    if trimmed == "0":
        return False
    if strict:
        raise ParseFailure(response)
    match = _STANDALONE_BIT.search(response)
    if match:
        return match.group() == "1"
    match = _YES_NO.search(response)
    if match:
        return match.group().lower() == "yes"
    raise ParseFailure(response)


def classify_instance(
    instance: DatasetInstance,
    config: ContextConfig,
    mode: LearningMode,
    gateway: LlmGateway,
    model_id: str,
    task_description: str | None = None,
    window_sentences: int = 1,
    temperature: float = 0.0,
    parse_retries: int = 2,
    strict_labels: bool = True,
) -> Prediction:
    """Prompt, complete, parse. A persistent parse failure (after
    `parse_retries` re-asks) defaults the label to false and sets the
    `defaulted` flag so evaluation can surface it."""
    request = build_prompt(
        instance,
        config,
        model_id,
        task_description=task_description,
        window_sentences=window_sentences,
        temperature=temperature,
    )
    attempts = 0
    response: ChatResponse | None = None
    for _ in range(1 + parse_retries):
        response = gateway.complete(request)
        attempts += 1
        try:
            label = parse_label(response.content, strict=strict_labels)
        except ParseFailure:
            continue
        return Prediction(
            instance_id=instance.instance_id,
            predicted_label=label,
            model_id=model_id,
            context_config=config,
            learning_mode=mode,
            raw_response=response.content,
            attempts=attempts,
        )
    log.warning(
        "instance %s: unparseable response after %d attempts, defaulting to 0",
        instance.instance_id,
        attempts,
    )
    return Prediction(
        instance_id=instance.instance_id,
        predicted_label=False,
        model_id=model_id,
        context_config=config,
        learning_mode=mode,
        raw_response=response.content if response else "",
        attempts=attempts,
        defaulted=True,
    )


# --------------------------------------------------------------------------
# experiment matrix
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    """One row of the model table: a short key for file naming, the base
    model id for zero-shot runs, and the externally fine-tuned model id (if
    any) for fine-tuned runs."""

    key: str
    base_model_id: str
    finetuned_model_id: str | None = None

    def model_id_for(self, mode: LearningMode) -> str:
        if mode is LearningMode.ZERO_SHOT:
            return self.base_model_id
        if mode is LearningMode.FINE_TUNED:
            if not self.finetuned_model_id:
                raise ConfigError(
                    f"model {self.key!r} has no fine-tuned model id configured"
                )
            return self.finetuned_model_id
        raise ConfigError(f"unhandled learning mode: {mode}")


@dataclass(frozen=True)
class RunCell:
    model: ModelSpec
    context_config: ContextConfig
    learning_mode: LearningMode

    @property
    def cell_id(self) -> str:
        return (
            f"{self.model.key}__{CONFIG_SLUG[self.context_config]}"
            f"__{MODE_SHORT[self.learning_mode]}"
        )

    @property
    def model_id(self) -> str:
        return self.model.model_id_for(self.learning_mode)


def experiment_cells(
    models: Sequence[ModelSpec],
    configs: Sequence[ContextConfig] = tuple(ContextConfig),
    modes: Sequence[LearningMode] = tuple(LearningMode),
) -> list[RunCell]:
    return [
        RunCell(model=m, context_config=c, learning_mode=mode)
        for m in models
        for c in configs
        for mode in modes
    ]


def classify_cell(
    instances: Sequence[DatasetInstance],
    cell: RunCell,
    gateway: LlmGateway,
    out_path: Path,
    task_description: str | None = None,
    window_sentences: int = 1,
    temperature: float = 0.0,
    parse_retries: int = 2,
    strict_labels: bool = True,
    concurrency: int = 1,
) -> list[Prediction]:
    """Classify every instance for one (model, context, mode) cell.

    Resumable: instances already present in `out_path` are skipped. On a
    gateway failure the completed predictions are checkpointed before the
    error propagates. Output is canonicalized by instance_id.
    """
    out_path = Path(out_path)
    done: dict[str, Prediction] = {}
    if out_path.exists():
        done = {p.instance_id: p for p in load_predictions(out_path)}
    todo = [i for i in instances if i.instance_id not in done]

    def run_one(instance: DatasetInstance) -> Prediction:
        return classify_instance(
            instance,
            cell.context_config,
            cell.learning_mode,
            gateway,
            cell.model_id,
            task_description=task_description,
            window_sentences=window_sentences,
            temperature=temperature,
            parse_retries=parse_retries,
            strict_labels=strict_labels,
        )

    new: list[Prediction] = []
    try:
        if concurrency <= 1 or len(todo) <= 1:
            for instance in todo:
                new.append(run_one(instance))
        else:
            with ThreadPoolExecutor(max_workers=concurrency) as pool:
                new.extend(pool.map(run_one, todo))
    except GatewayError:
        merged = sorted(
            list(done.values()) + new, key=lambda p: p.instance_id
        )
        save_predictions(merged, out_path)
        log.error("cell %s aborted; %d predictions checkpointed", cell.cell_id, len(merged))
        raise
    merged = sorted(list(done.values()) + new, key=lambda p: p.instance_id)
    save_predictions(merged, out_path)
    return merged


def run_suite(
    instances: Sequence[DatasetInstance],
    cells: Sequence[RunCell],
    gateway_for_cell: Callable[[RunCell], LlmGateway] | LlmGateway,
    out_dir: Path,
    task_description: str | None = None,
    window_sentences: int = 1,
    temperature: float = 0.0,
    parse_retries: int = 2,
    strict_labels: bool = True,
    concurrency: int = 1,
    prompt_digest: str = "",
) -> dict:
    """Run every cell, writing one prediction file per cell plus a manifest.

    The manifest is deterministic (no wall-clock fields) so replayed suites
    are byte-identical; re-running merges cells into the existing manifest
    keyed by cell_id.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.json"
    existing: dict[str, dict] = {}
    if manifest_path.exists():
        with open(manifest_path, encoding="utf-8") as fh:
            for entry in json.load(fh).get("cells", []):
                existing[entry["cell_id"]] = entry
    manifest_cells = []
    for cell in cells:
        gateway = gateway_for_cell(cell) if callable(gateway_for_cell) else gateway_for_cell
        out_path = out_dir / f"{cell.cell_id}.jsonl"
        predictions = classify_cell(
            instances,
            cell,
            gateway,
            out_path,
            task_description=task_description,
            window_sentences=window_sentences,
            temperature=temperature,
            parse_retries=parse_retries,
            strict_labels=strict_labels,
            concurrency=concurrency,
        )
        defaulted = sorted(p.instance_id for p in predictions if p.defaulted)
        manifest_cells.append(
            {
                "cell_id": cell.cell_id,
                "model_key": cell.model.key,
                "model_id": cell.model_id,
                "context_config": cell.context_config.value,
                "learning_mode": cell.learning_mode.value,
                "predictions_file": out_path.name,
                "instances": len(predictions),
                "defaulted": len(defaulted),
                "defaulted_ids": defaulted,
            }
        )
    for entry in manifest_cells:
        existing[entry["cell_id"]] = entry
    merged_cells = [existing[cid] for cid in sorted(existing)]
    manifest = {
        "cells": merged_cells,
        "cell_count": len(merged_cells),
        "instance_count": len(instances),
        "prompt_digest": prompt_digest,
        "window_sentences": window_sentences,
        "temperature": temperature,
        "strict_labels": strict_labels,
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
