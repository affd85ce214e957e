"""Stage orchestration shared by the CLI subcommands.

Each stage reads and writes the conventional workspace layout (corpus/,
claims/, viewpoints/, profiles/, dataset/, runs/) described by RunConfig.
`run_replay_pipeline` chains every stage against a replay transcript and a
warm Wikidata cache, which is how end-to-end determinism is verified.
"""

from __future__ import annotations

import filecmp
import json
import logging
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Mapping, Sequence

from . import dataset as ds
from . import evaluate as ev
from .classify import RunCell, run_suite
from .config import RunConfig
from .errors import ConfigError, StageInputMissing, WorkspaceLocked
from .extraction import extract_corpus
from .gateway import LlmGateway, export_finetune_file, replay_gateway
from .model import (
    ActorProfile,
    ContextConfig,
    DatasetInstance,
    LearningMode,
    NewsArticle,
    Split,
    corpus_index,
    instances_to_csv,
    load_claims,
    load_corpus,
    load_instances,
    load_predictions,
    load_viewpoint_set,
    save_claims,
    save_corpus,
    save_instances,
    save_viewpoint_set,
)
from .prompts import load_template, template_digest, template_text
from .viewpoints import (
    consolidate_viewpoints,
    export_for_review,
    import_reviewed,
    load_reference_viewpoints,
    partition_utterances,
    propose_all,
)
from .wikidata import (
    OverrideMap,
    ProfileFetcher,
    WikidataClient,
    render_description,
    search_entity,
    select_entity,
)

log = logging.getLogger(__name__)


@contextmanager
def workspace_lock(workspace: Path):
    """One subcommand at a time per workspace."""
    workspace = Path(workspace)
    workspace.mkdir(parents=True, exist_ok=True)
    lock_path = workspace / ".claimlens.lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise WorkspaceLocked(
            f"workspace {workspace} is locked by another run; "
            f"remove {lock_path} if it is stale"
        ) from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        lock_path.unlink(missing_ok=True)


def _require(path: Path, hint: str) -> Path:
    if not Path(path).exists():
        raise StageInputMissing(f"{path} not found; {hint}")
    return Path(path)


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------


def stage_ingest(config: RunConfig, inputs: Sequence[Path]) -> dict:
    """Validate + normalize raw article files into the canonical corpus."""
    articles: list[NewsArticle] = []
    seen: set[str] = set()
    from .errors import DuplicateId, FormatError
    from .model import read_json_lines, validate_article

    for input_path in inputs:
        for lineno, record in read_json_lines(_require(Path(input_path), "pass article JSONL files")):
            try:
                article = NewsArticle.from_json_dict(record)
            except (KeyError, ValueError, TypeError) as exc:
                raise FormatError(f"bad article in {input_path}: {exc}", line=lineno) from None
            if article.article_id in seen:
                raise DuplicateId("article_id", article.article_id, line=lineno)
            seen.add(article.article_id)
            articles.append(validate_article(article))
    articles.sort(key=lambda a: a.article_id)
    save_corpus(articles, config.corpus_path())
    return {"articles": len(articles), "out": str(config.corpus_path())}


def stage_extract(
    config: RunConfig,
    gateway: LlmGateway,
    keywords: Sequence[str] | None = None,
    select_ids: Sequence[str] | None = None,
) -> dict:
    articles = load_corpus(
        _require(config.corpus_path(), "run `claimlens ingest` first")
    )
    claims = extract_corpus(
        articles,
        gateway,
        config.llm.extraction_model,
        topic_keywords=keywords if keywords is not None else config.topic_keywords,
        prompt_template=load_template("extraction", config.prompt_override("extraction")),
        temperature=config.llm.temperature_extraction,
        max_output_tokens=config.llm.max_output_tokens,
        article_token_budget=config.article_token_budget,
        concurrency=config.llm.concurrency,
    )
    if select_ids is not None:
        wanted = set(select_ids)
        claims = [c for c in claims if c.claim_id in wanted]
    save_claims(claims, config.claims_path())
    return {
        "articles": len(articles),
        "claims": len(claims),
        "out": str(config.claims_path()),
    }


def stage_viewpoints_propose(config: RunConfig, gateway: LlmGateway) -> dict:
    claims = load_claims(_require(config.claims_path(), "run `claimlens extract` first"))
    utterances = [c.utterance for c in claims]
    batches = partition_utterances(utterances, config.viewpoint_batch_budget)
    candidates = propose_all(
        batches,
        config.topic,
        gateway,
        config.llm.viewpoint_model,
        prompt_template=load_template(
            "viewpoint_proposal", config.prompt_override("viewpoint_proposal")
        ),
        temperature=config.llm.temperature_viewpoints,
        max_output_tokens=config.llm.max_output_tokens,
        concurrency=config.llm.concurrency,
    )
    path = config.candidates_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([c.to_json_dict() for c in candidates], fh, ensure_ascii=False, indent=2)
        fh.write("\n")
    return {"batches": len(batches), "candidates": len(candidates), "out": str(path)}


def stage_viewpoints_consolidate(config: RunConfig, gateway: LlmGateway) -> dict:
    from .model import Viewpoint

    path = _require(config.candidates_path(), "run `claimlens viewpoints propose` first")
    with open(path, encoding="utf-8") as fh:
        candidates = [Viewpoint.from_json_dict(d) for d in json.load(fh)]
    vset = consolidate_viewpoints(
        candidates,
        config.topic,
        gateway,
        config.llm.viewpoint_model,
        prompt_template=load_template(
            "viewpoint_consolidation", config.prompt_override("viewpoint_consolidation")
        ),
        max_output_tokens=config.llm.max_output_tokens,
    )
    save_viewpoint_set(vset, config.machine_set_path())
    return {
        "candidates": len(candidates),
        "viewpoints": len(vset.viewpoints),
        "out": str(config.machine_set_path()),
    }


def stage_viewpoints_export_review(config: RunConfig) -> dict:
    vset = load_viewpoint_set(
        _require(config.machine_set_path(), "run `claimlens viewpoints consolidate` first")
    )
    export_for_review(vset, config.review_path())
    return {"viewpoints": len(vset.viewpoints), "out": str(config.review_path())}


def stage_viewpoints_import_review(config: RunConfig) -> dict:
    baseline = load_viewpoint_set(
        _require(config.machine_set_path(), "run `claimlens viewpoints consolidate` first")
    )
    review = _require(config.review_path(), "run `claimlens viewpoints export-review` first")
    reviewed = import_reviewed(review, baseline)
    save_viewpoint_set(reviewed, config.viewpoints_path())
    actions: dict[str, int] = {}
    for entry in reviewed.review_log:
        actions[entry.action] = actions.get(entry.action, 0) + 1
    return {
        "viewpoints": len(reviewed.viewpoints),
        "review_log": actions,
        "out": str(config.viewpoints_path()),
    }


def stage_viewpoints_reference(config: RunConfig) -> dict:
    """Install the shipped UK-immigration viewpoint set as the reviewed set."""
    vset = load_reference_viewpoints()
    save_viewpoint_set(vset, config.viewpoints_path())
    return {"viewpoints": len(vset.viewpoints), "out": str(config.viewpoints_path())}


def stage_enrich(
    config: RunConfig, offline: bool = False, strict: bool = False
) -> dict:
    claims = load_claims(_require(config.claims_path(), "run `claimlens extract` first"))
    names = sorted({c.actor_name for c in claims})
    overrides = OverrideMap(config.overrides_path())
    client = None if offline else WikidataClient(endpoint=config.wikidata_endpoint)
    fetcher = ProfileFetcher(
        config.wikidata_cache_dir(), client=client, properties=config.wikidata_properties
    )
    actors: dict[str, dict] = {}
    unresolved: list[str] = []
    for name in names:
        qid = overrides.get(name)
        if qid is None:
            if client is None:
                log.warning("no override for %r and enrichment is offline, skipping", name)
                unresolved.append(name)
                continue
            candidates = search_entity(name, client)
            if not candidates:
                log.warning("no Wikidata candidates for %r", name)
                unresolved.append(name)
                continue
            qid = select_entity(name, candidates, overrides=overrides, strict=strict)
        profile = fetcher.fetch_profile(qid)
        actors[name] = {
            "qid": qid,
            "description": render_description(profile, positions_top_k=config.positions_top_k),
            "profile": profile.to_json_dict(),
        }
    path = config.actors_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(actors, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")
    return {
        "actors": len(names),
        "resolved": len(actors),
        "unresolved": unresolved,
        "out": str(path),
    }


def load_actor_artifacts(path: Path) -> tuple[dict[str, str], dict[str, ActorProfile]]:
    """actors.json -> (name -> rendered description, name -> profile)."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    descriptions = {name: entry["description"] for name, entry in raw.items()}
    profiles = {
        name: ActorProfile.from_json_dict(entry["profile"]) for name, entry in raw.items()
    }
    return descriptions, profiles


def _load_published_split(path: Path) -> dict[str, str]:
    """instance_id -> split name, from JSON ({id: split}) or two-column CSV."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        with open(path, encoding="utf-8") as fh:
            return {str(k): str(v) for k, v in json.load(fh).items()}
    import csv as _csv

    mapping: dict[str, str] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in _csv.DictReader(fh):
            mapping[row["instance_id"]] = row["split"]
    return mapping


def stage_build_dataset(
    config: RunConfig,
    annotations_path: Path | None = None,
    published_split_path: Path | None = None,
    write_csv: bool = True,
) -> dict:
    claims = load_claims(_require(config.claims_path(), "run `claimlens extract` first"))
    articles = corpus_index(
        load_corpus(_require(config.corpus_path(), "run `claimlens ingest` first"))
    )
    vset = load_viewpoint_set(
        _require(config.viewpoints_path(), "import a reviewed viewpoint set first")
    )
    annotations = ds.load_annotations(
        _require(
            Path(annotations_path or config.annotations_path()),
            "provide the raw annotation CSV",
        )
    )
    descriptions: Mapping[str, str] = {}
    if config.actors_path().exists():
        descriptions, _ = load_actor_artifacts(config.actors_path())
    published = (
        _load_published_split(published_split_path) if published_split_path else None
    )
    instances, report = ds.build_benchmark(
        claims,
        vset,
        annotations,
        articles,
        actor_descriptions=descriptions,
        ratios=config.ratios,
        seed=config.seed,
        published_split=published,
    )
    save_instances(instances, config.instances_path())
    if write_csv:
        instances_to_csv(instances, config.dataset_dir() / "instances.csv")
    report_path = config.dataset_dir() / "build_report.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")
    return {
        "input_pairs": report.input_pairs,
        "removed_pairs": report.removed_pairs,
        "instances": report.instances,
        "split_sizes": dict(report.split_sizes),
        "out": str(config.instances_path()),
    }


def _instances_for_split(
    instances: Sequence[DatasetInstance], split: Split | None
) -> list[DatasetInstance]:
    if split is None:
        return list(instances)
    return [i for i in instances if i.split is split]


def stage_export_finetune(
    config: RunConfig,
    context: ContextConfig,
    model_key: str | None = None,
    splits: Sequence[Split] = (Split.TRAIN, Split.VALIDATION),
) -> dict:
    from .classify import build_prompt

    instances = load_instances(
        _require(config.instances_path(), "run `claimlens build-dataset` first")
    )
    if model_key:
        model_id = config.model_by_key(model_key).base_model_id
    elif config.models:
        model_id = config.models[0].base_model_id
    else:
        raise ConfigError("no models configured; add a models table to the config")
    task = template_text("classification", config.prompt_override("classification"))

    def builder(instance: DatasetInstance):
        return build_prompt(
            instance,
            context,
            model_id,
            task_description=task,
            window_sentences=config.window_sentences,
            temperature=config.llm.temperature_classification,
        )

    out_dir = config.dataset_dir() / "finetune"
    counts: dict[str, int] = {}
    for split in splits:
        subset = _instances_for_split(instances, split)
        out_path = out_dir / f"{split.value}.{context.name.lower()}.jsonl"
        counts[split.value] = export_finetune_file(subset, builder, out_path)
    return {"context": context.value, "records": counts, "out": str(out_dir)}


def stage_classify(
    config: RunConfig,
    gateway: LlmGateway,
    cells: Sequence[RunCell],
    split: Split | None = Split.TEST,
    limit: int | None = None,
) -> dict:
    instances = load_instances(
        _require(config.instances_path(), "run `claimlens build-dataset` first")
    )
    vset = load_viewpoint_set(
        _require(config.viewpoints_path(), "import a reviewed viewpoint set first")
    )
    from .model import Provenance

    if vset.provenance is not Provenance.HUMAN_REVIEWED:
        raise ConfigError("classification requires a human-reviewed viewpoint set")
    subset = _instances_for_split(instances, split)
    if limit is not None:
        subset = subset[:limit]
    task = template_text("classification", config.prompt_override("classification"))
    manifest = run_suite(
        subset,
        cells,
        gateway,
        config.runs_dir(),
        task_description=task,
        window_sentences=config.window_sentences,
        temperature=config.llm.temperature_classification,
        parse_retries=config.parse_retries,
        strict_labels=config.strict_labels,
        concurrency=config.llm.concurrency,
        prompt_digest=template_digest(
            "classification", config.prompt_override("classification")
        ),
    )
    defaulted = sum(c["defaulted"] for c in manifest["cells"])
    return {
        "cells": len(cells),
        "instances": len(subset),
        "defaulted": defaulted,
        "manifest": str(config.runs_dir() / "manifest.json"),
    }


def stage_evaluate(
    config: RunConfig,
    run_cell: str | None = None,
    predictions_path: Path | None = None,
    split: Split | None = Split.TEST,
    figures: bool = True,
) -> dict:
    if predictions_path is None:
        if not run_cell:
            raise ConfigError("pass --run CELL_ID or --predictions PATH")
        predictions_path = config.runs_dir() / f"{run_cell}.jsonl"
    predictions = load_predictions(
        _require(Path(predictions_path), "run `claimlens classify` first")
    )
    instances = load_instances(
        _require(config.instances_path(), "run `claimlens build-dataset` first")
    )
    subset = _instances_for_split(instances, split)
    scored_ids = {p.instance_id for p in predictions}
    subset = [i for i in subset if i.instance_id in scored_ids] or subset
    first = predictions[0] if predictions else None
    reports = ev.score_run(
        predictions,
        subset,
        model_id=first.model_id if first else "",
        context_config=first.context_config if first else ContextConfig.TEXT,
        learning_mode=first.learning_mode if first else LearningMode.ZERO_SHOT,
    )
    rows = ev.per_viewpoint_report(predictions, subset)
    stem = run_cell or Path(predictions_path).stem
    out = ev.write_report_files(reports, rows, config.runs_dir() / "reports", stem)
    summary = {
        "run": stem,
        "instances": len(subset),
        "f1_macro_two_class": ev.percent(
            reports["macro-two-class"].overall.f1
        ),
        "f1_positive_class": ev.percent(reports["positive-class"].overall.f1),
        "reports": {k: str(v) for k, v in out.items()},
    }
    if figures:
        from .figures import render_per_viewpoint_f1

        png = config.runs_dir() / "reports" / f"{stem}.per_viewpoint.png"
        render_per_viewpoint_f1(rows, png, title=stem)
        summary["figure"] = str(png)
    return summary


def stage_analytics(
    config: RunConfig,
    dimension: str,
    source: str = "gold",
    run_cell: str | None = None,
    figures: bool = True,
) -> dict:
    instances = load_instances(
        _require(config.instances_path(), "run `claimlens build-dataset` first")
    )
    claims = {
        c.claim_id: c
        for c in load_claims(_require(config.claims_path(), "run `claimlens extract` first"))
    }
    profiles: dict[str, ActorProfile] = {}
    if config.actors_path().exists():
        _, profiles = load_actor_artifacts(config.actors_path())
    if source == "gold":
        positives = [i for i in instances if i.label]
    elif source == "predictions":
        if not run_cell:
            raise ConfigError("--from predictions needs --run CELL_ID")
        predictions = load_predictions(
            _require(config.runs_dir() / f"{run_cell}.jsonl", "run `claimlens classify` first")
        )
        positive_ids = {p.instance_id for p in predictions if p.predicted_label}
        positives = [i for i in instances if i.instance_id in positive_ids]
    else:
        raise ConfigError(f"unknown analytics source {source!r}; use gold or predictions")
    rows = ev.analytics(positives, dimension, claims=claims, profiles=profiles)
    out_csv = config.analytics_dir() / f"{dimension}.csv"
    ev.write_analytics_csv(rows, dimension, out_csv)
    unknown = sum(r.count for r in rows if r.dimension_value == ev.UNKNOWN)
    summary = {
        "dimension": dimension,
        "positives": len(positives),
        "groups": len({r.dimension_value for r in rows}),
        "unknown_bucket": unknown,
        "out": str(out_csv),
    }
    if figures:
        from .figures import render_distribution

        vset_path = config.viewpoints_path()
        titles = {}
        if vset_path.exists():
            titles = {
                v.viewpoint_id: v.title for v in load_viewpoint_set(vset_path).viewpoints
            }
        png = config.analytics_dir() / f"{dimension}.png"
        render_distribution(rows, dimension, png, viewpoint_titles=titles)
        summary["figure"] = str(png)
    return summary


# --------------------------------------------------------------------------
# end-to-end replay
# --------------------------------------------------------------------------


def run_replay_pipeline(
    config: RunConfig,
    transcript_path: Path,
    annotations_path: Path,
    out_dir: Path,
    context: ContextConfig = ContextConfig.TEXT_AND_KG,
    mode: LearningMode = LearningMode.ZERO_SHOT,
) -> list[Path]:
    """Full chain (extract, viewpoints, enrich, build-dataset, classify,
    evaluate) against a recorded transcript and warm caches, writing every
    artifact under `out_dir`. Returns the written files, sorted.

    Zero network I/O: the gateway replays and enrichment is offline.
    """
    if not config.models:
        raise ConfigError("replay pipeline needs at least one configured model")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    gateway = replay_gateway(transcript_path)

    articles = load_corpus(_require(config.corpus_path(), "corpus fixture missing"))
    claims = extract_corpus(
        articles,
        gateway,
        config.llm.extraction_model,
        topic_keywords=config.topic_keywords,
        prompt_template=load_template("extraction", config.prompt_override("extraction")),
        temperature=config.llm.temperature_extraction,
        max_output_tokens=config.llm.max_output_tokens,
        article_token_budget=config.article_token_budget,
    )
    save_claims(claims, out_dir / "claims.jsonl")

    utterances = [c.utterance for c in claims]
    batches = partition_utterances(utterances, config.viewpoint_batch_budget)
    candidates = propose_all(
        batches,
        config.topic,
        gateway,
        config.llm.viewpoint_model,
        prompt_template=load_template(
            "viewpoint_proposal", config.prompt_override("viewpoint_proposal")
        ),
        temperature=config.llm.temperature_viewpoints,
        max_output_tokens=config.llm.max_output_tokens,
    )
    machine_set = consolidate_viewpoints(
        candidates,
        config.topic,
        gateway,
        config.llm.viewpoint_model,
        prompt_template=load_template(
            "viewpoint_consolidation", config.prompt_override("viewpoint_consolidation")
        ),
        max_output_tokens=config.llm.max_output_tokens,
    )
    save_viewpoint_set(machine_set, out_dir / "machine_set.json")
    review_path = out_dir / "review.txt"
    export_for_review(machine_set, review_path)
    reviewed = import_reviewed(review_path, machine_set)
    save_viewpoint_set(reviewed, out_dir / "viewpoints.json")

    overrides = OverrideMap(config.overrides_path())
    fetcher = ProfileFetcher(
        config.wikidata_cache_dir(), client=None, properties=config.wikidata_properties
    )
    actors: dict[str, dict] = {}
    for name in sorted({c.actor_name for c in claims}):
        qid = overrides.get(name)
        if qid is None:
            log.warning("replay enrichment: no override for %r, skipping", name)
            continue
        profile = fetcher.fetch_profile(qid)
        actors[name] = {
            "qid": qid,
            "description": render_description(profile, positions_top_k=config.positions_top_k),
            "profile": profile.to_json_dict(),
        }
    actors_path = out_dir / "actors.json"
    with open(actors_path, "w", encoding="utf-8") as fh:
        json.dump(actors, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")

    annotations = ds.load_annotations(annotations_path)
    instances, report = ds.build_benchmark(
        claims,
        reviewed,
        annotations,
        corpus_index(articles),
        actor_descriptions={n: a["description"] for n, a in actors.items()},
        ratios=config.ratios,
        seed=config.seed,
    )
    save_instances(instances, out_dir / "instances.jsonl")
    instances_to_csv(instances, out_dir / "instances.csv")
    with open(out_dir / "build_report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")

    cell = RunCell(config.models[0], context, mode)
    test_instances = [i for i in instances if i.split is Split.TEST]
    task = template_text("classification", config.prompt_override("classification"))
    run_suite(
        test_instances,
        [cell],
        gateway,
        out_dir / "runs",
        task_description=task,
        window_sentences=config.window_sentences,
        temperature=config.llm.temperature_classification,
        parse_retries=config.parse_retries,
        strict_labels=config.strict_labels,
        prompt_digest=template_digest(
            "classification", config.prompt_override("classification")
        ),
    )
    predictions = load_predictions(out_dir / "runs" / f"{cell.cell_id}.jsonl")
    reports = ev.score_run(
        predictions,
        test_instances,
        model_id=cell.model_id,
        context_config=context,
        learning_mode=mode,
    )
    rows = ev.per_viewpoint_report(predictions, test_instances)
    ev.write_report_files(reports, rows, out_dir / "runs" / "reports", cell.cell_id)

    return sorted(p for p in out_dir.rglob("*") if p.is_file())


def compare_trees(dir_a: Path, dir_b: Path) -> tuple[bool, list[str]]:
    """Byte-compare two output trees; returns (identical, differing files)."""
    dir_a, dir_b = Path(dir_a), Path(dir_b)
    files_a = {p.relative_to(dir_a) for p in dir_a.rglob("*") if p.is_file()}
    files_b = {p.relative_to(dir_b) for p in dir_b.rglob("*") if p.is_file()}
    diffs = sorted(str(p) for p in files_a.symmetric_difference(files_b))
    for rel in sorted(files_a & files_b):
        if not filecmp.cmp(dir_a / rel, dir_b / rel, shallow=False):
            diffs.append(str(rel))
    return (not diffs, diffs)


def stage_replay_verify(
    config: RunConfig,
    transcript_path: Path,
    annotations_path: Path,
    context: ContextConfig = ContextConfig.TEXT_AND_KG,
    mode: LearningMode = LearningMode.ZERO_SHOT,
) -> dict:
    """Run the replay pipeline twice and byte-compare every output."""
    base = config.workspace / "runs" / "replay-verify"
    results = []
    for n in (1, 2):
        out_dir = base / f"pass{n}"
        if out_dir.exists():
            import shutil

            shutil.rmtree(out_dir)
        results.append(
            run_replay_pipeline(
                config,
                transcript_path,
                annotations_path,
                out_dir,
                context=context,
                mode=mode,
            )
        )
    identical, diffs = compare_trees(base / "pass1", base / "pass2")
    return {
        "identical": identical,
        "files": len(results[0]),
        "differing": diffs,
        "out": str(base),
    }
