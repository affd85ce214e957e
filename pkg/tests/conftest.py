"""Shared fixtures: a three-article corpus, scripted LLM backends, Wikidata
cache fixtures, and a fully recorded end-to-end replay environment."""

from __future__ import annotations

import hashlib
import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import pytest

from claimlens.classify import ModelSpec
from claimlens.config import LlmConfig, RunConfig
from claimlens.gateway import ChatRequest, LlmGateway, ScriptedBackend
from claimlens.model import NewsArticle, save_corpus

FIXTURES = Path(__file__).parent / "fixtures"
WIKIDATA_FIXTURES = FIXTURES / "wikidata"

COOPER_UTTERANCE = (
    "The Conservative government has 'failed to get a grip' on Channel crossings."
)
HUNT_UTTERANCE = "Levels of migration are 'too high' and 'unsustainable'."
STARMER_UTTERANCE = "Britain's asylum system is riddled with abuse."


def make_articles() -> list[NewsArticle]:
    return [
        NewsArticle(
            article_id="a001",
            url="https://news.example/cooper-channel",
            title="Row over Channel crossings intensifies",
            body=(
                "The debate over small boats returned to the Commons this week. "
                "Labour's shadow home secretary Yvette Cooper has said the "
                "conservative government has 'failed to get a grip' on channel "
                "crossings. Ministers rejected the charge and pointed to recent "
                "figures. The Home Office said arrivals were down on last year."
            ),
            source="Example Times",
            published_date="2023-06-14",
            topics=("immigration",),
        ),
        NewsArticle(
            article_id="a002",
            url="https://news.example/hunt-migration",
            title="MP calls migration levels unsustainable",
            body=(
                "Speaking at a constituency event, Ipswich MP Tom Hunt said "
                "levels of migration are 'too high' and 'unsustainable'. "
                "He urged the government to go further on border policy. "
                "Local business groups offered a different view, citing staff "
                "shortages in hospitality."
            ),
            source="Example Mail",
            published_date="2023-07-02",
            topics=("immigration",),
        ),
        NewsArticle(
            article_id="a003",
            url="https://news.example/starmer-asylum",
            title="Labour leader criticises asylum backlog",
            body=(
                "Keir Starmer said Britain's asylum system is riddled with "
                "abuse. The Labour leader promised faster processing and new "
                "returns agreements. Campaigners welcomed parts of the plan "
                "but warned over enforcement rhetoric."
            ),
            source="Example Herald",
            published_date="2023-08-21",
            topics=("immigration", "politics"),
        ),
    ]


@pytest.fixture()
def articles() -> list[NewsArticle]:
    return make_articles()


EXTRACTION_SCRIPT = {
    "Row over Channel crossings intensifies": [
        {"utterance": COOPER_UTTERANCE, "actor": "Yvette Cooper"}
    ],
    "MP calls migration levels unsustainable": [
        {"utterance": HUNT_UTTERANCE, "actor": "Tom Hunt"}
    ],
    "Labour leader criticises asylum backlog": [
        {"utterance": STARMER_UTTERANCE, "actor": "Keir Starmer"}
    ],
}

PROPOSAL_CANDIDATES = [
    {
        "title": "Restricting immigration pathways",
        "description": "Utterances advocating measures that would make it harder to enter the UK.",
    },
    {
        "title": "Restrict immigration",
        "description": "Positions calling for tougher entry rules and enforcement.",
    },
    {
        "title": "Immigrants as victims/Humanitarian emphasis",
        "description": "Utterances sympathetic to the plight of immigrants.",
    },
]

CONSOLIDATED_VIEWPOINTS = [
    {
        "title": "Restricting immigration pathways",
        "description": "Utterances advocating measures that would make it more difficult to enter the UK.",
    },
    {
        "title": "Immigrants as victims/Humanitarian emphasis",
        "description": "Utterances sympathetic to the plight of immigrants.",
    },
    {
        "title": "Immigration as a management issue",
        "description": "Utterances discussing how to manage immigration rather than a pro or anti stance.",
    },
]


def scripted_response(request: ChatRequest) -> str:
    """Deterministic stand-in model for scripted and recorded runs."""
    system = next((c for r, c in request.messages if r == "system"), "")
    user = next(c for r, c in request.messages if r == "user")
    if "decide whether a claim made by an actor aligns" in system:
        digest = hashlib.sha256(user.encode("utf-8")).digest()
        return "1" if digest[0] % 2 == 0 else "0"
    if "extract the claims" in user:
        for title, items in EXTRACTION_SCRIPT.items():
            if f"Article title: {title}" in user:
                return json.dumps(items)
        return "[]"
    if "mapping the debate" in user:
        return json.dumps(PROPOSAL_CANDIDATES)
    if "consolidating candidate viewpoints" in user:
        return json.dumps(CONSOLIDATED_VIEWPOINTS)
    raise AssertionError(f"scripted backend got an unexpected prompt: {user[:120]}...")


@pytest.fixture()
def scripted_gateway() -> LlmGateway:
    return LlmGateway(ScriptedBackend(scripted_response), max_concurrency=2)


@dataclass
class ReplayEnv:
    """Paths for a fully recorded, offline-replayable pipeline run."""

    workspace: Path
    config: RunConfig
    transcript: Path
    annotations: Path
    claim_ids: list[str]


def synth_annotations(claim_ids: list[str], viewpoint_ids: list[int]):
    """Deterministic three-annotator labels per pair, with the first pair
    forced into the removable {T, F, F} pattern."""
    from claimlens.model import AnnotationRecord

    records = []
    for claim_id in claim_ids:
        for vid in viewpoint_ids:
            seed = hashlib.sha256(f"{claim_id}:{vid}".encode()).digest()
            labels = [seed[i] % 2 == 0 for i in range(3)]
            if sum(labels) == 1:
                labels = [True, True, False]  # keep the removed set to exactly one pair
            if claim_id == claim_ids[0] and vid == viewpoint_ids[0]:
                labels = [True, False, False]
            for annotator, label in zip(("ann1", "ann2", "ann3"), labels):
                records.append(
                    AnnotationRecord(
                        claim_id=claim_id,
                        viewpoint_id=vid,
                        annotator_id=annotator,
                        label=label,
                    )
                )
    return records


@pytest.fixture(scope="session")
def replay_env(tmp_path_factory) -> ReplayEnv:
    """Record one scripted pipeline run, then hand back everything needed to
    replay it offline: corpus, transcript, caches, overrides, annotations."""
    from claimlens import dataset as ds
    from claimlens.extraction import extract_corpus
    from claimlens.model import load_corpus

    workspace = tmp_path_factory.mktemp("replay-env")
    corpus_dir = workspace / "corpus"
    corpus_dir.mkdir()
    save_corpus(make_articles(), corpus_dir / "corpus.jsonl")

    cache_dir = workspace / "profiles" / "cache"
    cache_dir.mkdir(parents=True)
    for fixture_file in WIKIDATA_FIXTURES.glob("Q*.json"):
        shutil.copy(fixture_file, cache_dir / fixture_file.name)
    overrides = workspace / "profiles" / "overrides.tsv"
    overrides.write_text(
        "Keir Starmer\tQ16515053\nTom Hunt\tQ98907507\nYvette Cooper\tQ242234\n",
        encoding="utf-8",
    )

    config = RunConfig(
        workspace=workspace,
        topic="immigration",
        topic_keywords=("immigration", "immigrants", "migration"),
        llm=LlmConfig(extraction_model="stub-extractor", viewpoint_model="stub-viewpoints"),
        models=(ModelSpec(key="stub", base_model_id="stub-classifier"),),
        positions_top_k=3,
        seed=13,
    )

    transcript = workspace / "transcripts" / "session.jsonl"
    recording_gateway = LlmGateway(
        ScriptedBackend(scripted_response), max_concurrency=1, record_path=transcript
    )

    loaded = load_corpus(corpus_dir / "corpus.jsonl")
    claims = extract_corpus(
        loaded,
        recording_gateway,
        config.llm.extraction_model,
        topic_keywords=config.topic_keywords,
    )
    claim_ids = [c.claim_id for c in claims]

    annotations = workspace / "annotations.csv"
    ds.save_annotations(synth_annotations(claim_ids, [1, 2, 3]), annotations)

    _record_pipeline(config, recording_gateway, annotations, workspace / "record-pass")

    return ReplayEnv(
        workspace=workspace,
        config=config,
        transcript=transcript,
        annotations=annotations,
        claim_ids=claim_ids,
    )


def _record_pipeline(config: RunConfig, gateway: LlmGateway, annotations: Path, out_dir: Path):
    """One recorded pass over the post-extraction stages (same call shapes
    as pipeline.run_replay_pipeline) so every digest lands in the
    transcript."""
    from claimlens import dataset as ds
    from claimlens.classify import RunCell, run_suite
    from claimlens.extraction import extract_corpus
    from claimlens.model import (
        ContextConfig,
        LearningMode,
        Split,
        corpus_index,
        load_corpus,
    )
    from claimlens.viewpoints import (
        consolidate_viewpoints,
        export_for_review,
        import_reviewed,
        partition_utterances,
        propose_all,
    )
    from claimlens.wikidata import OverrideMap, ProfileFetcher, render_description

    out_dir.mkdir(parents=True, exist_ok=True)
    loaded = load_corpus(config.corpus_path())
    claims = extract_corpus(
        loaded, gateway, config.llm.extraction_model, topic_keywords=config.topic_keywords
    )
    batches = partition_utterances([c.utterance for c in claims], config.viewpoint_batch_budget)
    candidates = propose_all(
        batches,
        config.topic,
        gateway,
        config.llm.viewpoint_model,
        temperature=config.llm.temperature_viewpoints,
        max_output_tokens=config.llm.max_output_tokens,
    )
    machine_set = consolidate_viewpoints(
        candidates,
        config.topic,
        gateway,
        config.llm.viewpoint_model,
        max_output_tokens=config.llm.max_output_tokens,
    )
    review_path = out_dir / "review.txt"
    export_for_review(machine_set, review_path)
    reviewed = import_reviewed(review_path, machine_set)

    overrides = OverrideMap(config.overrides_path())
    fetcher = ProfileFetcher(config.wikidata_cache_dir(), client=None)
    descriptions = {}
    for name in sorted({c.actor_name for c in claims}):
        qid = overrides.get(name)
        if qid:
            descriptions[name] = render_description(
                fetcher.fetch_profile(qid), positions_top_k=config.positions_top_k
            )
    records = ds.load_annotations(annotations)
    instances, _ = ds.build_benchmark(
        claims,
        reviewed,
        records,
        corpus_index(loaded),
        actor_descriptions=descriptions,
        ratios=config.ratios,
        seed=config.seed,
    )
    cell = RunCell(config.models[0], ContextConfig.TEXT_AND_KG, LearningMode.ZERO_SHOT)
    test_instances = [i for i in instances if i.split is Split.TEST]
    run_suite(test_instances, [cell], gateway, out_dir / "runs")
