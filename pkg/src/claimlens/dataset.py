"""Benchmark construction from raw annotations.

Implements the disagreement filter (a claim-viewpoint pair is dropped iff
exactly one of its three annotators marked it aligned), pairwise Cohen's
kappa agreement reporting, majority voting, and the claim-grouped
train/validation/test split.
"""

from __future__ import annotations

import csv
import logging
import random
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (
    FormatError,
    NoOverlap,
    RatioError,
    WrongAnnotatorCount,
)
from .model import (
    AgreementPhase,
    AgreementReport,
    AnnotationRecord,
    Claim,
    DatasetInstance,
    NewsArticle,
    Split,
    ViewpointSet,
    instance_id_for,
)

log = logging.getLogger(__name__)

Pair = tuple[str, int]  # (claim_id, viewpoint_id)


def load_annotations(path: Path) -> list[AnnotationRecord]:
    """Read the raw annotation CSV (claim_id, viewpoint_id, annotator_id,
    label) with 1/0 or true/false labels."""
    records: list[AnnotationRecord] = []
    seen: set[tuple[str, int, str]] = set()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"claim_id", "viewpoint_id", "annotator_id", "label"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise FormatError(f"annotation CSV must have columns {sorted(required)}")
        for lineno, row in enumerate(reader, start=2):
            raw_label = row["label"].strip().lower()
            if raw_label in ("1", "true"):
                label = True
            elif raw_label in ("0", "false"):
                label = False
            else:
                raise FormatError(f"bad label {row['label']!r}", line=lineno)
            try:
                record = AnnotationRecord(
                    claim_id=row["claim_id"].strip(),
                    viewpoint_id=int(row["viewpoint_id"]),
                    annotator_id=row["annotator_id"].strip(),
                    label=label,
                )
            except ValueError:
                raise FormatError(f"bad viewpoint_id {row['viewpoint_id']!r}", line=lineno) from None
            key = (record.claim_id, record.viewpoint_id, record.annotator_id)
            if key in seen:
                raise FormatError(f"duplicate annotation {key}", line=lineno)
            seen.add(key)
            records.append(record)
    return records


def save_annotations(records: Iterable[AnnotationRecord], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["claim_id", "viewpoint_id", "annotator_id", "label"])
        for r in records:
            writer.writerow([r.claim_id, r.viewpoint_id, r.annotator_id, "1" if r.label else "0"])


def group_pairs(annotations: Iterable[AnnotationRecord]) -> dict[Pair, list[AnnotationRecord]]:
    grouped: dict[Pair, list[AnnotationRecord]] = {}
    for record in annotations:
        grouped.setdefault((record.claim_id, record.viewpoint_id), []).append(record)
    return grouped


def filter_disagreements(
    annotations: Sequence[AnnotationRecord],
) -> tuple[dict[Pair, list[AnnotationRecord]], dict[Pair, list[AnnotationRecord]]]:
    """Split pairs into (kept, removed).

    A pair is removed iff its three labels form the {true, false, false}
    pattern; every other pattern (3T, 2T1F, 3F) is kept. Requires exactly
    three annotations per pair.
    """
    grouped = group_pairs(annotations)
    kept: dict[Pair, list[AnnotationRecord]] = {}
    removed: dict[Pair, list[AnnotationRecord]] = {}
    for pair in sorted(grouped):
        records = grouped[pair]
        if len(records) != 3:
            raise WrongAnnotatorCount(pair[0], pair[1], len(records))
        positives = sum(1 for r in records if r.label)
        if positives == 1:
            removed[pair] = records
        else:
            kept[pair] = records
    return kept, removed


def majority_vote(records: Sequence[AnnotationRecord]) -> bool:
    """Strict majority of the three annotations; guaranteed decisive for
    pairs that survived filtering."""
    return sum(1 for r in records if r.label) >= 2


# --------------------------------------------------------------------------
# agreement statistics
# --------------------------------------------------------------------------


def cohen_kappa(labels_a: Sequence[bool], labels_b: Sequence[bool]) -> float:
    """Cohen's kappa for two parallel binary label vectors.

    Computed in exact rational arithmetic and converted to float at the
    end. Degenerate marginals (p_e = 1) resolve to 1.0 under perfect
    observed agreement and 0.0 otherwise, with a log note.
    """
    if len(labels_a) != len(labels_b):
        raise ValueError("label vectors must be the same length")
    n = len(labels_a)
    if n == 0:
        raise ValueError("label vectors are empty")
    agree = sum(1 for x, y in zip(labels_a, labels_b) if x == y)
    a_pos = sum(1 for x in labels_a if x)
    b_pos = sum(1 for x in labels_b if x)
    p_o = Fraction(agree, n)
    p_e = Fraction(a_pos * b_pos + (n - a_pos) * (n - b_pos), n * n)
    if p_e == 1:
        log.info("degenerate kappa marginals (p_e=1): returning %s", 1.0 if p_o == 1 else 0.0)
        return 1.0 if p_o == 1 else 0.0
    return float((p_o - p_e) / (1 - p_e))


def kappa_between(
    annotations: Iterable[AnnotationRecord],
    annotator_a: str,
    annotator_b: str,
    viewpoint_id: int | None = None,
) -> float:
    """Pairwise kappa over the items both annotators labeled (optionally
    within one viewpoint)."""
    a_map: dict[Pair, bool] = {}
    b_map: dict[Pair, bool] = {}
    for r in annotations:
        if viewpoint_id is not None and r.viewpoint_id != viewpoint_id:
            continue
        if r.annotator_id == annotator_a:
            a_map[(r.claim_id, r.viewpoint_id)] = r.label
        elif r.annotator_id == annotator_b:
            b_map[(r.claim_id, r.viewpoint_id)] = r.label
    shared = sorted(set(a_map) & set(b_map))
    if not shared:
        raise NoOverlap(annotator_a, annotator_b)
    return cohen_kappa([a_map[k] for k in shared], [b_map[k] for k in shared])


def agreement_report(
    annotations: Sequence[AnnotationRecord], phase: AgreementPhase
) -> AgreementReport:
    """Per-viewpoint mean of pairwise kappas (all annotator pairs that
    co-annotated items for that viewpoint), plus their unweighted mean."""
    by_viewpoint: dict[int, list[AnnotationRecord]] = {}
    for r in annotations:
        by_viewpoint.setdefault(r.viewpoint_id, []).append(r)
    per_viewpoint: list[tuple[int, float]] = []
    for vid in sorted(by_viewpoint):
        records = by_viewpoint[vid]
        annotators = sorted({r.annotator_id for r in records})
        kappas: list[float] = []
        for a, b in combinations(annotators, 2):
            try:
                kappas.append(kappa_between(records, a, b))
            except NoOverlap:
                continue
        if kappas:
            per_viewpoint.append((vid, sum(kappas) / len(kappas)))
    if not per_viewpoint:
        raise ValueError("no co-annotated items in any viewpoint")
    mean = sum(k for _, k in per_viewpoint) / len(per_viewpoint)
    return AgreementReport(
        phase=phase, per_viewpoint_kappa=tuple(per_viewpoint), mean_kappa=mean
    )


def fleiss_kappa(annotations: Sequence[AnnotationRecord]) -> float:
    """Multi-rater Fleiss' kappa over (claim, viewpoint) subjects with three
    ratings each. Secondary statistic only; the headline agreement numbers
    are pairwise Cohen's kappas."""
    grouped = group_pairs(annotations)
    subjects = [records for records in grouped.values() if len(records) == 3]
    if not subjects:
        raise ValueError("no subjects with three ratings")
    n_raters = 3
    total_pos = 0
    p_i_sum = Fraction(0)
    for records in subjects:
        pos = sum(1 for r in records if r.label)
        total_pos += pos
        neg = n_raters - pos
        p_i_sum += Fraction(pos * (pos - 1) + neg * (neg - 1), n_raters * (n_raters - 1))
    n_subjects = len(subjects)
    p_bar = p_i_sum / n_subjects
    p_pos = Fraction(total_pos, n_subjects * n_raters)
    p_e = p_pos * p_pos + (1 - p_pos) * (1 - p_pos)
    if p_e == 1:
        return 1.0 if p_bar == 1 else 0.0
    return float((p_bar - p_e) / (1 - p_e))


# --------------------------------------------------------------------------
# splitting
# --------------------------------------------------------------------------


def split_claims(
    instance_counts: Mapping[str, int],
    ratios: Sequence[int] = (70, 10, 20),
    seed: int = 13,
) -> dict[str, Split]:
    """Assign whole claims to splits so instance counts track the ratios.

    Claims are shuffled by a seeded PRNG from a canonical (sorted) order and
    packed greedily: a claim joins the current split while that keeps the
    running count at least as close to the split's target. All instances of
    a claim land in one split, preventing utterance leakage.
    """
    if len(ratios) != 3 or sum(ratios) != 100 or any(r < 0 for r in ratios):
        raise RatioError(f"ratios must be three non-negative integers summing to 100, got {ratios}")
    claim_ids = sorted(instance_counts)
    rng = random.Random(seed)
    rng.shuffle(claim_ids)
    total = sum(instance_counts.values())
    assignment: dict[str, Split] = {}
    idx = 0
    for split, ratio in ((Split.TRAIN, ratios[0]), (Split.VALIDATION, ratios[1])):
        target = total * ratio / 100
        cum = 0
        while idx < len(claim_ids):
            size = instance_counts[claim_ids[idx]]
            if abs(cum + size - target) <= abs(cum - target):
                assignment[claim_ids[idx]] = split
                cum += size
                idx += 1
            else:
                break
    for cid in claim_ids[idx:]:
        assignment[cid] = Split.TEST
    return assignment


def split_dataset(
    instances: Sequence[DatasetInstance],
    ratios: Sequence[int] = (70, 10, 20),
    seed: int = 13,
) -> list[DatasetInstance]:
    """Re-split existing instances by claim grouping (deterministic for a
    fixed seed)."""
    from dataclasses import replace

    counts: dict[str, int] = {}
    for inst in instances:
        counts[inst.claim_id] = counts.get(inst.claim_id, 0) + 1
    assignment = split_claims(counts, ratios=ratios, seed=seed)
    return [replace(inst, split=assignment[inst.claim_id]) for inst in instances]


# --------------------------------------------------------------------------
# full build
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BuildReport:
    input_annotations: int
    input_pairs: int
    removed_pairs: int
    kept_pairs: int
    instances: int
    split_sizes: tuple[tuple[str, int], ...]
    pre_filter: AgreementReport | None
    post_filter: AgreementReport | None
    fleiss_pre: float | None
    fleiss_post: float | None

    def to_json_dict(self) -> dict:
        return {
            "input_annotations": self.input_annotations,
            "input_pairs": self.input_pairs,
            "removed_pairs": self.removed_pairs,
            "kept_pairs": self.kept_pairs,
            "instances": self.instances,
            "split_sizes": dict(self.split_sizes),
            "agreement": {
                "pairwise_cohen": {
                    "pre_filter": self.pre_filter.to_json_dict() if self.pre_filter else None,
                    "post_filter": self.post_filter.to_json_dict() if self.post_filter else None,
                },
                # multi-rater statistic offered alongside, clearly labeled
                "fleiss": {"pre_filter": self.fleiss_pre, "post_filter": self.fleiss_post},
            },
        }


def build_benchmark(
    claims: Sequence[Claim],
    viewpoint_set: ViewpointSet,
    annotations: Sequence[AnnotationRecord],
    articles: Mapping[str, NewsArticle],
    actor_descriptions: Mapping[str, str] | None = None,
    ratios: Sequence[int] = (70, 10, 20),
    seed: int = 13,
    published_split: Mapping[str, str] | None = None,
    require_reviewed: bool = True,
) -> tuple[list[DatasetInstance], BuildReport]:
    """Compose filter, majority vote, and split into the benchmark.

    When `published_split` (instance_id -> split name) is provided it is
    authoritative and the seeded splitter is bypassed.
    """
    from .model import Provenance

    if require_reviewed and viewpoint_set.provenance is not Provenance.HUMAN_REVIEWED:
        raise FormatError("viewpoint set must be human-reviewed before building the benchmark")
    claim_index = {c.claim_id: c for c in claims}
    viewpoint_index = viewpoint_set.by_id()
    for record in annotations:
        if record.claim_id not in claim_index:
            raise FormatError(f"annotation references unknown claim {record.claim_id!r}")
        if record.viewpoint_id not in viewpoint_index:
            raise FormatError(f"annotation references unknown viewpoint {record.viewpoint_id}")

    kept, removed = filter_disagreements(annotations)
    pre = agreement_report(annotations, AgreementPhase.PRE_FILTER)
    kept_records = [r for records in kept.values() for r in records]
    post = agreement_report(kept_records, AgreementPhase.POST_FILTER) if kept else None

    labels = {pair: majority_vote(records) for pair, records in kept.items()}
    counts: dict[str, int] = {}
    for claim_id, _ in labels:
        counts[claim_id] = counts.get(claim_id, 0) + 1

    descriptions = actor_descriptions or {}
    if published_split is None:
        assignment = split_claims(counts, ratios=ratios, seed=seed)
    else:
        assignment = None

    instances: list[DatasetInstance] = []
    for pair in sorted(labels):
        claim_id, viewpoint_id = pair
        claim = claim_index[claim_id]
        article = articles.get(claim.article_id)
        if article is None:
            raise FormatError(f"claim {claim_id} references unknown article {claim.article_id!r}")
        instance_id = instance_id_for(claim_id, viewpoint_id)
        if assignment is not None:
            split = assignment[claim_id]
        else:
            try:
                split = Split(published_split[instance_id])
            except KeyError:
                raise FormatError(
                    f"published split has no entry for instance {instance_id}"
                ) from None
        instances.append(
            DatasetInstance(
                instance_id=instance_id,
                claim_id=claim_id,
                utterance=claim.utterance,
                article_url=article.url,
                article_body=article.body,
                actor_name=claim.actor_name,
                actor_description=descriptions.get(claim.actor_name, ""),
                viewpoint_id=viewpoint_id,
                viewpoint_description=viewpoint_index[viewpoint_id].description,
                label=labels[pair],
                split=split,
            )
        )

    split_sizes = {s.value: 0 for s in Split}
    for inst in instances:
        split_sizes[inst.split.value] += 1
    report = BuildReport(
        input_annotations=len(annotations),
        input_pairs=len(kept) + len(removed),
        removed_pairs=len(removed),
        kept_pairs=len(kept),
        instances=len(instances),
        split_sizes=tuple(split_sizes.items()),
        pre_filter=pre,
        post_filter=post,
        fleiss_pre=fleiss_kappa(annotations) if annotations else None,
        fleiss_post=fleiss_kappa(kept_records) if kept_records else None,
    )
    return instances, report
