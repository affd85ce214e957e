"""Scoring of prediction files against gold labels, plus the media
analytics the pipeline exists to enable.

Both averaging modes are always emitted: positive-class P/R/F1 (scores for
the aligned class only) and macro-two-class (unweighted mean of the scores
computed separately for the aligned and non-aligned classes). The
macro-two-class figures are the headline numbers in rendered reports; the
positive-class figures sit alongside. Percentages render to two decimals.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .errors import DuplicatePrediction, FormatError, MissingPrediction
from .model import (
    ActorProfile,
    AveragingMode,
    Claim,
    ClassScores,
    Confusion,
    ContextConfig,
    DatasetInstance,
    LearningMode,
    MetricsReport,
    Prediction,
)


def confusion(
    predictions: Sequence[Prediction], gold: Sequence[DatasetInstance]
) -> tuple[Confusion, dict[int, Confusion]]:
    """Exact integer confusion counts, overall and per viewpoint.

    Requires exactly one prediction per gold instance.
    """
    by_id: dict[str, Prediction] = {}
    duplicates: set[str] = set()
    for p in predictions:
        if p.instance_id in by_id:
            duplicates.add(p.instance_id)
        by_id[p.instance_id] = p
    if duplicates:
        raise DuplicatePrediction(duplicates)
    gold_ids = {g.instance_id for g in gold}
    missing = gold_ids - set(by_id)
    if missing:
        raise MissingPrediction(missing)
    unknown = set(by_id) - gold_ids
    if unknown:
        raise FormatError(f"predictions for unknown instances: {sorted(unknown)}")

    overall = {"tp": 0, "fp": 0, "fn": 0, "tn": 0}
    per_vp: dict[int, dict[str, int]] = {}
    for inst in gold:
        predicted = by_id[inst.instance_id].predicted_label
        if predicted and inst.label:
            slot = "tp"
        elif predicted and not inst.label:
            slot = "fp"
        elif not predicted and inst.label:
            slot = "fn"
        else:
            slot = "tn"
        overall[slot] += 1
        per_vp.setdefault(inst.viewpoint_id, {"tp": 0, "fp": 0, "fn": 0, "tn": 0})[slot] += 1
    return (
        Confusion(**overall),
        {vid: Confusion(**counts) for vid, counts in sorted(per_vp.items())},
    )


def _positive_scores(tp: int, fp: int, fn: int) -> ClassScores:
    zero = False
    if tp + fp == 0:
        precision, zero = 0.0, True
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall, zero = 0.0, True
    else:
        recall = tp / (tp + fn)
    if precision + recall == 0:
        f1, zero = 0.0, True
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return ClassScores(precision=precision, recall=recall, f1=f1, zero_division=zero)


def scores(conf: Confusion, mode: AveragingMode) -> ClassScores:
    """P/R/F1 under one averaging mode.

    positive-class scores the aligned class only; macro-two-class averages
    the aligned-class scores with the non-aligned-class scores (computed on
    the label-inverted confusion matrix).
    """
    positive = _positive_scores(conf.tp, conf.fp, conf.fn)
    if mode is AveragingMode.POSITIVE_CLASS:
        return positive
    if mode is AveragingMode.MACRO_TWO_CLASS:
        negative = _positive_scores(conf.tn, conf.fn, conf.fp)
        return ClassScores(
            precision=(positive.precision + negative.precision) / 2,
            recall=(positive.recall + negative.recall) / 2,
            f1=(positive.f1 + negative.f1) / 2,
            zero_division=positive.zero_division or negative.zero_division,
        )
    raise ValueError(f"unhandled averaging mode: {mode}")


def metrics(
    overall_confusion: Confusion,
    per_viewpoint_confusion: Mapping[int, Confusion],
    averaging_mode: AveragingMode,
    model_id: str = "",
    context_config: ContextConfig = ContextConfig.TEXT,
    learning_mode: LearningMode = LearningMode.ZERO_SHOT,
) -> MetricsReport:
    return MetricsReport(
        model_id=model_id,
        context_config=context_config,
        learning_mode=learning_mode,
        averaging_mode=averaging_mode,
        overall=scores(overall_confusion, averaging_mode),
        per_viewpoint=tuple(
            (vid, scores(conf, averaging_mode))
            for vid, conf in sorted(per_viewpoint_confusion.items())
        ),
        confusion=overall_confusion,
        per_viewpoint_confusion=tuple(sorted(per_viewpoint_confusion.items())),
    )


def score_run(
    predictions: Sequence[Prediction],
    gold: Sequence[DatasetInstance],
    model_id: str = "",
    context_config: ContextConfig = ContextConfig.TEXT,
    learning_mode: LearningMode = LearningMode.ZERO_SHOT,
) -> dict[str, MetricsReport]:
    """Score one run under both averaging modes."""
    overall, per_vp = confusion(predictions, gold)
    return {
        mode.value: metrics(
            overall,
            per_vp,
            mode,
            model_id=model_id,
            context_config=context_config,
            learning_mode=learning_mode,
        )
        for mode in AveragingMode
    }


# --------------------------------------------------------------------------
# per-viewpoint reporting
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ViewpointRow:
    viewpoint_id: int
    support_positive: int
    support_negative: int
    positive_class: ClassScores
    macro_two_class: ClassScores

    def to_json_dict(self) -> dict:
        return {
            "viewpoint_id": self.viewpoint_id,
            "support_positive": self.support_positive,
            "support_negative": self.support_negative,
            "positive-class": self.positive_class.to_json_dict(),
            "macro-two-class": self.macro_two_class.to_json_dict(),
        }


def per_viewpoint_report(
    predictions: Sequence[Prediction], gold: Sequence[DatasetInstance]
) -> list[ViewpointRow]:
    """One row per viewpoint with both averaging modes and support counts
    exposing class imbalance."""
    _, per_vp = confusion(predictions, gold)
    rows = []
    for vid, conf in sorted(per_vp.items()):
        rows.append(
            ViewpointRow(
                viewpoint_id=vid,
                support_positive=conf.tp + conf.fn,
                support_negative=conf.fp + conf.tn,
                positive_class=scores(conf, AveragingMode.POSITIVE_CLASS),
                macro_two_class=scores(conf, AveragingMode.MACRO_TWO_CLASS),
            )
        )
    return rows


def compare_runs(
    rows_a: Sequence[ViewpointRow], rows_b: Sequence[ViewpointRow]
) -> list[dict]:
    """Per-viewpoint F1 deltas (run A minus run B), both modes."""
    b_by_id = {r.viewpoint_id: r for r in rows_b}
    deltas = []
    for row in rows_a:
        other = b_by_id.get(row.viewpoint_id)
        if other is None:
            continue
        deltas.append(
            {
                "viewpoint_id": row.viewpoint_id,
                "delta_f1_positive_class": row.positive_class.f1 - other.positive_class.f1,
                "delta_f1_macro_two_class": row.macro_two_class.f1 - other.macro_two_class.f1,
            }
        )
    return deltas


def percent(value: float) -> str:
    return f"{value * 100:.2f}"


def render_report_text(
    reports: Mapping[str, MetricsReport], rows: Sequence[ViewpointRow]
) -> str:
    """Human-readable aligned-text report (percentages, two decimals)."""
    macro = reports[AveragingMode.MACRO_TWO_CLASS.value]
    positive = reports[AveragingMode.POSITIVE_CLASS.value]
    lines = [
        f"model: {macro.model_id}  context: {macro.context_config.value}  "
        f"mode: {macro.learning_mode.value}",
        f"instances: {macro.confusion.total}  "
        f"(tp={macro.confusion.tp} fp={macro.confusion.fp} "
        f"fn={macro.confusion.fn} tn={macro.confusion.tn})",
        "",
        "            F1      Pre.    Rec.",
        f"macro-2c    {percent(macro.overall.f1):>6}  {percent(macro.overall.precision):>6}  "
        f"{percent(macro.overall.recall):>6}",
        f"positive    {percent(positive.overall.f1):>6}  {percent(positive.overall.precision):>6}  "
        f"{percent(positive.overall.recall):>6}",
        "",
        "viewpoint  F1(macro)  F1(pos)  support(+/-)",
    ]
    for row in rows:
        lines.append(
            f"{row.viewpoint_id:>9}  {percent(row.macro_two_class.f1):>9}  "
            f"{percent(row.positive_class.f1):>7}  "
            f"{row.support_positive}/{row.support_negative}"
        )
    return "\n".join(lines) + "\n"


def write_report_files(
    reports: Mapping[str, MetricsReport],
    rows: Sequence[ViewpointRow],
    out_dir: Path,
    stem: str,
) -> dict[str, Path]:
    """Write the machine JSON, aligned-text table, and CSV plot data."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{stem}.metrics.json"
    payload = {
        "averaging_note": (
            "macro-two-class is the headline mode; positive-class is "
            "reported alongside"
        ),
        "reports": {k: v.to_json_dict() for k, v in reports.items()},
        "per_viewpoint": [r.to_json_dict() for r in rows],
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")
    text_path = out_dir / f"{stem}.metrics.txt"
    text_path.write_text(render_report_text(reports, rows), encoding="utf-8")
    csv_path = out_dir / f"{stem}.per_viewpoint.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "viewpoint_id",
                "f1_macro_two_class",
                "f1_positive_class",
                "precision_macro_two_class",
                "recall_macro_two_class",
                "support_positive",
                "support_negative",
            ]
        )
        for row in rows:
            writer.writerow(
                [
                    row.viewpoint_id,
                    percent(row.macro_two_class.f1),
                    percent(row.positive_class.f1),
                    percent(row.macro_two_class.precision),
                    percent(row.macro_two_class.recall),
                    row.support_positive,
                    row.support_negative,
                ]
            )
    return {"json": json_path, "text": text_path, "csv": csv_path}


# --------------------------------------------------------------------------
# media analytics
# --------------------------------------------------------------------------

DIMENSIONS = ("party", "source", "month", "actor")

UNKNOWN = "unknown"


@dataclass(frozen=True)
class AnalyticsRow:
    dimension_value: str
    viewpoint_id: int
    count: int
    share: float


def _dimension_value(
    instance: DatasetInstance,
    dimension: str,
    claims: Mapping[str, Claim] | None,
    profiles: Mapping[str, ActorProfile] | None,
) -> str:
    if dimension == "actor":
        return instance.actor_name or UNKNOWN
    if dimension == "party":
        profile = (profiles or {}).get(instance.actor_name)
        if profile and profile.parties:
            return profile.parties[0]
        return UNKNOWN
    claim = (claims or {}).get(instance.claim_id)
    if dimension == "source":
        return (claim.source if claim else "") or UNKNOWN
    if dimension == "month":
        if claim and len(claim.date) >= 7:
            return claim.date[:7]
        return UNKNOWN
    raise ValueError(f"unknown dimension {dimension!r}; expected one of {DIMENSIONS}")


def analytics(
    positives: Sequence[DatasetInstance],
    dimension: str,
    claims: Mapping[str, Claim] | None = None,
    profiles: Mapping[str, ActorProfile] | None = None,
) -> list[AnalyticsRow]:
    """Viewpoint distribution across one dimension (party, source, month,
    or actor) over positively labeled or predicted instances.

    Instances whose dimension cannot be resolved land in the "unknown"
    bucket. Within each dimension value the shares sum to 1.
    """
    counts: dict[str, dict[int, int]] = {}
    for inst in positives:
        value = _dimension_value(inst, dimension, claims, profiles)
        counts.setdefault(value, {}).setdefault(inst.viewpoint_id, 0)
        counts[value][inst.viewpoint_id] += 1
    rows: list[AnalyticsRow] = []
    for value in sorted(counts):
        total = sum(counts[value].values())
        for vid in sorted(counts[value]):
            rows.append(
                AnalyticsRow(
                    dimension_value=value,
                    viewpoint_id=vid,
                    count=counts[value][vid],
                    share=counts[value][vid] / total,
                )
            )
    return rows


def write_analytics_csv(rows: Sequence[AnalyticsRow], dimension: str, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([dimension, "viewpoint_id", "count", "share"])
        for row in rows:
            writer.writerow(
                [row.dimension_value, row.viewpoint_id, row.count, f"{row.share:.6f}"]
            )
