"""Canonical domain types plus file-backed load/save.

Every pipeline stage exchanges the types defined here. All types are
immutable after construction (frozen dataclasses); rebuild with
`dataclasses.replace` instead of mutating. Collections persist as JSON-lines
with a fixed key order so that save(load(f)) is byte-identical for canonical
files. Booleans are literal true/false in JSON and 1/0 in CSV.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from datetime import date, datetime
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from .errors import (
    DanglingArticleRef,
    DuplicateId,
    FormatError,
    MissingField,
)
from .textutil import stable_hash

_DATE_FORMATS = ("%Y-%m-%d", "%d/%m/%Y", "%Y/%m/%d", "%d %B %Y", "%B %d, %Y")


def normalize_date(value: str) -> str:
    """Normalize assorted corpus date strings to ISO-8601 (YYYY-MM-DD)."""
    text = value.strip()
    if not text:
        raise ValueError("empty date")
    try:
        return datetime.fromisoformat(text.replace("Z", "+00:00")).date().isoformat()
    except ValueError:
        pass
    try:
        return date.fromisoformat(text).isoformat()
    except ValueError:
        pass
    for fmt in _DATE_FORMATS:
        try:
            return datetime.strptime(text, fmt).date().isoformat()
        except ValueError:
            continue
    raise ValueError(f"unparseable date: {value!r}")


class ContextConfig(str, Enum):
    TEXT = "text"
    KG = "kg"
    TEXT_AND_KG = "text+kg"


class LearningMode(str, Enum):
    ZERO_SHOT = "zero-shot"
    FINE_TUNED = "fine-tuned"


class Provenance(str, Enum):
    MACHINE_CANDIDATE = "machine-candidate"
    HUMAN_REVIEWED = "human-reviewed"


class Split(str, Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


class AveragingMode(str, Enum):
    POSITIVE_CLASS = "positive-class"
    MACRO_TWO_CLASS = "macro-two-class"


class AgreementPhase(str, Enum):
    PRE_FILTER = "pre-filter"
    POST_FILTER = "post-filter"


# --------------------------------------------------------------------------
# domain types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NewsArticle:
    article_id: str
    url: str
    title: str
    body: str
    source: str
    published_date: str  # ISO-8601
    topics: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "article_id": self.article_id,
            "url": self.url,
            "title": self.title,
            "body": self.body,
            "source": self.source,
            "published_date": self.published_date,
            "topics": list(self.topics),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "NewsArticle":
        return cls(
            article_id=d["article_id"],
            url=d.get("url", ""),
            title=d.get("title", ""),
            body=d["body"],
            source=d.get("source", ""),
            published_date=normalize_date(d["published_date"]),
            topics=tuple(d.get("topics", [])),
        )


def claim_id_for(utterance: str, actor_name: str, article_id: str) -> str:
    """Content-derived claim id: re-running extraction is idempotent."""
    return stable_hash(utterance, actor_name, article_id)


@dataclass(frozen=True)
class Claim:
    claim_id: str
    utterance: str
    actor_name: str
    article_id: str
    source: str
    date: str
    topic: str
    # populated by span location; None until located, None for paraphrases
    verbatim_span: bool | None = None
    span: tuple[int, int] | None = None

    @classmethod
    def build(cls, utterance: str, actor_name: str, article: NewsArticle,
              topic: str | None = None) -> "Claim":
        """Construct a claim inheriting source/date/topic from its article."""
        return cls(
            claim_id=claim_id_for(utterance, actor_name, article.article_id),
            utterance=utterance,
            actor_name=actor_name,
            article_id=article.article_id,
            source=article.source,
            date=article.published_date,
            topic=topic if topic is not None else (article.topics[0] if article.topics else ""),
        )

    def to_json_dict(self) -> dict:
        return {
            "claim_id": self.claim_id,
            "utterance": self.utterance,
            "actor_name": self.actor_name,
            "article_id": self.article_id,
            "source": self.source,
            "date": self.date,
            "topic": self.topic,
            "verbatim_span": self.verbatim_span,
            "span": list(self.span) if self.span is not None else None,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Claim":
        span = d.get("span")
        return cls(
            claim_id=d["claim_id"],
            utterance=d["utterance"],
            actor_name=d["actor_name"],
            article_id=d["article_id"],
            source=d.get("source", ""),
            date=d.get("date", ""),
            topic=d.get("topic", ""),
            verbatim_span=d.get("verbatim_span"),
            span=(span[0], span[1]) if span else None,
        )


@dataclass(frozen=True)
class ActorProfile:
    qid: str
    name: str
    description: str = ""
    gender: str | None = None
    occupations: tuple[str, ...] = ()
    positions_held: tuple[str, ...] = ()
    parties: tuple[str, ...] = ()
    # attribute display name -> values, for configured properties beyond the
    # core set (e.g. "religious or philosophical view", "political ideology")
    extra_attributes: tuple[tuple[str, tuple[str, ...]], ...] = ()
    retrieved_at: str = ""

    def extras(self) -> dict[str, tuple[str, ...]]:
        return dict(self.extra_attributes)

    def to_json_dict(self) -> dict:
        return {
            "qid": self.qid,
            "name": self.name,
            "description": self.description,
            "gender": self.gender,
            "occupations": list(self.occupations),
            "positions_held": list(self.positions_held),
            "parties": list(self.parties),
            "extra_attributes": {k: list(v) for k, v in self.extra_attributes},
            "retrieved_at": self.retrieved_at,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ActorProfile":
        return cls(
            qid=d["qid"],
            name=d["name"],
            description=d.get("description", ""),
            gender=d.get("gender"),
            occupations=tuple(d.get("occupations", [])),
            positions_held=tuple(d.get("positions_held", [])),
            parties=tuple(d.get("parties", [])),
            extra_attributes=tuple(
                (k, tuple(v)) for k, v in d.get("extra_attributes", {}).items()
            ),
            retrieved_at=d.get("retrieved_at", ""),
        )


@dataclass(frozen=True)
class Viewpoint:
    viewpoint_id: int
    title: str
    description: str
    topic: str

    def to_json_dict(self) -> dict:
        return {
            "viewpoint_id": self.viewpoint_id,
            "title": self.title,
            "description": self.description,
            "topic": self.topic,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Viewpoint":
        return cls(
            viewpoint_id=int(d["viewpoint_id"]),
            title=d["title"],
            description=d["description"],
            topic=d.get("topic", ""),
        )


@dataclass(frozen=True)
class ReviewEntry:
    action: str  # added | edited | removed | kept
    viewpoint_id: int
    note: str = ""

    def to_json_dict(self) -> dict:
        return {"action": self.action, "viewpoint_id": self.viewpoint_id, "note": self.note}

    @classmethod
    def from_json_dict(cls, d: dict) -> "ReviewEntry":
        return cls(action=d["action"], viewpoint_id=int(d["viewpoint_id"]), note=d.get("note", ""))


@dataclass(frozen=True)
class ViewpointSet:
    topic: str
    viewpoints: tuple[Viewpoint, ...]
    provenance: Provenance = Provenance.MACHINE_CANDIDATE
    review_log: tuple[ReviewEntry, ...] = ()

    def by_id(self) -> dict[int, Viewpoint]:
        return {v.viewpoint_id: v for v in self.viewpoints}

    def to_json_dict(self) -> dict:
        return {
            "topic": self.topic,
            "provenance": self.provenance.value,
            "viewpoints": [v.to_json_dict() for v in self.viewpoints],
            "review_log": [e.to_json_dict() for e in self.review_log],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ViewpointSet":
        return cls(
            topic=d["topic"],
            viewpoints=tuple(Viewpoint.from_json_dict(v) for v in d["viewpoints"]),
            provenance=Provenance(d.get("provenance", "machine-candidate")),
            review_log=tuple(ReviewEntry.from_json_dict(e) for e in d.get("review_log", [])),
        )


@dataclass(frozen=True)
class AnnotationRecord:
    claim_id: str
    viewpoint_id: int
    annotator_id: str
    label: bool


@dataclass(frozen=True)
class DatasetInstance:
    instance_id: str
    claim_id: str
    utterance: str
    article_url: str
    article_body: str
    actor_name: str
    actor_description: str
    viewpoint_id: int
    viewpoint_description: str
    label: bool
    split: Split

    def to_json_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "claim_id": self.claim_id,
            "utterance": self.utterance,
            "article_url": self.article_url,
            "article_body": self.article_body,
            "actor_name": self.actor_name,
            "actor_description": self.actor_description,
            "viewpoint_id": self.viewpoint_id,
            "viewpoint_description": self.viewpoint_description,
            "label": self.label,
            "split": self.split.value,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "DatasetInstance":
        return cls(
            instance_id=d["instance_id"],
            claim_id=d["claim_id"],
            utterance=d["utterance"],
            article_url=d.get("article_url", ""),
            article_body=d.get("article_body", ""),
            actor_name=d["actor_name"],
            actor_description=d.get("actor_description", ""),
            viewpoint_id=int(d["viewpoint_id"]),
            viewpoint_description=d.get("viewpoint_description", ""),
            label=bool(d["label"]),
            split=Split(d["split"]),
        )


def instance_id_for(claim_id: str, viewpoint_id: int) -> str:
    return stable_hash(claim_id, str(viewpoint_id))


@dataclass(frozen=True)
class Prediction:
    instance_id: str
    predicted_label: bool
    model_id: str
    context_config: ContextConfig
    learning_mode: LearningMode
    raw_response: str = ""
    attempts: int = 1
    defaulted: bool = False  # true when persistent parse failure forced label 0

    def to_json_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "predicted_label": self.predicted_label,
            "model_id": self.model_id,
            "context_config": self.context_config.value,
            "learning_mode": self.learning_mode.value,
            "raw_response": self.raw_response,
            "attempts": self.attempts,
            "defaulted": self.defaulted,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Prediction":
        return cls(
            instance_id=d["instance_id"],
            predicted_label=bool(d["predicted_label"]),
            model_id=d["model_id"],
            context_config=ContextConfig(d["context_config"]),
            learning_mode=LearningMode(d["learning_mode"]),
            raw_response=d.get("raw_response", ""),
            attempts=int(d.get("attempts", 1)),
            defaulted=bool(d.get("defaulted", False)),
        )


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    zero_division: bool = False

    def to_json_dict(self) -> dict:
        d = {"precision": self.precision, "recall": self.recall, "f1": self.f1}
        if self.zero_division:
            d["zero_division"] = True
        return d


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_json_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


@dataclass(frozen=True)
class MetricsReport:
    model_id: str
    context_config: ContextConfig
    learning_mode: LearningMode
    averaging_mode: AveragingMode
    overall: ClassScores
    per_viewpoint: tuple[tuple[int, ClassScores], ...]
    confusion: Confusion
    per_viewpoint_confusion: tuple[tuple[int, Confusion], ...]

    def to_json_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "context_config": self.context_config.value,
            "learning_mode": self.learning_mode.value,
            "averaging_mode": self.averaging_mode.value,
            "overall": self.overall.to_json_dict(),
            "per_viewpoint": {str(k): v.to_json_dict() for k, v in self.per_viewpoint},
            "confusion": self.confusion.to_json_dict(),
            "per_viewpoint_confusion": {
                str(k): v.to_json_dict() for k, v in self.per_viewpoint_confusion
            },
        }


@dataclass(frozen=True)
class AgreementReport:
    phase: AgreementPhase
    per_viewpoint_kappa: tuple[tuple[int, float], ...]
    mean_kappa: float

    def to_json_dict(self) -> dict:
        return {
            "phase": self.phase.value,
            "per_viewpoint_kappa": {str(k): v for k, v in self.per_viewpoint_kappa},
            "mean_kappa": self.mean_kappa,
        }


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------


def validate_article(article: NewsArticle) -> NewsArticle:
    if not article.article_id:
        raise MissingField("article_id")
    if not article.body.strip():
        raise MissingField("body", f"article {article.article_id}")
    try:
        normalize_date(article.published_date)
    except ValueError as exc:
        raise MissingField("published_date", str(exc)) from None
    return article


def validate_claim(claim: Claim, corpus: dict[str, NewsArticle]) -> Claim:
    """Check claim invariants against a loaded article index.

    Returns the claim unchanged when every invariant holds.
    """
    if not claim.utterance.strip():
        raise MissingField("utterance", f"claim {claim.claim_id}")
    if not claim.actor_name.strip():
        raise MissingField("actor_name", f"claim {claim.claim_id}")
    if claim.article_id not in corpus:
        raise DanglingArticleRef(claim.claim_id, claim.article_id)
    return claim


def validate_viewpoint_set(vset: ViewpointSet) -> ViewpointSet:
    from .errors import DuplicateTitles, FormatError as _FormatError

    if not vset.viewpoints:
        raise _FormatError("viewpoint set is empty")
    ids = [v.viewpoint_id for v in vset.viewpoints]
    if len(set(ids)) != len(ids):
        raise DuplicateId("viewpoint_id", str(sorted(ids)))
    titles = [v.title.strip().lower() for v in vset.viewpoints]
    dupes = sorted({t for t in titles if titles.count(t) > 1})
    if dupes:
        raise DuplicateTitles(dupes)
    for v in vset.viewpoints:
        if not v.title.strip():
            raise MissingField("title", f"viewpoint {v.viewpoint_id}")
        if not v.description.strip():
            raise MissingField("description", f"viewpoint {v.viewpoint_id}")
    return vset


# --------------------------------------------------------------------------
# JSON-lines persistence
# --------------------------------------------------------------------------


def dump_json_line(d: dict) -> str:
    return json.dumps(d, ensure_ascii=False, separators=(",", ":")) + "\n"


def read_json_lines(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", line=lineno) from None


def _write_lines(path: Path, dicts: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for d in dicts:
            fh.write(dump_json_line(d))


def load_corpus(path: Path) -> list[NewsArticle]:
    """Load a JSON-lines corpus, validating ids, bodies, and dates."""
    articles: list[NewsArticle] = []
    seen: set[str] = set()
    for lineno, record in read_json_lines(Path(path)):
        try:
            article = NewsArticle.from_json_dict(record)
        except (KeyError, ValueError, TypeError) as exc:
            raise FormatError(f"bad article record: {exc}", line=lineno) from None
        if article.article_id in seen:
            raise DuplicateId("article_id", article.article_id, line=lineno)
        seen.add(article.article_id)
        validate_article(article)
        articles.append(article)
    return articles


def save_corpus(articles: Iterable[NewsArticle], path: Path) -> None:
    _write_lines(Path(path), (a.to_json_dict() for a in articles))


def corpus_index(articles: Iterable[NewsArticle]) -> dict[str, NewsArticle]:
    return {a.article_id: a for a in articles}


def load_claims(path: Path) -> list[Claim]:
    claims: list[Claim] = []
    seen: set[str] = set()
    for lineno, record in read_json_lines(Path(path)):
        try:
            claim = Claim.from_json_dict(record)
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad claim record: {exc}", line=lineno) from None
        if claim.claim_id in seen:
            raise DuplicateId("claim_id", claim.claim_id, line=lineno)
        seen.add(claim.claim_id)
        claims.append(claim)
    return claims


def save_claims(claims: Iterable[Claim], path: Path) -> None:
    _write_lines(Path(path), (c.to_json_dict() for c in claims))


def load_instances(path: Path) -> list[DatasetInstance]:
    instances: list[DatasetInstance] = []
    seen: set[str] = set()
    for lineno, record in read_json_lines(Path(path)):
        try:
            inst = DatasetInstance.from_json_dict(record)
        except (KeyError, ValueError, TypeError) as exc:
            raise FormatError(f"bad instance record: {exc}", line=lineno) from None
        if inst.instance_id in seen:
            raise DuplicateId("instance_id", inst.instance_id, line=lineno)
        seen.add(inst.instance_id)
        instances.append(inst)
    return instances


def save_instances(instances: Iterable[DatasetInstance], path: Path) -> None:
    _write_lines(Path(path), (i.to_json_dict() for i in instances))


def load_predictions(path: Path) -> list[Prediction]:
    preds: list[Prediction] = []
    for lineno, record in read_json_lines(Path(path)):
        try:
            preds.append(Prediction.from_json_dict(record))
        except (KeyError, ValueError, TypeError) as exc:
            raise FormatError(f"bad prediction record: {exc}", line=lineno) from None
    return preds


def save_predictions(predictions: Iterable[Prediction], path: Path) -> None:
    _write_lines(Path(path), (p.to_json_dict() for p in predictions))


def load_viewpoint_set(path: Path) -> ViewpointSet:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid viewpoint set JSON: {exc.msg}") from None
    return validate_viewpoint_set(ViewpointSet.from_json_dict(data))


def save_viewpoint_set(vset: ViewpointSet, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(vset.to_json_dict(), fh, ensure_ascii=False, indent=2)
        fh.write("\n")


# --------------------------------------------------------------------------
# CSV benchmark export
# --------------------------------------------------------------------------

CSV_COLUMNS = [
    "id",
    "utterance",
    "url",
    "article_body",
    "actor_name",
    "actor_description",
    "viewpoint_description",
    "label",
    "split",
]


def instances_to_csv(instances: Iterable[DatasetInstance], path: Path) -> None:
    """Benchmark CSV export; booleans serialize as 1/0."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for inst in instances:
            writer.writerow(
                [
                    inst.instance_id,
                    inst.utterance,
                    inst.article_url,
                    inst.article_body,
                    inst.actor_name,
                    inst.actor_description,
                    inst.viewpoint_description,
                    "1" if inst.label else "0",
                    inst.split.value,
                ]
            )


def read_benchmark_csv(path: Path) -> list[dict]:
    """Read a benchmark-style CSV into dict rows (released files may carry
    extra columns; they are passed through untouched)."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise FormatError("empty CSV file")
        return list(reader)
