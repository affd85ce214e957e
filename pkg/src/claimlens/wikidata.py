"""Actor enrichment from Wikidata.

Maps actor names to entities, pulls the configured property set, caches raw
responses on disk (one JSON file per Q-id), and renders the natural-language
actor description used as knowledge-graph context.

The cache file stores the raw entity payload (restricted to the configured
properties) together with the English labels of every referenced entity, so
profiles can be rebuilt with zero network I/O. Changing the property
configuration requires deleting affected cache files.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import requests

from .errors import Ambiguous, CacheError, EntityNotFound, RateLimited, TransportError
from .model import ActorProfile

log = logging.getLogger(__name__)

WIKIDATA_API = "https://www.wikidata.org/w/api.php"

HUMAN_QID = "Q5"
POLITICIAN_QID = "Q82955"
JOURNALIST_QID = "Q1930187"
PREFERRED_OCCUPATION_QIDS = frozenset({POLITICIAN_QID, JOURNALIST_QID})

QID_RE = re.compile(r"^Q[0-9]+$")


@dataclass(frozen=True)
class PropertyConfig:
    """Attribute set to pull from Wikidata; extras land in extra_attributes
    under their display name."""

    gender: str = "P21"
    occupations: str = "P106"
    positions_held: str = "P39"
    parties: str = "P102"
    # (property id, display name) pairs, rendering as "a {name} of {values}"
    extras: tuple[tuple[str, str], ...] = (
        ("P140", "religious or philosophical view"),
        ("P1142", "political ideology"),
    )

    def all_pids(self) -> list[str]:
        return [self.gender, self.occupations, self.positions_held, self.parties] + [
            pid for pid, _ in self.extras
        ]


@dataclass(frozen=True)
class EntityCandidate:
    qid: str
    label: str
    description: str = ""
    is_human: bool | None = None
    occupation_qids: tuple[str, ...] = ()


def qid_number(qid: str) -> int:
    return int(qid[1:])


# --------------------------------------------------------------------------
# API client
# --------------------------------------------------------------------------


class WikidataClient:
    """Thin wbsearchentities/wbgetentities client with retry and backoff."""

    def __init__(
        self,
        endpoint: str = WIKIDATA_API,
        max_attempts: int = 4,
        backoff_base_s: float = 0.5,
        timeout_s: float = 30.0,
        session: requests.Session | None = None,
        sleep=time.sleep,
    ):
        self.endpoint = endpoint
        self.max_attempts = max_attempts
        self.backoff_base_s = backoff_base_s
        self.timeout_s = timeout_s
        self.session = session or requests.Session()
        self._sleep = sleep

    def _get(self, params: dict) -> dict:
        params = {"format": "json", **params}
        last = "no attempt"
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = self.session.get(self.endpoint, params=params, timeout=self.timeout_s)
            except requests.RequestException as exc:
                last = f"transport failure: {exc}"
            else:
                if resp.status_code == 200:
                    return resp.json()
                last = f"HTTP {resp.status_code}"
                if resp.status_code == 429:
                    if attempt == self.max_attempts:
                        raise RateLimited(f"Wikidata rate limit after {attempt} attempts")
                elif resp.status_code < 500:
                    raise TransportError(f"Wikidata API error: {last}")
            if attempt < self.max_attempts:
                self._sleep(self.backoff_base_s * (2 ** (attempt - 1)))
        raise TransportError(f"Wikidata unreachable after {self.max_attempts} attempts: {last}")

    def search(self, name: str, limit: int = 10) -> list[dict]:
        data = self._get(
            {
                "action": "wbsearchentities",
                "search": name,
                "language": "en",
                "type": "item",
                "limit": limit,
            }
        )
        return data.get("search", [])

    def get_entities(self, qids: Sequence[str], props: str) -> dict[str, dict]:
        entities: dict[str, dict] = {}
        qids = list(qids)
        for start in range(0, len(qids), 50):  # API caps ids at 50 per call
            chunk = qids[start : start + 50]
            data = self._get(
                {
                    "action": "wbgetentities",
                    "ids": "|".join(chunk),
                    "props": props,
                    "languages": "en",
                }
            )
            entities.update(data.get("entities", {}))
        return entities


# --------------------------------------------------------------------------
# raw-entity helpers
# --------------------------------------------------------------------------


def _statement_item_ids(entity: dict, pid: str) -> list[str]:
    """Item ids referenced by `pid`, in statement order, deduplicated."""
    out: list[str] = []
    for statement in entity.get("claims", {}).get(pid, []):
        snak = statement.get("mainsnak", {})
        if snak.get("snaktype") != "value":
            continue
        value = snak.get("datavalue", {}).get("value")
        if isinstance(value, dict) and "id" in value:
            vid = value["id"]
            if vid not in out:
                out.append(vid)
    return out


def _entity_text(entity: dict, field: str) -> str:
    return entity.get(field, {}).get("en", {}).get("value", "")


# --------------------------------------------------------------------------
# entity search + disambiguation
# --------------------------------------------------------------------------


def search_entity(name: str, client: WikidataClient, limit: int = 10) -> list[EntityCandidate]:
    """Targeted name search returning candidates ordered by the
    disambiguation policy (exact label, human politician/journalist, lowest
    numeric Q-id)."""
    if not name.strip():
        raise ValueError("entity search needs a non-empty name")
    hits = client.search(name, limit=limit)
    if not hits:
        return []
    qids = [h["id"] for h in hits]
    entities = client.get_entities(qids, props="claims")
    candidates = []
    for hit in hits:
        entity = entities.get(hit["id"], {})
        instance_of = _statement_item_ids(entity, "P31")
        candidates.append(
            EntityCandidate(
                qid=hit["id"],
                label=hit.get("label", ""),
                description=hit.get("description", ""),
                is_human=HUMAN_QID in instance_of if instance_of else None,
                occupation_qids=tuple(_statement_item_ids(entity, "P106")),
            )
        )
    return sorted(candidates, key=lambda c: _policy_key(name, c))


def _policy_key(name: str, candidate: EntityCandidate) -> tuple:
    exact = candidate.label.strip().lower() == name.strip().lower()
    preferred = bool(candidate.is_human) and bool(
        PREFERRED_OCCUPATION_QIDS.intersection(candidate.occupation_qids)
    )
    return (not exact, not preferred, qid_number(candidate.qid))


class OverrideMap:
    """Editable two-column file (name<TAB>qid) pinning actor mappings.

    Selections made by ranking are persisted here so the operator can audit
    and correct them; entries in the file always win over ranking.
    """

    def __init__(self, path: Path):
        self.path = Path(path)
        self._map: dict[str, str] = {}
        self._lock = threading.Lock()
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        for lineno, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not QID_RE.match(parts[1].strip()):
                log.warning("override file %s line %d is malformed, skipping", self.path, lineno)
                continue
            self._map[parts[0].strip()] = parts[1].strip()

    def get(self, name: str) -> str | None:
        return self._map.get(name)

    def put(self, name: str, qid: str) -> None:
        with self._lock:
            if self._map.get(name) == qid:
                return
            self._map[name] = qid
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", encoding="utf-8") as fh:
                fh.write("# actor name -> Wikidata Q-id; edit to pin a mapping\n")
                for key in sorted(self._map):
                    fh.write(f"{key}\t{self._map[key]}\n")


def select_entity(
    name: str,
    candidates: Sequence[EntityCandidate],
    overrides: OverrideMap | None = None,
    strict: bool = False,
) -> str:
    """Deterministic disambiguation. An override-file entry wins outright;
    otherwise rank by the policy and persist the pick for operator review."""
    if overrides is not None:
        pinned = overrides.get(name)
        if pinned:
            return pinned
    if not candidates:
        raise ValueError(f"no candidates for {name!r}")
    ranked = sorted(candidates, key=lambda c: _policy_key(name, c))
    if strict and len(ranked) > 1:
        top = _policy_key(name, ranked[0])[:2]
        tied = [c for c in ranked if _policy_key(name, c)[:2] == top]
        if len(tied) > 1:
            raise Ambiguous(name, tied)
    chosen = ranked[0].qid
    if overrides is not None:
        overrides.put(name, chosen)
    return chosen


# --------------------------------------------------------------------------
# profile fetch + cache
# --------------------------------------------------------------------------


class ProfileFetcher:
    """Builds ActorProfiles from Wikidata with a per-qid disk cache.

    With a warm cache no client is required at all, which is how tests and
    replay runs operate.
    """

    def __init__(
        self,
        cache_dir: Path,
        client: WikidataClient | None = None,
        properties: PropertyConfig = PropertyConfig(),
    ):
        self.cache_dir = Path(cache_dir)
        self.client = client
        self.properties = properties
        self._lock = threading.Lock()

    def _cache_path(self, qid: str) -> Path:
        return self.cache_dir / f"{qid}.json"

    def fetch_profile(self, qid: str) -> ActorProfile:
        if not QID_RE.match(qid):
            raise ValueError(f"invalid Wikidata id: {qid!r}")
        cached = self._read_cache(qid)
        if cached is None:
            if self.client is None:
                raise EntityNotFound(f"{qid} not cached and no client configured")
            cached = self._fetch_live(qid)
        return self._profile_from_cache(qid, cached)

    def _read_cache(self, qid: str) -> dict | None:
        path = self._cache_path(qid)
        if not path.exists():
            return None
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
            data["entity"]  # minimum viable shape
            data["labels"]
            return data
        except (json.JSONDecodeError, KeyError, UnicodeDecodeError) as exc:
            raise CacheError(path, f"{type(exc).__name__}: {exc}") from None

    def _fetch_live(self, qid: str) -> dict:
        entities = self.client.get_entities([qid], props="labels|descriptions|claims")
        entity = entities.get(qid, {})
        if not entity or "missing" in entity:
            raise EntityNotFound(f"Wikidata has no entity {qid}")
        pids = self.properties.all_pids()
        trimmed = {
            "id": entity.get("id", qid),
            "labels": entity.get("labels", {}),
            "descriptions": entity.get("descriptions", {}),
            "claims": {pid: entity.get("claims", {}).get(pid, []) for pid in pids},
        }
        referenced: list[str] = []
        for pid in pids:
            for vid in _statement_item_ids(trimmed, pid):
                if vid not in referenced:
                    referenced.append(vid)
        labels: dict[str, str] = {}
        if referenced:
            label_entities = self.client.get_entities(referenced, props="labels")
            for vid, ent in label_entities.items():
                text = _entity_text(ent, "labels")
                if text:
                    labels[vid] = text
        payload = {
            "qid": qid,
            "retrieved_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "entity": trimmed,
            "labels": labels,
        }
        with self._lock:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            self._cache_path(qid).write_text(
                json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
            )
        return payload

    def _profile_from_cache(self, qid: str, cached: dict) -> ActorProfile:
        entity = cached["entity"]
        labels: dict[str, str] = cached["labels"]

        def resolve(pid: str) -> tuple[str, ...]:
            return tuple(labels.get(vid, vid) for vid in _statement_item_ids(entity, pid))

        genders = resolve(self.properties.gender)
        extras = []
        for pid, display_name in self.properties.extras:
            values = resolve(pid)
            if values:
                extras.append((display_name, values))
        return ActorProfile(
            qid=qid,
            name=_entity_text(entity, "labels"),
            description=_entity_text(entity, "descriptions"),
            gender=genders[0] if genders else None,
            occupations=resolve(self.properties.occupations),
            positions_held=resolve(self.properties.positions_held),
            parties=resolve(self.properties.parties),
            extra_attributes=tuple(extras),
            retrieved_at=cached.get("retrieved_at", ""),
        )


# --------------------------------------------------------------------------
# description rendering
# --------------------------------------------------------------------------


def _pronoun(gender: str | None) -> str:
    if gender and gender.strip().lower() == "male":
        return "He"
    if gender and gender.strip().lower() == "female":
        return "She"
    return "They"


def _dedupe(values: Iterable[str]) -> list[str]:
    out: list[str] = []
    for v in values:
        if v and v not in out:
            out.append(v)
    return out


def render_description(
    profile: ActorProfile,
    positions_top_k: int | None = None,
    extra_clause_templates: dict[str, str] | None = None,
) -> str:
    """Render the fixed actor-description template.

    Pure function: the same profile always yields the same string. Clauses
    for empty fields are omitted; a profile with only a name degrades to
    "{Name}.". `positions_top_k` caps the rendered position list (None keeps
    all, in statement order). Extra attributes render as
    "a {name} of {values}" unless `extra_clause_templates` overrides the
    clause for a given attribute name.
    """
    head = profile.name
    if profile.description:
        head += f" ({profile.description})"
    head += "."

    fragments: list[str] = []
    occupations = _dedupe(profile.occupations)
    if occupations:
        fragments.append("has worked as a " + ", ".join(occupations))
    positions = _dedupe(profile.positions_held)
    if positions_top_k is not None:
        positions = positions[:positions_top_k]
    if positions:
        fragments.append("has held the position of " + ", ".join(positions))
    tail = " and ".join(fragments)

    parties = _dedupe(profile.parties)
    if parties:
        affiliation = "affiliated with the " + ", ".join(parties)
        tail = f"{tail} {affiliation}" if tail else affiliation

    clauses: list[str] = []
    templates = extra_clause_templates or {}
    for attr_name, values in profile.extra_attributes:
        values = _dedupe(values)
        if not values:
            continue
        template = templates.get(attr_name, "a {name} of {values}")
        clauses.append(template.format(name=attr_name, values=", ".join(values)))
    if clauses:
        joined = " and ".join(clauses)
        tail = f"{tail} with {joined}" if tail else f"with {joined}"

    if not tail:
        return head
    return f"{head} {_pronoun(profile.gender)} {tail}."
