"""Run configuration: one YAML file describing the workspace, model table,
context settings, and service endpoints. Secrets never live in the file;
API keys come from environment variables named here.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

from .classify import ModelSpec
from .errors import ConfigError
from .gateway import HttpBackend, LlmGateway, ReplayBackend, RetryPolicy
from .wikidata import PropertyConfig


@dataclass(frozen=True)
class LlmConfig:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    api_key_env: str = "LLM_API_KEY"
    concurrency: int = 4
    tokens_per_minute: int = 0
    max_attempts: int = 5
    backoff_base_s: float = 1.0
    backoff_cap_s: float = 30.0
    wallclock_budget_s: float = 120.0
    extraction_model: str = "gpt-4o"
    viewpoint_model: str = "gpt-4-turbo"
    # deterministic where labels are parsed; sampling only for proposals
    temperature_extraction: float = 0.0
    temperature_viewpoints: float = 0.7
    temperature_classification: float = 0.0
    max_output_tokens: int = 4096


@dataclass(frozen=True)
class RunConfig:
    workspace: Path = Path(".")
    topic: str = "immigration"
    topic_keywords: tuple[str, ...] = ()
    llm: LlmConfig = LlmConfig()
    models: tuple[ModelSpec, ...] = ()
    window_sentences: int = 1
    parse_retries: int = 2
    strict_labels: bool = True
    article_token_budget: int = 24000
    viewpoint_batch_budget: int = 6000
    wikidata_endpoint: str = "https://www.wikidata.org/w/api.php"
    wikidata_properties: PropertyConfig = PropertyConfig()
    positions_top_k: int | None = None
    ratios: tuple[int, int, int] = (70, 10, 20)
    seed: int = 13
    prompt_overrides: tuple[tuple[str, str], ...] = ()
    replay_transcript: Path | None = None
    record_transcript: Path | None = None

    # workspace layout convention: stages discover inputs by these paths
    def corpus_path(self) -> Path:
        return self.workspace / "corpus" / "corpus.jsonl"

    def claims_path(self) -> Path:
        return self.workspace / "claims" / "claims.jsonl"

    def candidates_path(self) -> Path:
        return self.workspace / "viewpoints" / "candidates.json"

    def machine_set_path(self) -> Path:
        return self.workspace / "viewpoints" / "machine_set.json"

    def review_path(self) -> Path:
        return self.workspace / "viewpoints" / "review.txt"

    def viewpoints_path(self) -> Path:
        return self.workspace / "viewpoints" / "viewpoints.json"

    def profiles_dir(self) -> Path:
        return self.workspace / "profiles"

    def wikidata_cache_dir(self) -> Path:
        return self.profiles_dir() / "cache"

    def overrides_path(self) -> Path:
        return self.profiles_dir() / "overrides.tsv"

    def actors_path(self) -> Path:
        return self.profiles_dir() / "actors.json"

    def dataset_dir(self) -> Path:
        return self.workspace / "dataset"

    def instances_path(self) -> Path:
        return self.dataset_dir() / "instances.jsonl"

    def annotations_path(self) -> Path:
        return self.dataset_dir() / "annotations.csv"

    def runs_dir(self) -> Path:
        return self.workspace / "runs"

    def analytics_dir(self) -> Path:
        return self.workspace / "analytics"

    def prompt_override(self, name: str) -> str | None:
        return dict(self.prompt_overrides).get(name)

    def model_by_key(self, key: str) -> ModelSpec:
        for spec in self.models:
            if spec.key == key:
                return spec
        raise ConfigError(f"model {key!r} is not in the configured model table")

    def build_gateway(self) -> LlmGateway:
        """Gateway per the config: replay transcript when set, live HTTP
        otherwise; recording applies in either case."""
        if self.replay_transcript:
            backend = ReplayBackend(self.replay_transcript)
        else:
            backend = HttpBackend(
                endpoint=self.llm.endpoint,
                api_key_env=self.llm.api_key_env,
                retry=RetryPolicy(
                    max_attempts=self.llm.max_attempts,
                    backoff_base_s=self.llm.backoff_base_s,
                    backoff_cap_s=self.llm.backoff_cap_s,
                    wallclock_budget_s=self.llm.wallclock_budget_s,
                ),
            )
        return LlmGateway(
            backend,
            max_concurrency=self.llm.concurrency,
            record_path=self.record_transcript,
            tokens_per_minute=self.llm.tokens_per_minute,
        )


def _expect_mapping(value, where: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{where} must be a mapping")
    return value


def load_config(path: Path | str | None, workspace_override: Path | str | None = None) -> RunConfig:
    """Load the YAML config; missing file or sections fall back to
    defaults. Relative workspace paths resolve against the config file."""
    raw: dict = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config root in {path} must be a mapping")
        base = path.parent

    llm_raw = _expect_mapping(raw.get("llm"), "llm")
    defaults = LlmConfig()
    try:
        llm = LlmConfig(**{**defaults.__dict__, **llm_raw})
    except TypeError as exc:
        raise ConfigError(f"bad llm section: {exc}") from None

    models = []
    for i, entry in enumerate(raw.get("models") or []):
        entry = _expect_mapping(entry, f"models[{i}]")
        if "key" not in entry or "base" not in entry:
            raise ConfigError(f"models[{i}] needs 'key' and 'base'")
        models.append(
            ModelSpec(
                key=str(entry["key"]),
                base_model_id=str(entry["base"]),
                finetuned_model_id=(
                    str(entry["finetuned"]) if entry.get("finetuned") else None
                ),
            )
        )

    wikidata_raw = _expect_mapping(raw.get("wikidata"), "wikidata")
    extras = tuple(
        (str(e["pid"]), str(e["name"]))
        for e in (wikidata_raw.get("extras") or [])
    ) or PropertyConfig().extras
    properties = PropertyConfig(extras=extras)

    context_raw = _expect_mapping(raw.get("context"), "context")
    classification_raw = _expect_mapping(raw.get("classification"), "classification")
    extraction_raw = _expect_mapping(raw.get("extraction"), "extraction")
    viewpoints_raw = _expect_mapping(raw.get("viewpoints"), "viewpoints")
    dataset_raw = _expect_mapping(raw.get("dataset"), "dataset")
    replay_raw = _expect_mapping(raw.get("replay"), "replay")
    prompts_raw = _expect_mapping(raw.get("prompts"), "prompts")

    ratios_raw = dataset_raw.get("ratios", [70, 10, 20])
    if not isinstance(ratios_raw, list) or len(ratios_raw) != 3:
        raise ConfigError("dataset.ratios must be a list of three integers")

    workspace = Path(workspace_override or raw.get("workspace", "."))
    if not workspace.is_absolute():
        workspace = (base / workspace).resolve()

    def _resolve(p) -> Path | None:
        if not p:
            return None
        p = Path(p)
        return p if p.is_absolute() else (base / p).resolve()

    return RunConfig(
        workspace=workspace,
        topic=str(raw.get("topic", "immigration")),
        topic_keywords=tuple(raw.get("topic_keywords") or ()),
        llm=llm,
        models=tuple(models),
        window_sentences=int(context_raw.get("window_sentences", 1)),
        parse_retries=int(classification_raw.get("parse_retries", 2)),
        strict_labels=bool(classification_raw.get("strict_labels", True)),
        article_token_budget=int(extraction_raw.get("article_token_budget", 24000)),
        viewpoint_batch_budget=int(viewpoints_raw.get("batch_token_budget", 6000)),
        wikidata_endpoint=str(wikidata_raw.get("endpoint", "https://www.wikidata.org/w/api.php")),
        wikidata_properties=properties,
        positions_top_k=(
            int(wikidata_raw["positions_top_k"])
            if wikidata_raw.get("positions_top_k") is not None
            else None
        ),
        ratios=tuple(int(r) for r in ratios_raw),
        seed=int(dataset_raw.get("seed", 13)),
        prompt_overrides=tuple(
            (str(k), str(v)) for k, v in prompts_raw.items() if v
        ),
        replay_transcript=_resolve(replay_raw.get("transcript")),
        record_transcript=_resolve(replay_raw.get("record")),
    )
