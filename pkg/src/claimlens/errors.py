"""Exception taxonomy shared across the pipeline.

Every error carries an exit-code category so the CLI can map failures to
stable process exit codes: 2 config, 3 input, 4 remote service, 5
parse/validation.
"""

from __future__ import annotations

EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_REMOTE = 4
EXIT_PARSE = 5


class ClaimLensError(Exception):
    """Base class for all pipeline errors."""

    exit_code = EXIT_PARSE


# --- configuration / workspace -------------------------------------------

class ConfigError(ClaimLensError):
    exit_code = EXIT_CONFIG


class StageInputMissing(ClaimLensError):
    exit_code = EXIT_INPUT


class WorkspaceLocked(ClaimLensError):
    exit_code = EXIT_INPUT


# --- core model / persistence ---------------------------------------------

class MissingField(ClaimLensError):
    """A required field is empty or absent; `field` names it."""

    def __init__(self, field: str, detail: str = ""):
        self.field = field
        super().__init__(f"missing field: {field}" + (f" ({detail})" if detail else ""))


class DanglingArticleRef(ClaimLensError):
    def __init__(self, claim_id: str, article_id: str):
        self.claim_id = claim_id
        self.article_id = article_id
        super().__init__(f"claim {claim_id} references unknown article {article_id!r}")


class FormatError(ClaimLensError):
    """Malformed persisted record; carries the 1-based line/record number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")


class DuplicateId(ClaimLensError):
    def __init__(self, kind: str, value: str, line: int | None = None):
        self.kind = kind
        self.value = value
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"duplicate {kind}: {value!r}{where}")


# --- LLM gateway -----------------------------------------------------------

class GatewayError(ClaimLensError):
    exit_code = EXIT_REMOTE


class AuthError(GatewayError):
    pass


class RateLimited(GatewayError):
    pass


class TransportError(GatewayError):
    pass


class ReplayMiss(GatewayError):
    def __init__(self, digest: str):
        self.digest = digest
        super().__init__(f"request digest {digest} not found in replay transcript")


class EmptySplit(ClaimLensError):
    exit_code = EXIT_INPUT


# --- wikidata enrichment ----------------------------------------------------

class EntityNotFound(ClaimLensError):
    exit_code = EXIT_REMOTE


class Ambiguous(ClaimLensError):
    """Strict-mode disambiguation failure; `candidates` holds the tied set."""

    def __init__(self, name: str, candidates):
        self.name = name
        self.candidates = list(candidates)
        tied = ", ".join(c.qid for c in self.candidates)
        super().__init__(f"ambiguous entity for {name!r}: tied candidates {tied}")


class CacheError(ClaimLensError):
    exit_code = EXIT_INPUT

    def __init__(self, path, detail: str):
        self.path = path
        super().__init__(
            f"corrupt cache entry {path}: {detail}; delete the file to force a refetch"
        )


# --- extraction / viewpoint pipeline ---------------------------------------

class LlmFailure(ClaimLensError):
    exit_code = EXIT_REMOTE


class UnparseableOutput(ClaimLensError):
    """Model output could not be parsed even after a reformat retry."""


class UtteranceTooLarge(ClaimLensError):
    def __init__(self, index: int, tokens: int, budget: int):
        self.index = index
        super().__init__(
            f"utterance {index} estimated at {tokens} tokens exceeds batch budget {budget}"
        )


class DuplicateTitles(ClaimLensError):
    def __init__(self, titles):
        self.titles = list(titles)
        super().__init__(f"duplicate viewpoint titles: {self.titles}")


class EmptySetAfterReview(ClaimLensError):
    pass


# --- dataset builder ---------------------------------------------------------

class WrongAnnotatorCount(ClaimLensError):
    def __init__(self, claim_id: str, viewpoint_id: int, count: int):
        self.claim_id = claim_id
        self.viewpoint_id = viewpoint_id
        super().__init__(
            f"pair ({claim_id}, {viewpoint_id}) has {count} annotations, expected 3"
        )


class NoOverlap(ClaimLensError):
    def __init__(self, annotator_a: str, annotator_b: str):
        super().__init__(f"annotators {annotator_a!r} and {annotator_b!r} share no items")


class RatioError(ClaimLensError):
    pass


# --- classification / evaluation ---------------------------------------------

class MissingArticleBody(ClaimLensError):
    def __init__(self, instance_id: str):
        self.instance_id = instance_id
        super().__init__(f"instance {instance_id} has no article body for a Text context")


class ParseFailure(ClaimLensError):
    def __init__(self, response: str):
        self.response = response
        super().__init__(f"could not parse a binary label from response {response!r}")


class MissingPrediction(ClaimLensError):
    def __init__(self, ids):
        self.ids = sorted(ids)
        super().__init__(f"no prediction for instances: {self.ids}")


class DuplicatePrediction(ClaimLensError):
    def __init__(self, ids):
        self.ids = sorted(ids)
        super().__init__(f"multiple predictions for instances: {self.ids}")
