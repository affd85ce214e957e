"""Shared helper for LLM calls that must return a JSON array.

A malformed response gets exactly one reformat retry (the original exchange
plus an explicit corrective instruction) before UnparseableOutput is raised.
"""

from __future__ import annotations

import json
import re

from .errors import LlmFailure, RateLimited, TransportError, UnparseableOutput
from .gateway import ChatRequest, LlmGateway
from .prompts import REFORMAT_INSTRUCTION

_CODE_FENCE = re.compile(r"^```[a-zA-Z]*\n|\n?```$")


def strip_code_fence(text: str) -> str:
    return _CODE_FENCE.sub("", text.strip()).strip()


def parse_json_array(text: str) -> list:
    data = json.loads(strip_code_fence(text))
    if not isinstance(data, list):
        raise ValueError("expected a JSON array")
    return data


def complete_json_array(gateway: LlmGateway, request: ChatRequest, what: str) -> list:
    try:
        response = gateway.complete(request)
    except (RateLimited, TransportError) as exc:
        raise LlmFailure(f"{what}: backend gave up: {exc}") from exc
    try:
        return parse_json_array(response.content)
    except (json.JSONDecodeError, ValueError):
        pass
    retry_request = ChatRequest(
        model_id=request.model_id,
        messages=request.messages
        + (("assistant", response.content), ("user", REFORMAT_INSTRUCTION)),
        temperature=request.temperature,
        max_output_tokens=request.max_output_tokens,
    )
    try:
        retry_response = gateway.complete(retry_request)
    except (RateLimited, TransportError) as exc:
        raise LlmFailure(f"{what}: backend gave up on reformat retry: {exc}") from exc
    try:
        return parse_json_array(retry_response.content)
    except (json.JSONDecodeError, ValueError) as exc:
        raise UnparseableOutput(f"{what}: model output is not a JSON array: {exc}") from None
