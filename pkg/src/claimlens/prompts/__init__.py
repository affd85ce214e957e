"""Prompt template loading.

Templates are `string.Template` files ($variable placeholders) shipped as
package data; any of them can be overridden with a file path in the run
configuration.
"""

from __future__ import annotations

import hashlib
from importlib import resources
from pathlib import Path
from string import Template

_PACKAGED = {
    "extraction": "extraction.txt",
    "viewpoint_proposal": "viewpoint_proposal.txt",
    "viewpoint_consolidation": "viewpoint_consolidation.txt",
    "classification": "classification.txt",
}

REFORMAT_INSTRUCTION = (
    "Your previous response was not valid JSON. Respond again with only the "
    "JSON array in the requested format, with no commentary."
)


def load_template(name: str, override_path: str | Path | None = None) -> Template:
    return Template(template_text(name, override_path))


def template_text(name: str, override_path: str | Path | None = None) -> str:
    if override_path:
        return Path(override_path).read_text(encoding="utf-8")
    if name not in _PACKAGED:
        raise KeyError(f"unknown prompt template: {name!r}")
    return (
        resources.files(__package__).joinpath(_PACKAGED[name]).read_text(encoding="utf-8")
    )


def template_digest(name: str, override_path: str | Path | None = None) -> str:
    text = template_text(name, override_path)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
