"""Reproducibility manifest written next to CLI outputs."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any

from . import __version__
from .jsonio import canonical_json


def content_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def config_digest(config: dict[str, Any]) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict[str, Any] = field(default_factory=dict)
    inputs: list[tuple[str, str]] = field(default_factory=list)
    seed: int | None = None
    tool_version: str = __version__

    def record_input(self, path: str, data: bytes) -> None:
        self.inputs.append((path, content_digest(data)))

    def to_json_obj(self) -> dict:
        return {
            "tool_version": self.tool_version,
            "command": self.command,
            "config_digest": config_digest(self.config),
            "inputs": [{"path": p, "digest": d} for p, d in self.inputs],
            "seed": self.seed,
        }
