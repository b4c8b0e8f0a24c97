"""Class catalogue: names, raw annotation values, palette colours, loss weights, safety tiers.

The ten-class default catalogue is built in; alternative catalogues are pure
configuration loaded from a JSON document (see ``load_schema``). Schemas are
immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from .errors import (
    DuplicateIndex,
    DuplicateRawValue,
    MissingField,
    NonPositiveWeight,
    ValidationFailure,
)

# Pixels carrying the configured ignore_value decode to this index and are
# excluded from metrics and losses.
IGNORE_INDEX = 255


class Tier(enum.Enum):
    SAFE = "Safe"
    CAUTION = "Caution"
    OBSTACLE = "Obstacle"


@dataclass(frozen=True)
class ClassDef:
    index: int
    name: str
    raw_value: int
    color: tuple[int, int, int]
    weight: float
    tier: Tier


class ClassSchema:
    """Immutable ordered class catalogue with fast lookup tables."""

    def __init__(self, classes: Iterable[ClassDef], ignore_value: int | None = None):
        self.classes: tuple[ClassDef, ...] = tuple(sorted(classes, key=lambda c: c.index))
        self.ignore_value = ignore_value
        self._validate()
        c = len(self.classes)
        self.weights = np.array([cd.weight for cd in self.classes], dtype=np.float64)
        self.palette = np.array([cd.color for cd in self.classes], dtype=np.uint8)
        self.tiers = tuple(cd.tier for cd in self.classes)
        self.names = tuple(cd.name for cd in self.classes)
        # raw PNG value -> class index; 0xFFFF marks unmapped values
        self.raw_to_index = np.full(256, 0xFFFF, dtype=np.uint16)
        for cd in self.classes:
            self.raw_to_index[cd.raw_value] = cd.index
        if ignore_value is not None:
            self.raw_to_index[ignore_value] = IGNORE_INDEX
        self.index_to_raw = np.array([cd.raw_value for cd in self.classes], dtype=np.uint8)
        self._by_name = {cd.name: cd for cd in self.classes}
        self._num_classes = c

    @property
    def num_classes(self) -> int:
        return self._num_classes

    def __len__(self) -> int:
        return self._num_classes

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ClassSchema):
            return NotImplemented
        return self.classes == other.classes and self.ignore_value == other.ignore_value

    def class_named(self, name: str) -> ClassDef:
        try:
            return self._by_name[name]
        except KeyError:
            raise ValidationFailure(f"no class named {name!r} in schema") from None

    def indices_named(self, names: Iterable[str]) -> list[int]:
        return [self.class_named(n).index for n in names]

    def _validate(self) -> None:
        if not self.classes:
            raise MissingField("schema defines no classes")
        if len(self.classes) > 255:
            raise ValidationFailure(
                f"at most 255 classes supported (index {IGNORE_INDEX} is reserved "
                f"for ignored pixels), got {len(self.classes)}")
        seen_raw: dict[int, str] = {}
        seen_idx: dict[int, str] = {}
        for cd in self.classes:
            if cd.raw_value in seen_raw:
                raise DuplicateRawValue(
                    f"raw_value {cd.raw_value} shared by {seen_raw[cd.raw_value]!r} and {cd.name!r}")
            seen_raw[cd.raw_value] = cd.name
            if cd.index in seen_idx:
                raise DuplicateIndex(
                    f"index {cd.index} shared by {seen_idx[cd.index]!r} and {cd.name!r}")
            seen_idx[cd.index] = cd.name
            if not (0 <= cd.raw_value <= 255):
                raise ValidationFailure(
                    f"class {cd.name!r}: raw_value {cd.raw_value} outside [0, 255]")
            if not np.isfinite(cd.weight) or cd.weight <= 0:
                raise NonPositiveWeight(f"class {cd.name!r}: weight {cd.weight} must be > 0")
        for want, cd in enumerate(self.classes):
            if cd.index != want:
                raise MissingField(
                    f"class index {want} missing: indices must be contiguous from 0")
        if self.ignore_value is not None and self.ignore_value in seen_raw:
            raise DuplicateRawValue(
                f"ignore_value {self.ignore_value} collides with class "
                f"{seen_raw[self.ignore_value]!r}")


_REQUIRED_FIELDS = ("index", "name", "raw_value", "color", "weight", "tier")

# Trees through Sky.  Raw values step by 10 from 100 (100 -> Trees is the
# annotation convention anchor); palette colours are display-only defaults.
_DEFAULT_CLASSES = [
    # (name,             raw, color,           weight, tier)
    ("Trees",            100, (34, 139, 34),   1.0, Tier.OBSTACLE),
    ("Lush Bushes",      110, (50, 205, 50),   3.5, Tier.CAUTION),
    ("Dry Grass",        120, (218, 165, 32),  1.2, Tier.SAFE),
    ("Dry Bushes",       130, (160, 120, 60),  1.3, Tier.OBSTACLE),
    ("Ground Clutter",   140, (128, 128, 0),   2.5, Tier.CAUTION),
    ("Flowers",          150, (255, 105, 180), 4.5, Tier.CAUTION),
    ("Logs",             160, (139, 69, 19),   5.0, Tier.OBSTACLE),
    ("Rocks",            170, (128, 128, 128), 2.0, Tier.OBSTACLE),
    ("Landscape",        180, (210, 180, 140), 0.6, Tier.SAFE),
    ("Sky",              190, (0, 0, 255),     0.4, Tier.SAFE),
]


def default_schema() -> ClassSchema:
    """The built-in ten-class terrain catalogue."""
    return ClassSchema(
        ClassDef(i, name, raw, color, weight, tier)
        for i, (name, raw, color, weight, tier) in enumerate(_DEFAULT_CLASSES)
    )


def _parse_entry(pos: int, entry: Mapping[str, Any]) -> ClassDef:
    label = entry.get("name", f"entry #{pos}")
    for field in _REQUIRED_FIELDS:
        if field not in entry:
            raise MissingField(f"class {label!r} missing field {field!r}")
    color = entry["color"]
    if len(color) != 3 or not all(isinstance(v, int) and 0 <= v <= 255 for v in color):
        raise ValidationFailure(f"class {label!r}: color must be three ints in [0, 255]")
    try:
        tier = Tier(entry["tier"])
    except ValueError:
        raise ValidationFailure(
            f"class {label!r}: tier {entry['tier']!r} not one of "
            f"{[t.value for t in Tier]}") from None
    return ClassDef(
        index=int(entry["index"]),
        name=str(entry["name"]),
        raw_value=int(entry["raw_value"]),
        color=(int(color[0]), int(color[1]), int(color[2])),
        weight=float(entry["weight"]),
        tier=tier,
    )


def load_schema(source: Mapping[str, Any] | str | bytes | Path | None = None) -> ClassSchema:
    """Load and validate a schema from a config document.

    ``source`` may be a parsed mapping, a JSON string/bytes, or a path to a
    JSON file. ``None`` returns the built-in default catalogue.
    """
    if source is None:
        return default_schema()
    if isinstance(source, Path):
        source = source.read_text(encoding="utf-8")
    if isinstance(source, (str, bytes)):
        try:
            source = json.loads(source)
        except json.JSONDecodeError as exc:
            raise ValidationFailure(f"schema document is not valid JSON: {exc}") from exc
    if not isinstance(source, Mapping) or "classes" not in source:
        raise MissingField("schema document needs a top-level 'classes' list")
    entries = source["classes"]
    if not isinstance(entries, (list, tuple)):
        raise ValidationFailure("'classes' must be a list of class entries")
    ignore_value = source.get("ignore_value")
    if ignore_value is not None:
        ignore_value = int(ignore_value)
        if not (0 <= ignore_value <= 255):
            raise ValidationFailure(f"ignore_value {ignore_value} outside [0, 255]")
    classes = [_parse_entry(i, e) for i, e in enumerate(entries)]
    return ClassSchema(classes, ignore_value=ignore_value)


def schema_to_config(schema: ClassSchema) -> dict[str, Any]:
    """Inverse of ``load_schema``: a JSON-ready document equal after reload."""
    doc: dict[str, Any] = {
        "classes": [
            {
                "index": cd.index,
                "name": cd.name,
                "raw_value": cd.raw_value,
                "color": list(cd.color),
                "weight": cd.weight,
                "tier": cd.tier.value,
            }
            for cd in schema.classes
        ]
    }
    if schema.ignore_value is not None:
        doc["ignore_value"] = schema.ignore_value
    return doc
