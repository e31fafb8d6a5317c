"""Base type vocabulary shared by the analyzer, corpus and API catalog."""

from __future__ import annotations

import re
from enum import Enum


class BaseType(str, Enum):
    TENSOR = "Tensor"
    INT = "Int"
    BOOL = "Bool"
    STR = "Str"
    FLOAT = "Float"
    SCALAR = "Scalar"
    LIST = "List"

    @classmethod
    def parse(cls, text: str) -> "BaseType":
        """Case-insensitive lookup; raises ValueError for unknown names."""
        key = text.strip().lower()
        for member in cls:
            if member.value.lower() == key:
                return member
        raise ValueError(f"unknown base type {text!r}")

    def __str__(self) -> str:
        return self.value


BASE_TYPES = tuple(t.value for t in BaseType)

# Declared native types -> base type. Checked in order, first match wins.
NATIVE_TYPE_RULES: list[tuple[re.Pattern, BaseType]] = [
    (re.compile(r"\b(IntArrayRef|SymIntArrayRef|ArrayRef|TensorList|vector|array|OptionalIntArrayRef)\b"), BaseType.LIST),
    (re.compile(r"\bTensor\b"), BaseType.TENSOR),
    (re.compile(r"\bbool\b"), BaseType.BOOL),
    (re.compile(r"\b(string_view|string|c10::string_view|char)\b"), BaseType.STR),
    (re.compile(r"\b(double|float)\b"), BaseType.FLOAT),
    (re.compile(r"\bScalar\b"), BaseType.SCALAR),
    (re.compile(r"\b(int64_t|int32_t|int|long|size_t|SymInt|Dimname)\b"), BaseType.INT),
]


def native_to_base(declared_type: str) -> BaseType | None:
    for pattern, base in NATIVE_TYPE_RULES:
        if pattern.search(declared_type):
            return base
    return None


class EtypePattern:
    """Multiset of base types, e.g. ``{Tensor: 2, Int: 1}``.

    The canonical key sorts types by name: ``Int:1|Tensor:2``. The empty
    pattern has the empty key.
    """

    __slots__ = ("_counts",)

    def __init__(self, counts: dict[BaseType, int] | None = None):
        clean = {}
        for t, n in (counts or {}).items():
            t = t if isinstance(t, BaseType) else BaseType.parse(t)
            if n < 0:
                raise ValueError("type counts must be non-negative")
            if n:
                clean[t] = clean.get(t, 0) + n
        self._counts = tuple(sorted(clean.items(), key=lambda kv: kv[0].value))

    @classmethod
    def of(cls, types) -> "EtypePattern":
        counts: dict[BaseType, int] = {}
        for t in types:
            t = t if isinstance(t, BaseType) else BaseType.parse(t)
            counts[t] = counts.get(t, 0) + 1
        return cls(counts)

    @classmethod
    def from_key(cls, key: str) -> "EtypePattern":
        if not key:
            return cls()
        counts = {}
        for part in key.split("|"):
            name, _, n = part.partition(":")
            counts[BaseType.parse(name)] = int(n)
        return cls(counts)

    @property
    def counts(self) -> dict[BaseType, int]:
        return dict(self._counts)

    @property
    def size(self) -> int:
        return sum(n for _, n in self._counts)

    def key(self) -> str:
        return "|".join(f"{t.value}:{n}" for t, n in self._counts)

    def issubset(self, other: "EtypePattern") -> bool:
        theirs = other.counts
        return all(n <= theirs.get(t, 0) for t, n in self._counts)

    def __le__(self, other: "EtypePattern") -> bool:
        return self.issubset(other)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, EtypePattern) and self._counts == other._counts

    def __hash__(self) -> int:
        return hash(self._counts)

    def __len__(self) -> int:
        return self.size

    def __repr__(self) -> str:
        return f"EtypePattern({self.key()!r})"
