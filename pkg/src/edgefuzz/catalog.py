"""Target-API catalog: typed signatures loaded from JSON."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .types import BaseType, EtypePattern

_NAME = re.compile(r"^[A-Za-z_][\w.]*$")
_PARAM = re.compile(r"^[A-Za-z_]\w*$")


class CatalogError(ValueError):
    pass


@dataclass(frozen=True)
class ApiParam:
    name: str
    type: BaseType
    position: int
    optional: bool = False


@dataclass(frozen=True)
class ApiSignature:
    name: str
    parameters: tuple[ApiParam, ...]
    doc_hint: str | None = None

    def __post_init__(self) -> None:
        names = [p.name for p in self.parameters]
        if len(set(names)) != len(names):
            raise CatalogError(f"{self.name}: duplicate parameter names")
        if [p.position for p in self.parameters] != list(range(1, len(self.parameters) + 1)):
            raise CatalogError(f"{self.name}: parameter positions must be contiguous from 1")

    @classmethod
    def build(cls, name: str, params, doc_hint: str | None = None) -> "ApiSignature":
        """``params`` is a sequence of (name, type) or (name, type, optional)."""
        built = []
        for pos, spec in enumerate(params, start=1):
            pname, ptype, *rest = spec
            ptype = ptype if isinstance(ptype, BaseType) else BaseType.parse(ptype)
            built.append(ApiParam(pname, ptype, pos, bool(rest[0]) if rest else False))
        return cls(name, tuple(built), doc_hint)

    @property
    def short_name(self) -> str:
        return self.name.rsplit(".", 1)[-1]

    def signature_text(self) -> str:
        parts = [f"{p.name}: {p.type.value}" + (" = <optional>" if p.optional else "") for p in self.parameters]
        return f"{self.name}({', '.join(parts)})"

    def to_dict(self) -> dict:
        out: dict = {"name": self.name,
                     "params": [{"name": p.name, "type": p.type.value, "optional": p.optional}
                                for p in self.parameters]}
        if self.doc_hint is not None:
            out["doc_hint"] = self.doc_hint
        return out


def etype_of(api: ApiSignature) -> EtypePattern:
    return EtypePattern.of(p.type for p in api.parameters)


def _parse_record(idx: int, rec) -> ApiSignature:
    where = f"record {idx}"
    if not isinstance(rec, dict):
        raise CatalogError(f"{where}: expected an object")
    name = rec.get("name")
    if not isinstance(name, str) or not _NAME.match(name):
        raise CatalogError(f"{where}: invalid or missing name {name!r}")
    where = f"record {idx} ({name})"
    params = rec.get("params", [])
    if not isinstance(params, list):
        raise CatalogError(f"{where}: params must be a list")
    built = []
    for pos, p in enumerate(params, start=1):
        if not isinstance(p, dict) or not isinstance(p.get("name"), str) or not _PARAM.match(p["name"]):
            raise CatalogError(f"{where}: parameter {pos} has an invalid name")
        try:
            ptype = BaseType(p.get("type"))
        except ValueError:
            raise CatalogError(f"{where}: parameter {p['name']!r} has unknown type {p.get('type')!r}") from None
        optional = p.get("optional", False)
        if not isinstance(optional, bool):
            raise CatalogError(f"{where}: parameter {p['name']!r} optional flag must be a boolean")
        built.append(ApiParam(p["name"], ptype, pos, optional))
    hint = rec.get("doc_hint")
    if hint is not None and not isinstance(hint, str):
        raise CatalogError(f"{where}: doc_hint must be a string")
    try:
        return ApiSignature(name, tuple(built), hint)
    except CatalogError as exc:
        raise CatalogError(f"{where}: {exc}") from None


def parse_catalog(data) -> list[ApiSignature]:
    if not isinstance(data, list):
        raise CatalogError("catalog must be a JSON array")
    apis = [_parse_record(i, rec) for i, rec in enumerate(data)]
    seen: set[str] = set()
    for api in apis:
        if api.name in seen:
            raise CatalogError(f"duplicate API name {api.name!r}")
        seen.add(api.name)
    return apis


def load_catalog(path: str | Path) -> list[ApiSignature]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CatalogError(f"{path}: not valid JSON ({exc})") from None
    return parse_catalog(data)
