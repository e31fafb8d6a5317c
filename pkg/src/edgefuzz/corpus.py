"""Context-free edge cases: standardization, clustering, matching, concretization."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .analyzer import ContextEdgeCase
from .catalog import ApiSignature, etype_of
from .types import BASE_TYPES, BaseType, EtypePattern

log = logging.getLogger(__name__)

SLOT = re.compile(r"'?\b(" + "|".join(BASE_TYPES) + r")_(\d+)\b'?")
_QUOTE = "'\"`"
_TYPE_WORDS = {
    BaseType.TENSOR: ("tensor",),
    BaseType.INT: ("int", "integer", "int64_t"),
    BaseType.BOOL: ("bool", "boolean"),
    BaseType.STR: ("str", "string"),
    BaseType.FLOAT: ("float", "double"),
    BaseType.SCALAR: ("scalar",),
    BaseType.LIST: ("list", "intarrayref", "array"),
}


class StandardizationError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Provenance:
    file: str
    line: int
    function: str
    macro: str = ""

    def to_dict(self) -> dict:
        return {"file": self.file, "line": self.line, "function": self.function, "macro": self.macro}


@dataclass(frozen=True)
class ContextFreeEdgeCase:
    id: str
    pattern: EtypePattern
    kind: str
    template: str
    category: str
    provenance: tuple[Provenance, ...] = ()

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "pattern": self.pattern.key(),
            "kind": self.kind,
            "template": self.template,
            "category": self.category,
            "provenance": [p.to_dict() for p in self.provenance],
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "ContextFreeEdgeCase":
        return cls(
            id=rec["id"],
            pattern=EtypePattern.from_key(rec["pattern"]),
            kind=rec["kind"],
            template=rec["template"],
            category=rec["category"],
            provenance=tuple(Provenance(p["file"], int(p["line"]), p["function"], p.get("macro", ""))
                             for p in rec["provenance"]),
        )

    def slots(self) -> list[str]:
        return sorted({f"{m.group(1)}_{m.group(2)}" for m in SLOT.finditer(self.template)})


def normalize_template(template: str) -> str:
    text = " ".join(template.lower().split())
    return text.rstrip(".!;:, ")


def case_id(pattern: EtypePattern, template: str) -> str:
    digest = hashlib.sha1(f"{pattern.key()}\x00{normalize_template(template)}".encode("utf-8"))
    return digest.hexdigest()[:16]


def standardize_text(description: str, variables: Iterable[tuple[str, BaseType]],
                     params: Iterable[str] = ()) -> tuple[str, list[BaseType]]:
    """Replace variable mentions by indexed type slots.

    Returns the template and the types of the mentioned variables in slot
    order. A preceding type word ("Tensor self") is folded into the slot.
    """
    var_types = dict(variables)
    names = set(var_types) | set(params)
    if not names:
        raise StandardizationError("no variables to substitute")
    alternation = "|".join(re.escape(n) for n in sorted(names, key=len, reverse=True))
    mention = re.compile(r"(?<![\w.])([" + _QUOTE + r"]?)(" + alternation + r")(?!\w)([" + _QUOTE + r"]?)")

    slot_of: dict[str, str] = {}
    per_type: dict[BaseType, int] = {}
    order: list[BaseType] = []
    out: list[str] = []
    last = 0
    for m in mention.finditer(description):
        name = m.group(2)
        if name not in var_types:
            raise StandardizationError(f"description mentions parameter {name!r} missing from its variables")
        btype = var_types[name]
        if name not in slot_of:
            per_type[btype] = per_type.get(btype, 0) + 1
            slot_of[name] = f"{btype.value}_{per_type[btype]}"
            order.append(btype)
        start = m.start()
        words = "|".join(_TYPE_WORDS[btype])
        prefix = re.search(r"(?:\b(?:" + words + r")\s+)+$", description[last:start], re.I)
        if prefix:
            start = last + prefix.start()
        quote_open, quote_close = m.group(1), m.group(3)
        end = m.end()
        if quote_open and not quote_close:
            pass
        elif quote_close and not quote_open:
            end -= 1
        out.append(description[last:start])
        out.append(f"'{slot_of[name]}'")
        last = end
    out.append(description[last:])
    if not slot_of:
        raise StandardizationError("description names no variable")
    template = " ".join("".join(out).split())
    leaked = leaked_names(template, params)
    if leaked:
        raise StandardizationError(f"template still contains parameter name {leaked[0]!r}")
    return template, order


def leaked_names(template: str, params: Iterable[str]) -> list[str]:
    """Parameter names still standing as identifiers in a template.

    Member accesses (``x.dim()``, ``p->size``, ``ns::dim``) are names of
    something else and do not count.
    """
    text = SLOT.sub("", template)
    return [n for n in params if re.search(r"(?<![\w.])(?<!::)(?<!->)" + re.escape(n) + r"(?!\w)", text)]


def standardize(case: ContextEdgeCase) -> ContextFreeEdgeCase:
    template, types = standardize_text(case.description, case.variables, case.params)
    pattern = EtypePattern.of(types)
    prov = Provenance(case.source.file_path, case.source.line, case.source.enclosing_function,
                      case.source.macro_name)
    return ContextFreeEdgeCase(
        id=case_id(pattern, template),
        pattern=pattern,
        kind="individual" if pattern.size == 1 else "compound",
        template=template,
        category=case.category,
        provenance=(prov,),
    )


def as_context_case(cf: ContextFreeEdgeCase) -> ContextEdgeCase:
    """View a context-free record as a context-based case whose variables are its slots."""
    from .miner import CheckSite

    p = cf.provenance[0] if cf.provenance else Provenance("", 0, "")
    variables = tuple((s, BaseType(s.rsplit("_", 1)[0])) for s in
                      sorted(cf.slots(), key=lambda s: (s.rsplit("_", 1)[0], int(s.rsplit("_", 1)[1]))))
    site = CheckSite(p.file, p.line, p.macro, "", p.function)
    return ContextEdgeCase(site, variables, cf.template, cf.category, tuple(n for n, _ in variables))


def render(cf: ContextFreeEdgeCase) -> str:
    """Template with the index dropped for types that occur once ('Tensor' not 'Tensor_1')."""
    counts = cf.pattern.counts

    def repl(m: re.Match) -> str:
        btype = BaseType(m.group(1))
        inner = btype.value if counts.get(btype, 0) == 1 else f"{btype.value}_{m.group(2)}"
        return f"'{inner}'"

    return SLOT.sub(repl, cf.template)


# --------------------------------------------------------------------------
# corpus


@dataclass
class EdgeCaseCorpus:
    clusters: dict[str, list[ContextFreeEdgeCase]] = field(default_factory=dict)

    def records(self) -> Iterator[ContextFreeEdgeCase]:
        for key in sorted(self.clusters):
            yield from self.clusters[key]

    def __len__(self) -> int:
        return sum(len(v) for v in self.clusters.values())

    def by_id(self, case_id: str) -> ContextFreeEdgeCase:
        for rec in self.records():
            if rec.id == case_id:
                return rec
        raise KeyError(case_id)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), ensure_ascii=False) + "\n" for r in self.records())

    @classmethod
    def from_jsonl(cls, text: str) -> "EdgeCaseCorpus":
        corpus = cls()
        for line in text.splitlines():
            if line.strip():
                rec = ContextFreeEdgeCase.from_dict(json.loads(line))
                corpus.clusters.setdefault(rec.pattern.key(), []).append(rec)
        return corpus

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EdgeCaseCorpus":
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"))


def build_corpus(cases: Iterable[ContextFreeEdgeCase]) -> EdgeCaseCorpus:
    merged: dict[tuple[str, str], ContextFreeEdgeCase] = {}
    for case in sorted(cases, key=lambda c: (min(c.provenance) if c.provenance else Provenance("", 0, ""),
                                             c.template)):
        key = (case.pattern.key(), normalize_template(case.template))
        if key in merged:
            kept = merged[key]
            prov = tuple(sorted(set(kept.provenance) | set(case.provenance)))
            merged[key] = ContextFreeEdgeCase(kept.id, kept.pattern, kept.kind, kept.template, kept.category, prov)
        else:
            merged[key] = ContextFreeEdgeCase(case.id, case.pattern, case.kind, case.template, case.category,
                                              tuple(sorted(set(case.provenance))))
    corpus = EdgeCaseCorpus()
    for rec in merged.values():
        corpus.clusters.setdefault(rec.pattern.key(), []).append(rec)
    corpus.clusters = dict(sorted(corpus.clusters.items()))
    return corpus


def standardize_all(cases: Iterable[ContextEdgeCase], warnings: list[str] | None = None) -> EdgeCaseCorpus:
    standardized = []
    for case in cases:
        try:
            standardized.append(standardize(case))
        except StandardizationError as exc:
            msg = f"{case.function}:{case.source.line}: dropped edge case {case.description!r}: {exc}"
            log.warning(msg)
            if warnings is not None:
                warnings.append(msg)
    return build_corpus(standardized)


def match(api_pattern: EtypePattern, corpus: EdgeCaseCorpus) -> list[ContextFreeEdgeCase]:
    out = []
    for key in sorted(corpus.clusters):
        pattern = EtypePattern.from_key(key)
        if pattern.size and pattern.issubset(api_pattern):
            out.extend(corpus.clusters[key])
    return out


# --------------------------------------------------------------------------
# concretization


@dataclass(frozen=True)
class Instantiation:
    text: str
    binding: tuple[tuple[str, str], ...]  # (slot, parameter name)
    positions: tuple[int, ...]


def _fill(template: str, names: dict[str, str]) -> str:
    def repl(m: re.Match) -> str:
        slot = f"{m.group(1)}_{m.group(2)}"
        return f"'{names[slot]}'"

    return SLOT.sub(repl, template)


def concretize(case: ContextFreeEdgeCase, api: ApiSignature, rng=None) -> list[Instantiation]:
    """Bind type slots to the API's parameters.

    Individual cases bind once per compatible parameter. Compound cases bind
    each type's slots to the earliest compatible parameters, in order.
    ``rng`` is accepted for interface symmetry and unused by this policy.
    """
    if not case.pattern.issubset(etype_of(api)):
        return []
    slots = case.slots()
    if case.kind == "individual":
        (btype, _), = case.pattern.counts.items()
        slot = slots[0] if slots else f"{btype.value}_1"
        out = []
        for p in api.parameters:
            if p.type == btype:
                out.append(Instantiation(_fill(case.template, {slot: p.name}), ((slot, p.name),), (p.position,)))
        return out
    names: dict[str, str] = {}
    positions: dict[str, int] = {}
    for btype, count in case.pattern.counts.items():
        compatible = [p for p in api.parameters if p.type == btype]
        if len(compatible) < count:
            return []
        for idx in range(count):
            slot = f"{btype.value}_{idx + 1}"
            names[slot] = compatible[idx].name
            positions[slot] = compatible[idx].position
    order = sorted(names, key=lambda s: positions[s])
    return [Instantiation(_fill(case.template, names), tuple((s, names[s]) for s in order),
                          tuple(positions[s] for s in order))]
