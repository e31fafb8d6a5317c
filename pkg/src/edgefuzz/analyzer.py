"""Turn check-related code blocks into context-based edge cases."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Iterable

from .llm import LlmDialogue, LlmGateway
from .miner import CheckBlock, CheckSite
from .types import BASE_TYPES, BaseType

log = logging.getLogger(__name__)

CATEGORIES = ("SpecialType", "AbnormalValue", "SpecialTypeAttribute", "MultiParamConstraint", "Other")

EXAMPLE_BLOCK = """Tensor& abs_(Tensor& self) {
  TORCH_CHECK(!self.is_complex(), "In-place abs is not supported for complex tensors.");
}"""
EXAMPLE_OUTPUT = '[{"check": 1, "variables": [{"name": "self", "type": "Tensor"}], "edge_case": "Tensor self is a complex tensor"}]'


class AnalysisParseError(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class ContextEdgeCase:
    source: CheckSite
    variables: tuple[tuple[str, BaseType], ...]
    description: str
    category: str
    params: tuple[str, ...] = ()  # parameter names of the originating interface

    @property
    def function(self) -> str:
        return self.source.enclosing_function

    def to_dict(self) -> dict:
        return {
            "function": self.source.enclosing_function,
            "check_line": self.source.line,
            "variables": [{"name": n, "type": t.value} for n, t in self.variables],
            "description": self.description,
            "category": self.category,
            "file": self.source.file_path,
            "macro": self.source.macro_name,
            "params": list(self.params),
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "ContextEdgeCase":
        site = CheckSite(rec.get("file", ""), int(rec["check_line"]), rec.get("macro", ""), "", rec["function"])
        variables = tuple((v["name"], BaseType.parse(v["type"])) for v in rec["variables"])
        params = tuple(rec.get("params") or (n for n, _ in variables))
        return cls(site, variables, rec["description"], rec.get("category", "Other"), params)


@dataclass
class AnalysisWarning:
    function: str
    message: str
    entry: object = None


# --------------------------------------------------------------------------
# category rules

_SPECIAL_TYPE = re.compile(
    r"\b(is not an? (tensor|integer|int|list|string|bool(ean)?|float|scalar)|is an? (string|str|none|null)\b"
    r"|is none\b|is null\b|is undefined|not defined|of (the )?wrong type|is of type)", re.I)
_EMPTY_OR_SIGN = re.compile(r"\b(empty|negative|zero|non-positive|nan|inf(inite)?)\b", re.I)
_ATTRIBUTE = re.compile(
    r"\b(complex|floating|floating-point|integral|dtype|data type|sparse|dense|contiguous|conjugate|"
    r"quantized|layout|strided|device|cpu|cuda|gpu|dimensions?|dims?|\d+-?d|shape|sizes?|rank|requires_grad|"
    r"matrix|matrices|square)\b", re.I)
_COMPARISON = re.compile(
    r"(\b(greater|less|larger|smaller|exceeds?|out of range|not equal|at least|at most|more than|fewer|"
    r"outside|invalid|unsupported|not one of)\b|[<>≤≥]|!=|==)", re.I)


def categorize(description: str, n_variables: int, names: Iterable[str] = ()) -> str:
    """Keyword rules; the LLM is never asked for the category.

    Variable names are masked first so a parameter called ``dim`` does not
    read as an attribute keyword.
    """
    for name in names:
        description = re.sub(r"(?<![\w.])" + re.escape(name) + r"(?!\w)", "X", description)
    if n_variables >= 2:
        return "MultiParamConstraint"
    if _SPECIAL_TYPE.search(description):
        return "SpecialType"
    if _EMPTY_OR_SIGN.search(description):
        return "AbnormalValue"
    if _ATTRIBUTE.search(description):
        return "SpecialTypeAttribute"
    if _COMPARISON.search(description):
        return "AbnormalValue"
    return "Other"


# --------------------------------------------------------------------------
# prompt


def _check_label(block: CheckBlock) -> str:
    macros = sorted({c.macro_name for c in block.checks})
    return macros[0] if len(macros) == 1 else "check"


def build_analysis_prompt(block: CheckBlock) -> LlmDialogue:
    if not block.checks:
        raise ValueError("cannot analyze a block without checks")
    n = len(block.checks)
    macro = _check_label(block)
    listing = "\n".join(f"{i}. {' '.join(c.raw_text.split())}" for i, c in enumerate(block.checks, start=1))
    types = ", ".join(BASE_TYPES)
    prompt = f"""You are analyzing the input checks of a deep learning library API implemented in native code.
Below is a check-related code block: the function interface followed by its {macro} statements.

```cpp
{block.block_text}
```

The block contains {n} {macro} statement(s), numbered in order:
{listing}

Analyze each {macro} statement in four steps.
1. What variables does the {macro} examine? Only list parameters of the function interface.
2. What are the data types of these variables? Choose from the following types: {types}.
3. What edge cases does the {macro} check? Describe the input condition under which the check fails. If the check states an expected condition (for example `x > 0`), describe the violating condition (for example "Int x is less than or equal to 0"). Base the edge case on the checked predicate, not on the error message string, which may be unclear or misleading.
4. To standardize the output and reduce irrelevant information, summarize the output in JSON format. Output a JSON array with exactly {n} entries, one per {macro} in the order listed above. Each entry has the form:
{{"check": <number of the {macro}>, "variables": [{{"name": "<parameter name>", "type": "<one of: {types}>"}}], "edge_case": "<edge case that refers to the variables by name>"}}

Example. For the code block
```cpp
{EXAMPLE_BLOCK}
```
the output is
{EXAMPLE_OUTPUT}
"""
    return LlmDialogue("analysis", subject=block.checks[0].enclosing_function).user(prompt)


# --------------------------------------------------------------------------
# response parsing


def _first_json_array(text: str):
    decoder = json.JSONDecoder()
    for m in re.finditer(r"\[", text):
        try:
            value, _ = decoder.raw_decode(text, m.start())
        except json.JSONDecodeError:
            continue
        if isinstance(value, list):
            return value
    return None


def _entry_variables(entry: dict) -> list[tuple[str, str]]:
    raw = entry.get("variables")
    if raw is None:
        raw = entry.get("vars", [])
    out = []
    for v in raw if isinstance(raw, list) else []:
        if isinstance(v, dict):
            out.append((str(v.get("name", "")), str(v.get("type", ""))))
        elif isinstance(v, (list, tuple)) and len(v) == 2:
            out.append((str(v[0]), str(v[1])))
        else:
            out.append(("", ""))
    return out


def parse_analysis_json(text: str, block: CheckBlock,
                        warnings: list[AnalysisWarning] | None = None) -> list[ContextEdgeCase]:
    entries = _first_json_array(text)
    if entries is None:
        raise AnalysisParseError("no JSON array found in analysis response", text)
    function = block.checks[0].enclosing_function if block.checks else block.interface.name
    params = block.interface.param_names

    def drop(entry, why: str) -> None:
        log.warning("%s: dropped analysis entry: %s", function, why)
        if warnings is not None:
            warnings.append(AnalysisWarning(function, why, entry))

    seen_types: dict[str, BaseType] = {}
    by_check: dict[int, ContextEdgeCase] = {}
    for pos, entry in enumerate(entries, start=1):
        if not isinstance(entry, dict):
            drop(entry, "entry is not an object")
            continue
        idx = entry.get("check", pos)
        if not isinstance(idx, int) or isinstance(idx, bool) or not 1 <= idx <= len(block.checks):
            drop(entry, f"check index {idx!r} out of range")
            continue
        if idx in by_check:
            drop(entry, f"duplicate entry for check {idx}")
            continue
        description = entry.get("edge_case", entry.get("description", ""))
        if not isinstance(description, str) or not description.strip():
            drop(entry, "empty edge case description")
            continue
        variables = []
        problem = None
        for name, tname in _entry_variables(entry):
            if name not in params:
                problem = f"variable {name!r} is not a parameter of {function}"
                break
            try:
                btype = BaseType.parse(tname)
            except ValueError:
                problem = f"variable {name!r} has unknown type {tname!r}"
                break
            if seen_types.get(name, btype) != btype:
                problem = f"variable {name!r} typed both {seen_types[name].value} and {btype.value}"
                break
            if (name, btype) not in variables:
                variables.append((name, btype))
        if problem is None and not variables:
            problem = "entry lists no variables"
        if problem:
            drop(entry, problem)
            continue
        for name, btype in variables:
            seen_types[name] = btype
        description = " ".join(description.split())
        by_check[idx] = ContextEdgeCase(
            source=block.checks[idx - 1],
            variables=tuple(variables),
            description=description,
            category=categorize(description, len(variables), [n for n, _ in variables]),
            params=params,
        )
    return [by_check[k] for k in sorted(by_check)]


REASK = ("Your previous answer did not contain a JSON array. Reply with only the JSON array "
         "described in step 4, with one entry per check statement.")


def analyze_block(block: CheckBlock, gateway: LlmGateway, retries: int = 1,
                  warnings: list[AnalysisWarning] | None = None) -> list[ContextEdgeCase]:
    if not block.checks:
        return []
    dialogue = build_analysis_prompt(block)
    for attempt in range(retries + 1):
        response = gateway.complete(dialogue)
        try:
            return parse_analysis_json(response, block, warnings)
        except AnalysisParseError:
            if attempt == retries:
                raise
            dialogue.assistant(response).user(REASK)
    return []


@dataclass
class AnalysisRun:
    cases: list[ContextEdgeCase] = field(default_factory=list)
    failed_blocks: list[str] = field(default_factory=list)
    warnings: list[AnalysisWarning] = field(default_factory=list)


def analyze_blocks(blocks: list[CheckBlock], gateway: LlmGateway, retries: int = 1, workers: int = 1) -> AnalysisRun:
    """Analyze blocks independently; results keep block order."""
    from concurrent.futures import ThreadPoolExecutor

    run = AnalysisRun()

    def one(block: CheckBlock):
        local: list[AnalysisWarning] = []
        try:
            return analyze_block(block, gateway, retries, local), local, None
        except AnalysisParseError as exc:
            return [], local, f"{block.checks[0].enclosing_function}: {exc}"

    todo = [b for b in blocks if b.checks]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, todo))
    else:
        results = [one(b) for b in todo]
    for cases, local, failure in results:
        run.cases.extend(cases)
        run.warnings.extend(local)
        if failure:
            log.warning("analysis failed for %s", failure)
            run.failed_blocks.append(failure)
    return run
