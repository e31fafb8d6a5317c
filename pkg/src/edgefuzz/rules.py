"""Deterministic rule engine behind the ``rule`` completion backend.

It reads the same prompts a chat model would receive and answers them with
regex rules, so the whole pipeline runs offline:

* analysis    check predicates -> edge-case JSON array
* generation  API definition   -> program from per-type value templates
* debug       like generation, using the next candidate value per type
* mutation    edge-case sentence -> rewritten assignments of the named parameters

The default templates target a module exposing ``tensor(data, dtype=None,
device="cpu")`` and ``dump(value) -> list[float]`` (``mocktorch`` by default).
"""

from __future__ import annotations

import json
import keyword
import re
from dataclasses import dataclass, field
from pathlib import Path

from .llm import CompletionParams, LlmDialogue, LlmError
from .miner import _split_top_level, parse_header
from .types import BaseType, native_to_base

_NEG_OP = {">": "less than or equal to", ">=": "less than", "<": "greater than or equal to",
           "<=": "greater than", "==": "not equal to", "!=": "equal to"}

# (predicate regex, edge-case template); {A}/{B} expand to "<Type> <name>"
DEFAULT_ANALYSIS_RULES: list[tuple[str, str]] = [
    (r"^!\s*(?P<a>\w+)\.is_complex\(\)$", "{A} is a complex tensor"),
    (r"^(?P<a>\w+)\.is_complex\(\)$", "{A} is not a complex tensor"),
    (r"^!\s*(?P<a>\w+)\.is_sparse\(\)$", "{A} is a sparse tensor"),
    (r"^!\s*(?P<a>\w+)\.is_floating_point\(\)$", "{A} is a floating-point tensor"),
    (r"^(?P<a>\w+)\.is_floating_point\(\)$", "{A} is not a floating-point tensor"),
    (r"^(?P<a>\w+)\.is_contiguous\(\)$", "{A} is not contiguous"),
    (r"^(?P<a>\w+)\.defined\(\)$", "{A} is undefined"),
    (r"^!\s*(?P<a>\w+)\.empty\(\)$", "{A} is empty"),
    (r"^(?P<a>\w+)\.(?:numel|size|sym_numel)\(\)\s*(?:>\s*0|!=\s*0|>=\s*1)$", "{A} is empty"),
    (r"^(?P<a>\w+)\.(?:dim|ndimension)\(\)\s*==\s*(?P<n>\d+)(?:\s*\|\|\s*(?P=a)\.(?:dim|ndimension)\(\)\s*==\s*\d+)+$",
     "{A} has an unsupported number of dimensions"),
    (r"^(?P<a>\w+)\.(?:dim|ndimension)\(\)\s*==\s*(?P<n>\d+)$", "{A} is not {n}-dimensional"),
    (r"^(?P<a>\w+)\.(?:dim|ndimension)\(\)\s*>=\s*(?P<n>\d+)$", "{A} has fewer than {n} dimensions"),
    (r"^(?P<a>\w+)\.(?:dim|ndimension)\(\)\s*>\s*(?P<n>\d+)$", "{A} has at most {n} dimensions"),
    (r"^(?P<a>\w+)\.(?:dim|ndimension)\(\)\s*<=\s*(?P<n>\d+)$", "{A} has more than {n} dimensions"),
    (r"^(?P<a>\w+)\.(?:size|sym_size)\(-1\)\s*==\s*(?P<b>\w+)\.(?:size|sym_size)\(-1\)$",
     "{A} and {B} have different sizes in the last dimension"),
    (r"^(?P<a>\w+)\.(?:size|sym_size)\((?P<d>\d+)\)\s*==\s*(?P<b>\w+)\.(?:size|sym_size)\((?P=d)\)$",
     "{A} and {B} have different sizes in dimension {d}"),
    (r"^(?P<a>\w+)\.sizes\(\)\s*==\s*(?P<b>\w+)\.sizes\(\)$", "{A} and {B} have different shapes"),
    (r"^(?P<a>\w+)\.scalar_type\(\)\s*==\s*(?P<b>\w+)\.scalar_type\(\)$", "{A} and {B} have different dtypes"),
    (r"^(?P<a>\w+)\.device\(\)\s*==\s*(?P<b>\w+)\.device\(\)$", "{A} and {B} are on different devices"),
    (r"^(?P<a>\w+)\.size\(\)\s*==\s*(?P<n>\d+)$", "{A} does not have exactly {n} elements"),
    (r"^(?P<a>\w+)\s*>\s*0$", "{A} is less than or equal to 0"),
    (r"^(?P<a>\w+)\s*>=\s*0$", "{A} is negative"),
    (r"^(?P<a>\w+)\s*(?P<op>>=|<=|>|<|==|!=)\s*(?P<n>-?\d+(?:\.\d+)?)$", "{A} is {op} {n}"),
    (r"^(?P<a>\w+)\s*(?P<op>>=|<=|>|<|==|!=)\s*(?P<b>\w+)$", "{A} is {op} {B}"),
]

DEFAULT_MODULE = "mocktorch"


def _default_values(module: str) -> dict[str, list[str]]:
    dev = 'device="{{DEVICE}}"'
    return {
        "Tensor": [f"{module}.tensor([1.0, -2.0, 3.0], {dev})", f"{module}.tensor([[1.0, 2.0], [3.0, 4.0]], {dev})"],
        "Int": ["1", "0", "2"],
        "Bool": ["False", "True"],
        "Str": ['"mean"', '"sum"'],
        "Float": ["0.5", "1.0"],
        "Scalar": ["2.0", "1"],
        "List": ["[1]", "[2, 2]"],
    }


def _default_mutations(module: str) -> list[dict]:
    dev = 'device="{{DEVICE}}"'
    return [
        {"pattern": r"is not a complex tensor", "exprs": [f"{module}.tensor([1.0, 2.0, 3.0], {dev})"]},
        {"pattern": r"is a complex tensor", "exprs": [f"{module}.tensor([1+1j, 2-1j, 3+0j], {dev})"]},
        {"pattern": r"is not a floating-point tensor", "types": ["Tensor"],
         "exprs": [f'{module}.tensor([1, 2, 3], dtype="int64", {dev})']},
        {"pattern": r"different sizes in the last dimension|different sizes in dimension|different shapes",
         "exprs": [f"{module}.tensor([1.0, 2.0, 3.0], {dev})", f"{module}.tensor([1.0, 2.0], {dev})"]},
        {"pattern": r"different dtypes",
         "exprs": [f"{module}.tensor([1.0, 2.0, 3.0], {dev})", f'{module}.tensor([1, 2, 3], dtype="int64", {dev})']},
        {"pattern": r"\bempty\b", "types": ["Tensor"], "exprs": [f"{module}.tensor([], {dev})"]},
        {"pattern": r"\bempty\b", "types": ["List"], "exprs": ["[]"]},
        {"pattern": r"\bempty\b", "types": ["Str"], "exprs": ['""']},
        {"pattern": r"\bnegative\b|less than 0\b|less than or equal to 0\b", "types": ["Int"], "exprs": ["-1"]},
        {"pattern": r"\bnegative\b|less than 0\b|less than or equal to 0\b", "types": ["Float", "Scalar"],
         "exprs": ["-1.0"]},
        {"pattern": r"\bnegative\b", "types": ["Tensor"], "exprs": [f"{module}.tensor([-1.0, -2.0, -3.0], {dev})"]},
        {"pattern": r"\bnegative\b", "types": ["List"], "exprs": ["[-1]"]},
        {"pattern": r"\bzero\b|equal to 0\b", "types": ["Int"], "exprs": ["0"]},
        {"pattern": r"\bzero\b|equal to 0\b", "types": ["Float", "Scalar"], "exprs": ["0.0"]},
        {"pattern": r"greater than|more than|at most|exceeds|out of range", "types": ["Int"], "exprs": ["1000000"]},
        {"pattern": r"greater than|more than|at most|exceeds|out of range", "types": ["Float", "Scalar"],
         "exprs": ["1e30"]},
        {"pattern": r"fewer than \d+ dimensions|is not \d+-dimensional|number of dimensions|dimensions",
         "types": ["Tensor"], "exprs": [f"{module}.tensor([[[1.0, 2.0]]], {dev})"]},
        {"pattern": r"does not have exactly \d+ elements|\belements\b", "types": ["List"], "exprs": ["[1, 2, 3, 4, 5]"]},
        {"pattern": r"undefined|\bnone\b|\bnull\b", "exprs": ["None"]},
    ]


@dataclass
class RuleSet:
    module: str = DEFAULT_MODULE
    prelude: str = ""  # defaults to "import <module>"
    result_stmt: str = ""  # defaults to print("RESULT:", <module>.dump(result))
    values: dict[str, list[str]] = field(default_factory=dict)
    param_values: dict[str, list[str]] = field(default_factory=dict)  # "api.param" or "param" -> candidates
    analysis_rules: list[tuple[str, str]] = field(default_factory=list)
    mutation_rules: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.prelude:
            self.prelude = f"import {self.module}"
        if not self.result_stmt:
            self.result_stmt = f'print("RESULT:", {self.module}.dump(result))'
        merged = _default_values(self.module)
        merged.update({BaseType.parse(k).value: list(v) for k, v in self.values.items()})
        self.values = merged
        self.analysis_rules = [tuple(r) for r in self.analysis_rules] + DEFAULT_ANALYSIS_RULES
        self.mutation_rules = list(self.mutation_rules) + _default_mutations(self.module)
        self._analysis = [(re.compile(p), t) for p, t in self.analysis_rules]
        self._mutation = [(re.compile(r["pattern"], re.I), r) for r in self.mutation_rules]

    @classmethod
    def from_dict(cls, data: dict) -> "RuleSet":
        unknown = set(data) - {"module", "prelude", "result_stmt", "values", "param_values",
                               "analysis_rules", "mutation_rules"}
        if unknown:
            raise ValueError(f"unknown rule keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "RuleSet":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --------------------------------------------------------------------------
# prompt parsing helpers


_API_DEF = re.compile(r"API definition:\s*\n\s*([\w.]+)\((.*)\)\s*$", re.M)
_FENCE = re.compile(r"```[\w+-]*\n(.*?)\n```", re.S)


def parse_api_definition(prompt: str) -> tuple[str, list[tuple[str, BaseType]]]:
    m = _API_DEF.search(prompt)
    if not m:
        raise LlmError("rule backend: no API definition in prompt")
    params = []
    for part in _split_top_level(m.group(2)):
        part = part.strip()
        if not part:
            continue
        name, _, rest = part.partition(":")
        tname = rest.split("=")[0].strip()
        params.append((name.strip(), BaseType.parse(tname)))
    return m.group(1), params


def _var(name: str) -> str:
    return name + "_" if keyword.iskeyword(name) else name


def _first_arg(args: str) -> str:
    depth, k, quote = 0, 0, None
    while k < len(args):
        ch = args[k]
        if quote:
            if ch == "\\":
                k += 1
            elif ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        elif ch == "," and depth == 0:
            return args[:k]
        k += 1
    return args


def _condition(check_text: str) -> str:
    m = re.match(r"\s*\w+\s*\((.*)\)\s*;?\s*$", check_text, re.S)
    if not m:
        return check_text.strip()
    return " ".join(_first_arg(m.group(1)).split())


def _strip_parens(text: str) -> str:
    text = text.strip()
    while text.startswith("(") and text.endswith(")"):
        inner = text[1:-1]
        depth = 0
        balanced = True
        for ch in inner:
            depth += ch == "("
            depth -= ch == ")"
            if depth < 0:
                balanced = False
                break
        if not balanced:
            break
        text = inner.strip()
    return text


def _conjuncts(cond: str) -> list[str]:
    parts, depth, start, k = [], 0, 0, 0
    while k < len(cond):
        ch = cond[k]
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif depth == 0 and cond.startswith("&&", k):
            parts.append(cond[start:k])
            start = k + 2
            k += 1
        k += 1
    parts.append(cond[start:])
    return [_strip_parens(p) for p in parts if p.strip()]


def _mentions(text: str, names: list[str]) -> list[str]:
    code = re.sub(r'"(?:\\.|[^"\\])*"', '""', text)
    found = []
    for m in re.finditer(r"(?<![\w.])(?<!::)(?<!->)([A-Za-z_]\w*)\b", code):
        if m.group(1) in names and m.group(1) not in found:
            found.append(m.group(1))
    return found


# --------------------------------------------------------------------------
# backend


class RuleBackend:
    def __init__(self, rules: RuleSet | None = None):
        self.rules = rules or RuleSet()

    def complete(self, dialogue: LlmDialogue, params: CompletionParams) -> str:
        stage = dialogue.stage_tag
        first = next(c for r, c in dialogue.messages if r == "user")
        if stage == "analysis":
            return self._analysis(first)
        if stage in ("generation", "debug"):
            rounds = sum(1 for r, _ in dialogue.messages if r == "assistant")
            return self._generation(first, rounds)
        if stage == "mutation":
            return self._mutation(dialogue.last_user)
        raise LlmError(f"rule backend: unsupported stage {stage!r}")

    # analysis ---------------------------------------------------------------

    def _analysis(self, prompt: str) -> str:
        fence = _FENCE.search(prompt)
        if not fence:
            raise LlmError("rule backend: no code block in analysis prompt")
        block = fence.group(1)
        header = block.split("{", 1)[0]
        _, params, _, _ = parse_header(header, header)
        types = {p.name: native_to_base(p.declared_type) for p in params}
        names = [p.name for p in params]
        listing = re.search(r"numbered in order:\n(.*?)\n\n", prompt, re.S)
        checks = re.findall(r"^(\d+)\. (.*)$", listing.group(1), re.M) if listing else []
        entries = []
        for num, text in checks:
            entry = self._analyze_check(_condition(text), text, names, types)
            if entry:
                entry = {"check": int(num), **entry}
                entries.append(entry)
        return json.dumps(entries, indent=1)

    def _analyze_check(self, cond: str, text: str, names: list[str], types: dict) -> dict | None:
        def label(name: str) -> str:
            return f"{types[name].value} {name}"

        for part in _conjuncts(cond):
            for regex, template in self.rules._analysis:
                m = regex.match(part)
                if not m:
                    continue
                groups = m.groupdict()
                used = [groups[g] for g in ("a", "b") if groups.get(g)]
                if not used or any(u not in names or types.get(u) is None for u in used):
                    continue
                subs = {"A": label(used[0]), "B": label(used[1]) if len(used) > 1 else ""}
                subs.update({k: v for k, v in groups.items() if k not in ("a", "b") and v is not None})
                if "op" in subs:
                    subs["op"] = _NEG_OP[subs["op"]]
                desc = template
                for key, val in subs.items():
                    desc = desc.replace("{" + key + "}", val)
                return {"variables": [{"name": u, "type": types[u].value} for u in used], "edge_case": desc}
        used = _mentions(cond, names) or _mentions(text, names)
        if not used or any(types.get(n) is None for n in used):
            return None  # no typed parameter to talk about
        subject = " and ".join(label(n) for n in used)
        verb = "violates" if len(used) == 1 else "violate"
        return {"variables": [{"name": n, "type": types[n].value} for n in used],
                "edge_case": f"{subject} {verb} the condition: {cond}"}

    # generation ---------------------------------------------------------------

    def _candidates(self, api: str, name: str, btype: BaseType) -> list[str]:
        for key in (f"{api}.{name}", name):
            if key in self.rules.param_values:
                return self.rules.param_values[key]
        return self.rules.values[btype.value]

    def program(self, api: str, params: list[tuple[str, BaseType]], round_idx: int = 0) -> str:
        lines = [self.rules.prelude, ""]
        for name, btype in params:
            cands = self._candidates(api, name, btype)
            lines.append(f"{_var(name)} = {cands[min(round_idx, len(cands) - 1)]}")
        # keyword-named parameters cannot be passed by name; pass positionally up to the last one
        cut = max((i + 1 for i, (n, _) in enumerate(params) if keyword.iskeyword(n)), default=0)
        args = ", ".join([_var(n) for n, _ in params[:cut]] + [f"{n}={_var(n)}" for n, _ in params[cut:]])
        lines.append(f"result = {api}({args})")
        lines.append(self.rules.result_stmt)
        return "\n".join(lines) + "\n"

    def _generation(self, prompt: str, round_idx: int) -> str:
        api, params = parse_api_definition(prompt)
        return "```python\n" + self.program(api, params, round_idx) + "```"

    # mutation -----------------------------------------------------------------

    def _mutation(self, prompt: str) -> str:
        api, params = parse_api_definition(prompt)
        types = dict(params)
        fence = _FENCE.search(prompt)
        source = fence.group(1) + "\n" if fence else self.program(api, params)
        m = re.search(r"^Edge case: (.*)$", prompt, re.M)
        sentence = m.group(1) if m else ""
        targets = [n for n in re.findall(r"'(\w+)'", sentence) if n in types]
        targets = list(dict.fromkeys(targets))
        if not targets:
            return "```python\n" + source + "```"
        for regex, rule in self.rules._mutation:
            hit = regex.search(sentence)
            if not hit:
                continue
            allowed = rule.get("types")
            if allowed and types[targets[0]].value not in allowed:
                continue
            exprs = rule["exprs"]
            for name, expr in zip(targets, exprs):
                for gname, gval in hit.groupdict().items():
                    expr = expr.replace("{" + gname + "}", gval or "")
                source = _assign(source, name, expr)
            break
        return "```python\n" + source + "```"


def _assign(source: str, name: str, expr: str) -> str:
    var = _var(name)
    pattern = re.compile(r"^(\s*)" + re.escape(var) + r"\s*=\s*(.*)$", re.M)
    m = pattern.search(source)
    if not m:
        return source
    new = expr.replace("{orig}", m.group(2))
    return source[: m.start()] + f"{m.group(1)}{var} = {new}" + source[m.end():]
