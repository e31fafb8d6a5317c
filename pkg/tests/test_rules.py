import json

import pytest

from edgefuzz.analyzer import analyze_block, build_analysis_prompt
from edgefuzz.catalog import ApiSignature
from edgefuzz.llm import CompletionParams, LlmDialogue, LlmError, LlmGateway
from edgefuzz.rules import RuleBackend, RuleSet, parse_api_definition
from edgefuzz.synthesizer import build_generation_prompt
from edgefuzz.types import BaseType

from conftest import TARGET


def analysis_of(block):
    return json.loads(RuleBackend().complete(build_analysis_prompt(block), CompletionParams()))


def test_analysis_of_abs(blocks_by_function):
    assert analysis_of(blocks_by_function["at::native::abs_"]) == [
        {"check": 1, "variables": [{"name": "self", "type": "Tensor"}], "edge_case": "Tensor self is a complex tensor"}]


def test_analysis_negates_comparisons(blocks_by_function):
    (entry,) = analysis_of(blocks_by_function["at::native::polygamma"])
    assert entry["edge_case"] == "Int n is negative"
    (entry,) = analysis_of(blocks_by_function["at::native::diag_embed"])
    assert entry["edge_case"] == "Int dim1 is equal to Int dim2"


def test_analysis_fallback_names_condition(blocks_by_function):
    entries = analysis_of(blocks_by_function["at::native::narrow"])
    assert all(e["variables"] for e in entries)
    assert any("violate" in e["edge_case"] for e in entries)


def test_analysis_output_parses_for_every_fixture_block(fixture_blocks):
    gw = LlmGateway(RuleBackend())
    total = sum(len(analyze_block(b, gw)) for b in fixture_blocks)
    assert total >= 60


def test_parse_api_definition():
    prompt = build_generation_prompt(ApiSignature.build("m.narrow", [("input", "Tensor"), ("dim", "Int", True)])).last_user
    assert parse_api_definition(prompt) == ("m.narrow", [("input", BaseType.TENSOR), ("dim", BaseType.INT)])
    with pytest.raises(LlmError):
        parse_api_definition("no definition here")


def test_generation_steps_through_candidates():
    api = ApiSignature.build("toytensor.sum", [("input", "Tensor"), ("dim", "Int")])
    backend = RuleBackend(RuleSet(module="toytensor"))
    d = build_generation_prompt(api)
    first = backend.complete(d, CompletionParams())
    assert "import toytensor" in first and "dim = 1" in first
    assert "result = toytensor.sum(input=input, dim=dim)" in first
    d.assistant(first).user("error\nRegenerate")
    d.stage_tag = "debug"
    assert "dim = 0" in backend.complete(d, CompletionParams())


def test_param_values_override():
    api = ApiSignature.build("toytensor.sum", [("input", "Tensor"), ("dim", "Int")])
    backend = RuleBackend(RuleSet(module="toytensor", param_values={"toytensor.sum.dim": ["7"]}))
    assert "dim = 7" in backend.program(api.name, [("input", BaseType.TENSOR), ("dim", BaseType.INT)])


def test_keyword_parameter_names_are_renamed():
    prog = RuleBackend().program("m.f", [("lambda", BaseType.FLOAT)])
    compile(prog, "<rule>", "exec")
    assert "result = m.f(lambda_)" in prog


def mutation_prompt(sentence, source):
    text = (f"The following program tests the API `m.f`.\n\nAPI definition:\nm.f(input: Tensor, dim: Int)\n\n"
            f"Program:\n```\n{source}```\n\nEdge case: {sentence}\n\nModify the program.")
    return LlmDialogue("mutation").user(text)


def test_mutation_rewrites_named_parameter():
    backend = RuleBackend()
    src = "import mocktorch\n\ninput = mocktorch.tensor([1.0])\ndim = 1\nresult = m.f(input=input, dim=dim)\n"
    out = backend.complete(mutation_prompt("'dim' is negative", src), CompletionParams())
    assert "dim = -1" in out and "input = mocktorch.tensor([1.0])" in out
    out = backend.complete(mutation_prompt("'input' is a complex tensor", src), CompletionParams())
    assert "1+1j" in out and "dim = 1" in out


def test_mutation_without_rule_returns_base():
    src = "dim = 1\n"
    out = RuleBackend().complete(mutation_prompt("'dim' is peculiar", src), CompletionParams())
    assert out == "```python\ndim = 1\n```"


def test_custom_rules_take_priority():
    rules = RuleSet(mutation_rules=[{"pattern": "negative", "types": ["Int"], "exprs": ["-99"]}])
    out = RuleBackend(rules).complete(mutation_prompt("'dim' is negative", "dim = 1\n"), CompletionParams())
    assert "dim = -99" in out


def test_ruleset_load(tmp_path):
    rules = RuleSet.load(TARGET / "rules.json")
    assert rules.module == "toytensor" and rules.prelude == "import toytensor"
    (tmp_path / "bad.json").write_text('{"modules": "x"}')
    with pytest.raises(ValueError):
        RuleSet.load(tmp_path / "bad.json")
