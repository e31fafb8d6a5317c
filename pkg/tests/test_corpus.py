import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from edgefuzz.analyzer import ContextEdgeCase, analyze_blocks
from edgefuzz.catalog import ApiSignature, etype_of
from edgefuzz.corpus import (
    SLOT, ContextFreeEdgeCase, EdgeCaseCorpus, StandardizationError, as_context_case, build_corpus, concretize,
    leaked_names, match, render, standardize, standardize_all, standardize_text,
)
from edgefuzz.llm import LlmGateway, ReplayBackend
from edgefuzz.miner import CheckSite
from edgefuzz.rules import RuleBackend
from edgefuzz.types import BASE_TYPES, BaseType, EtypePattern

from conftest import FIXTURES
from oracles import brute_force_subset, expected_matches, random_instance

SITE = CheckSite("a.cpp", 3, "TORCH_CHECK", "", "at::native::f")


def ctx(description, variables, params=None):
    variables = tuple((n, BaseType(t)) for n, t in variables)
    return ContextEdgeCase(SITE, variables, description, "Other", tuple(params or [n for n, _ in variables]))


@pytest.fixture(scope="module")
def fixture_corpus(fixture_blocks, blocks_by_function):
    cases = analyze_blocks(fixture_blocks, LlmGateway(RuleBackend())).cases
    labeled = json.loads((FIXTURES / "analysis" / "labeled_blocks.json").read_text())
    replay = analyze_blocks([blocks_by_function[e["function"]] for e in labeled], LlmGateway(
        ReplayBackend.from_file(FIXTURES / "analysis" / "replay.jsonl"))).cases
    return cases + replay, standardize_all(cases + replay)


def test_standardize_paper_example():
    cf = standardize(ctx("Tensor self is a complex tensor", [("self", "Tensor")]))
    assert cf.template == "'Tensor_1' is a complex tensor"
    assert cf.kind == "individual" and cf.pattern.key() == "Tensor:1"
    assert render(cf) == "'Tensor' is a complex tensor"


def test_standardize_compound_indexes_per_type():
    cf = standardize(ctx("Tensor input and Tensor other have different dtypes and Int dim is negative",
                         [("input", "Tensor"), ("other", "Tensor"), ("dim", "Int")]))
    assert cf.template == "'Tensor_1' and 'Tensor_2' have different dtypes and 'Int_1' is negative"
    assert cf.pattern.key() == "Int:1|Tensor:2" and cf.kind == "compound"


def test_member_access_is_not_a_mention():
    cf = standardize(ctx("Int dim is at least x.dim()", [("dim", "Int")], ["dim"]))
    assert cf.template == "'Int_1' is at least x.dim()"


def test_unlisted_parameter_is_rejected():
    with pytest.raises(StandardizationError):
        standardize(ctx("Tensor self is larger than Tensor other", [("self", "Tensor")], ["self", "other"]))


def test_no_variable_named():
    with pytest.raises(StandardizationError):
        standardize(ctx("the input is bad", [("self", "Tensor")]))


def test_leaked_names():
    assert leaked_names("'Int_1' exceeds dim", ["dim"]) == ["dim"]
    assert leaked_names("'Int_1' exceeds x.dim()", ["dim"]) == []
    assert leaked_names("'Int_1' exceeds ns::dim", ["dim"]) == []


def test_fixture_corpus_hygiene(fixture_corpus):
    cases, corpus = fixture_corpus
    params_of = {c.function: c.params for c in cases}
    assert len(corpus) > 0
    for rec in corpus.records():
        for prov in rec.provenance:
            assert leaked_names(rec.template, params_of[prov.function]) == []
        assert rec.pattern.size == len(rec.slots())
        assert rec.kind == ("individual" if rec.pattern.size == 1 else "compound")
        assert rec.id not in {r.id for r in corpus.records() if r is not rec}


def test_round_trip_is_byte_identical(fixture_corpus, tmp_path):
    _, corpus = fixture_corpus
    text = corpus.to_jsonl()
    assert EdgeCaseCorpus.from_jsonl(text).to_jsonl() == text
    corpus.save(tmp_path / "c.jsonl")
    assert (tmp_path / "c.jsonl").read_bytes() == text.encode("utf-8")
    assert EdgeCaseCorpus.load(tmp_path / "c.jsonl").to_jsonl() == text


def test_standardize_is_idempotent(fixture_corpus):
    _, corpus = fixture_corpus
    for rec in corpus.records():
        again = standardize(as_context_case(rec))
        assert (again.template, again.pattern, again.id) == (rec.template, rec.pattern, rec.id)


def test_duplicates_merge_provenance():
    a = standardize(ctx("Tensor self is empty", [("self", "Tensor")]))
    other = ContextEdgeCase(CheckSite("b.cpp", 9, "AT_CHECK", "", "at::native::g"), (("input", BaseType.TENSOR),),
                            "Tensor input is empty.", "Other", ("input",))
    b = standardize(other)
    corpus = build_corpus([b, a])
    (rec,) = corpus.records()
    assert len(rec.provenance) == 2
    assert build_corpus([a, b]).to_jsonl() == corpus.to_jsonl()


def test_standardize_all_drops_with_warning():
    warnings = []
    corpus = standardize_all([ctx("Tensor self is empty", [("self", "Tensor")]),
                              ctx("nothing here", [("self", "Tensor")])], warnings)
    assert len(corpus) == 1 and len(warnings) == 1


def test_match_against_brute_force_small():
    rng = random.Random(5)
    for _ in range(200):
        corpus, raw, api_types, api = random_instance(rng)
        assert sorted(r.id for r in match(etype_of(api), corpus)) == expected_matches(raw, api_types)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(BASE_TYPES), min_size=1, max_size=5),
       st.lists(st.sampled_from(BASE_TYPES), max_size=7))
def test_issubset_equals_brute_force(pattern, api_types):
    assert EtypePattern.of(pattern).issubset(EtypePattern.of(api_types)) == brute_force_subset(pattern, api_types)


def test_empty_api_matches_nothing():
    corpus, _, _, _ = random_instance(random.Random(1))
    assert match(EtypePattern(), corpus) == []


def cf_from(description, variables):
    return standardize(ctx(description, variables))


def test_concretize_individual_binds_each_compatible_param():
    api = ApiSignature.build("m.narrow", [("input", "Tensor"), ("dim", "Int"), ("start", "Int"), ("length", "Int")])
    cf = cf_from("Int n is negative", [("n", "Int")])
    insts = concretize(cf, api)
    assert [i.text for i in insts] == ["'dim' is negative", "'start' is negative", "'length' is negative"]
    assert [i.positions for i in insts] == [(2,), (3,), (4,)]
    assert all(not SLOT.search(i.text) for i in insts)


def test_concretize_compound_binds_in_order():
    api = ApiSignature.build("m.add", [("input", "Tensor"), ("other", "Tensor"), ("alpha", "Scalar")])
    cf = cf_from("Tensor a and Tensor b have different dtypes", [("a", "Tensor"), ("b", "Tensor")])
    (inst,) = concretize(cf, api)
    assert inst.text == "'input' and 'other' have different dtypes"
    assert inst.binding == (("Tensor_1", "input"), ("Tensor_2", "other"))
    assert inst.positions == (1, 2)


def test_concretize_incompatible_is_empty():
    api = ApiSignature.build("m.abs", [("self", "Tensor")])
    assert concretize(cf_from("Int n is negative", [("n", "Int")]), api) == []


def test_record_dict_round_trip():
    cf = cf_from("Tensor self is empty", [("self", "Tensor")])
    assert ContextFreeEdgeCase.from_dict(json.loads(json.dumps(cf.to_dict()))) == cf
