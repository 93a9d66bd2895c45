"""Grammar construction, parsing, rendering and tokenization."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmprover.database import MMError, parse_database
from mmprover.grammar import (
    EOH,
    EOS,
    AmbiguousParseError,
    NoParseError,
    build_grammar,
    build_vocabulary,
    make_renaming,
    parse_expression,
    render,
    tokenize,
    tree_from_tokens,
    var_node,
)
from tests.conftest import TOY_DB
from tests.helpers import random_tree

WFF_VARS = {"ph": "wff", "ps": "wff", "ch": "wff"}


def test_productions_from_syntax_axioms(toy_grammar):
    assert set(toy_grammar.by_label) == {"wn", "wi", "wrev"}
    assert [p.label for p in toy_grammar.productions["wff"]] == ["wn", "wi", "wrev"]
    # |- axioms are not productions
    assert "ax-1" not in toy_grammar.by_label


def test_parse_simple(toy_grammar):
    t = parse_expression("wff ( ph -> ps )".split(), toy_grammar, WFF_VARS)
    assert t.label == "wi" and not t.is_var
    assert [c.label for c in t.children] == ["ph", "ps"]
    assert all(c.is_var for c in t.children)


def test_parse_bare_variable(toy_grammar):
    t = parse_expression(["wff", "ch"], toy_grammar, WFF_VARS)
    assert t.is_var and t.label == "ch" and t.typecode == "wff"


def test_parse_nested(toy_grammar):
    syms = "wff ( -. ph -> ( ps -> -. -. ch ) )".split()
    t = parse_expression(syms, toy_grammar, WFF_VARS)
    assert t.label == "wi"
    assert t.children[0].label == "wn"
    assert t.children[1].children[1].label == "wn"
    assert render(t, toy_grammar) == tuple(syms)


def test_parse_respects_context_variables(toy_grammar):
    with pytest.raises(NoParseError):
        parse_expression(["wff", "ch"], toy_grammar, {"ph": "wff"})


def test_parse_failures(toy_grammar):
    for bad in ["wff ( ph ->", "wff ph ps", "wff ( ph , ps )", "|- ( ph -> ps )"]:
        with pytest.raises(MMError):
            parse_expression(bad.split(), toy_grammar, WFF_VARS)


def test_body_order_children_with_permuted_floats(toy_grammar):
    # wrev's body is "[ ps -> ph ]": children come in body order ps, ph
    t = parse_expression("wff [ ch -> ph ]".split(), toy_grammar, WFF_VARS)
    assert t.label == "wrev"
    assert [c.label for c in t.children] == ["ch", "ph"]
    prod = toy_grammar.by_label["wrev"]
    # frame floats are declaration-ordered ph, ps -> slots 1, 0
    assert prod.float_to_slot == (1, 0)
    assert render(t, toy_grammar) == tuple("wff [ ch -> ph ]".split())


def test_ambiguity_is_hard_error():
    src = TOY_DB.replace(
        "wrev $a wff [ ps -> ph ] $.",
        "wrev $a wff [ ps -> ph ] $.\nwamb $a wff ( ph -> ps ) $.",
    )
    db = parse_database(src)
    g = build_grammar(db)
    with pytest.raises(AmbiguousParseError):
        g.parse("wff ( ph -> ps )".split(), WFF_VARS)
    # unambiguous strings still parse fine
    assert g.parse(["wff", "-.", "ph"], WFF_VARS).label == "wn"


def test_unit_cycle_rejected():
    src = """
$c wff qq |- $.
$v ph qv $.
wph $f wff ph $.
wqv $f qq qv $.
q1 $a wff qv $.
q2 $a qq ph $.
tru $a |- ph $.
"""
    db = parse_database(src)
    with pytest.raises(MMError) as exc:
        build_grammar(db)
    assert "cycle" in str(exc.value)


def test_parse_cache_hits(toy_grammar):
    syms = tuple("wff ( ph -> ps )".split())
    a = toy_grammar.parse(syms, WFF_VARS)
    b = toy_grammar.parse(syms, dict(WFF_VARS))
    assert a is b  # cached object


def test_round_trip_random_trees(toy_grammar, rng):
    for _ in range(300):
        t = random_tree(toy_grammar, "wff", rng, WFF_VARS, budget=30)
        syms = render(t, toy_grammar)
        assert syms[0] == "wff"
        back = parse_expression(syms, toy_grammar, WFF_VARS)
        assert back == t


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), budget=st.integers(1, 60))
def test_round_trip_property(toy_grammar, seed, budget):
    r = random.Random(seed)
    t = random_tree(toy_grammar, "wff", r, WFF_VARS, budget=budget)
    assert parse_expression(render(t, toy_grammar), toy_grammar, WFF_VARS) == t


def test_minimal_tree(toy_grammar):
    t = toy_grammar.minimal_tree("wff", WFF_VARS)
    assert t.is_var  # a bare variable is smallest
    t2 = toy_grammar.minimal_tree("wff", {})
    assert t2 is None  # no variables, no constant-only constructors


# -- vocabulary and tokenization ---------------------------------------------


def test_vocabulary_layout(toy_vocab):
    # constructors first, then dummies, then specials; ids are line numbers
    assert toy_vocab.tokens[:3] == ("wn", "wi", "wrev")
    assert toy_vocab.kinds[toy_vocab.index["wff#0"]] == "dummy"
    for name in (EOH, EOS, "START", "UV", "TARGET"):
        assert toy_vocab.kinds[toy_vocab.special(name)] == "special"
    lines = toy_vocab.serialize().splitlines()
    assert [lines[i] for i in range(len(toy_vocab))] == list(toy_vocab.tokens)


def test_vocabulary_dummy_counts(toy_vocab):
    # mp2 needs three wff variables, the toy maximum
    assert len(toy_vocab.dummies["wff"]) == 3


def test_vocabulary_hash_changes_with_content(toy_db, toy_grammar):
    v1 = build_vocabulary(toy_db, toy_grammar)
    assert v1.sha256() == build_vocabulary(toy_db, toy_grammar).sha256()
    meta = v1.metadata()
    assert meta["hash"] == v1.sha256()
    assert meta["tokens"][v1.index["wi"]]["arity"] == 2


def test_tokenize_single_tree(toy_grammar, toy_vocab):
    t = toy_grammar.parse("wff ( ph -> -. ps )".split(), WFF_VARS)
    ren = {"ph": toy_vocab.index["wff#0"], "ps": toy_vocab.index["wff#1"]}
    seq = tokenize([[t]], ren, toy_vocab)
    names = [toy_vocab.tokens[i] for i in seq.tokens]
    assert names == ["wi", "wff#0", "wn", "wff#1"]
    # features: (depth, degree, parent degree, position in parent)
    assert seq.features == [(0, 2, 0, 0), (1, 0, 2, 0), (1, 1, 2, 1), (2, 0, 1, 0)]


def test_tokenize_groups_and_separators(toy_grammar, toy_vocab):
    a = var_node("ph", "wff")
    b = var_node("ps", "wff")
    ren = {"ph": toy_vocab.index["wff#0"], "ps": toy_vocab.index["wff#1"]}
    seq = tokenize([[a, b], [a]], ren, toy_vocab)
    names = [toy_vocab.tokens[i] for i in seq.tokens]
    assert names == ["wff#0", EOH, "wff#1", EOS, "wff#0"]
    assert seq.features[1] == (0, 0, 0, 0)
    assert seq.features[3] == (0, 0, 0, 0)
    # no trailing separator
    assert names[-1] != EOS and names[-1] != EOH


def test_tokenize_missing_and_colliding_renamings(toy_grammar, toy_vocab):
    t = toy_grammar.parse("wff ( ph -> ps )".split(), WFF_VARS)
    with pytest.raises(MMError):
        tokenize([[t]], {"ph": toy_vocab.index["wff#0"]}, toy_vocab)
    with pytest.raises(MMError):
        tokenize(
            [[t]],
            {"ph": toy_vocab.index["wff#0"], "ps": toy_vocab.index["wff#0"]},
            toy_vocab,
        )


def test_make_renaming_random_and_canonical(toy_vocab, rng):
    vars_ = {"ph": "wff", "ps": "wff"}
    ren = make_renaming(vars_, toy_vocab, rng)
    assert len(set(ren.values())) == 2
    canon = make_renaming(vars_, toy_vocab, None)
    assert [toy_vocab.tokens[canon[v]] for v in ("ph", "ps")] == ["wff#0", "wff#1"]
    with pytest.raises(MMError):
        make_renaming(
            {"a": "wff", "b": "wff", "c": "wff", "d": "wff"}, toy_vocab, rng
        )


def test_tree_from_tokens_round_trip(toy_grammar, toy_vocab, rng):
    ren_syms = {"ph": "wff#0", "ps": "wff#1", "ch": "wff#2"}
    ren = {v: toy_vocab.index[d] for v, d in ren_syms.items()}
    for _ in range(100):
        t = random_tree(toy_grammar, "wff", rng, WFF_VARS, budget=25)
        seq = tokenize([[t]], ren, toy_vocab)
        back, end = tree_from_tokens(seq.tokens, toy_vocab)
        assert end == len(seq.tokens)
        # variables come back named after their dummy tokens
        rename_back = {ren_syms[v]: v for v in ren_syms}
        def undummy(node):
            if node.is_var:
                return var_node(rename_back[node.label], node.typecode)
            return toy_grammar.node(node.label, [undummy(c) for c in node.children])
        assert undummy(back) == t
