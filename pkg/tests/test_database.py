"""Database parsing, frames, scoping and proof decompression."""

import pytest

from mmprover.database import (
    AXIOM,
    ESSENTIAL_HYP,
    FLOATING_HYP,
    PROPOSITION,
    MMError,
    decompress_proof,
    parse_database,
)
from tests.conftest import ID_RPN, TOY_DB


def test_statement_kinds(toy_db):
    assert toy_db["wph"].kind == FLOATING_HYP
    assert toy_db["min"].kind == ESSENTIAL_HYP
    assert toy_db["ax-mp"].kind == AXIOM
    assert toy_db["mp2"].kind == PROPOSITION
    assert toy_db["ax-mp"].is_assertion
    assert not toy_db["min"].is_assertion


def test_provable_typecode_detection(toy_db):
    assert toy_db.provable_typecode == "|-"


def test_bodies_and_typecodes(toy_db):
    st = toy_db["ax-1"]
    assert st.typecode == "|-"
    assert st.body == tuple("|- ( ph -> ( ps -> ph ) )".split())


def test_frame_order_is_database_order(toy_db):
    fr = toy_db["ax-mp"].frame
    assert [h[1] for h in fr.hypotheses] == ["wph", "wps", "min", "maj"]
    assert [(kind, tuple(body)) for kind, _, body in fr.hypotheses] == [
        ("f", ("wff", "ph")),
        ("f", ("wff", "ps")),
        ("e", ("|-", "ph")),
        ("e", tuple(["|-"] + "( ph -> ps )".split())),
    ]


def test_frame_mandatory_variables_only(toy_db):
    # mp2b uses ph ps ch; all three are mandatory
    fr = toy_db["mp2b"].frame
    assert [v for v, _, _ in fr.float_vars] == ["ph", "ps", "ch"]
    # ax-mp only mentions ph and ps
    fr = toy_db["ax-mp"].frame
    assert [v for v, _, _ in fr.float_vars] == ["ph", "ps"]


def test_frame_disjoint_restricted_to_mandatory(toy_db):
    fr = toy_db["axdv"].frame
    assert fr.dvs == frozenset({("ph", "ps")})
    assert toy_db["ax-mp"].frame.dvs == frozenset()


def test_scope_essentials_do_not_leak(toy_db):
    # id comes after the mp2 block; its frame must not include mp2's hyps
    assert toy_db["id"].frame.hypotheses == [
        ("f", "wph", ("wff", "ph"))
    ]


def test_proposition_active_context(toy_db):
    st = toy_db["mp2"]
    assert st.active_floats["ch"] == ("wff", "wch")
    assert ("ph", "ps") not in st.active_dvs


def test_normal_proof_passthrough(toy_db):
    assert decompress_proof(toy_db["mp2"], toy_db) == list(
        "wps wch mp2.2 wph wps wch wi mp2.1 mp2.3 ax-mp ax-mp".split()
    )
    assert decompress_proof(toy_db["wnn"], toy_db) == ["wph", "wn", "wn"]


def test_compressed_proof_simple(toy_db):
    assert decompress_proof(toy_db["mp2b"], toy_db) == list(
        "wps wch wph wps mp2b.1 mp2b.2 ax-mp mp2b.3 ax-mp".split()
    )


def test_compressed_proof_with_z_tags(toy_db):
    assert decompress_proof(toy_db["id"], toy_db) == ID_RPN


@pytest.mark.parametrize(
    "mangle,message",
    [
        (lambda s: s.replace("$c ( )", "$c ( ( )"), "already"),
        (lambda s: s.replace("wps $f wff ps $.", "wps $f wff ps xx $."), "exactly"),
        (lambda s: s.replace("$v ph ps ch $.", "$v ph ps $."), "ch"),
        (lambda s: s + "\n${", "unclosed"),
        (lambda s: s + "\n$}", "unmatched"),
        (lambda s: s + "\nax-1 $a |- ph $.", "duplicate"),
        (lambda s: s + "\nbad $a |- zz $.", "zz"),
        (lambda s: s + "\n$d ph ph $.", "repeats"),
        (lambda s: s + "\nbad $e |- ph", "end of file"),
        (lambda s: s + "\norphan", "orphan"),
        (lambda s: s.replace("$( Toy", "$( Toy $( nested", 1), "comment"),
        (lambda s: s + "\n$[ other.mm $]", "inclusion"),
        (lambda s: s + "\nnoproof $p |- ph $.", "$="),
    ],
)
def test_parse_errors(mangle, message):
    with pytest.raises(MMError) as exc:
        parse_database(mangle(TOY_DB))
    assert message in str(exc.value).lower()


def test_variable_without_float_rejected_in_assertion():
    bad = TOY_DB.replace("wch $f wff ch $.", "")
    with pytest.raises(MMError):
        parse_database(bad)


def test_compressed_proof_bad_reference():
    # reference index far beyond hypotheses + labels
    src = TOY_DB.replace("( ax-mp ) BCABDEGFG", "( ax-mp ) BCABDEGFT")
    db = parse_database(src)
    with pytest.raises(MMError):
        decompress_proof(db["mp2b"], db)


def test_incomplete_proof_rejected():
    src = TOY_DB.replace("( ax-mp ) BCABDEGFG", "( ax-mp ) BCABDEGF?")
    db = parse_database(src)
    with pytest.raises(MMError) as exc:
        decompress_proof(db["mp2b"], db)
    assert "incomplete" in str(exc.value).lower()


def test_db_position_ordering(toy_db):
    labels = [st.label for st in toy_db.statements if st.is_assertion]
    assert labels.index("ax-mp") < labels.index("mp2") < labels.index("mp2b")
    positions = [toy_db[l].pos for l in labels]
    assert positions == sorted(positions)


def test_assertion_listing(toy_db):
    provable = {st.label for st in toy_db.provable_assertions()}
    assert {"ax-mp", "ax-1", "mp2", "id", "axdv"} <= provable
    assert "wi" not in provable
    assert "wnn" not in provable
    props = [st.label for st in toy_db.propositions()]
    assert props == ["mp2", "mp2b", "wnn", "id"]
