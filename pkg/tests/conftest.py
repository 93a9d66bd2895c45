"""Shared fixtures: a small propositional database exercising every feature."""

import random

import pytest

from mmprover.database import parse_database
from mmprover.grammar import build_grammar, build_vocabulary

# A compact propositional calculus database.  Covers: comments, nested
# scoping, essential hypotheses, disjoint variable declarations, a normal and
# a compressed proof, a syntax (non |-) proposition, and a constructor whose
# body uses variables in a different order than their declarations.
TOY_DB = """
$( Toy propositional database for the test suite. $)
$c ( ) -> -. [ ] wff |- $.
$v ph ps ch $.
wph $f wff ph $.
wps $f wff ps $.
wch $f wff ch $.
wn $a wff -. ph $.
wi $a wff ( ph -> ps ) $.
wrev $a wff [ ps -> ph ] $.
${
  min $e |- ph $.
  maj $e |- ( ph -> ps ) $.
  ax-mp $a |- ps $.
$}
ax-1 $a |- ( ph -> ( ps -> ph ) ) $.
ax-2 $a |- ( ( ph -> ( ps -> ch ) ) -> ( ( ph -> ps ) -> ( ph -> ch ) ) ) $.
ax-3 $a |- ( ( -. ph -> -. ps ) -> ( ps -> ph ) ) $.
${
  $d ph ps $.
  axdv.1 $e |- ph $.
  axdv $a |- ( ps -> ph ) $.
$}
${
  mp2.1 $e |- ph $.
  mp2.2 $e |- ps $.
  mp2.3 $e |- ( ph -> ( ps -> ch ) ) $.
  mp2 $p |- ch $= wps wch mp2.2 wph wps wch wi mp2.1 mp2.3 ax-mp ax-mp $.
$}
${
  mp2b.1 $e |- ph $.
  mp2b.2 $e |- ( ph -> ps ) $.
  mp2b.3 $e |- ( ps -> ch ) $.
  mp2b $p |- ch $= ( ax-mp ) BCABDEGFG $.
$}
wnn $p wff -. -. ph $= wph wn wn $.
id $p |- ( ph -> ph ) $= ( wi ax-1 ax-2 ax-mp ) AAABZBZFAACAFABBGFBAFCAFADEE $.
"""

# The normal-form expansion of id's compressed proof, derived by hand.
ID_RPN = (
    "wph wph wph wi wi "  # wff ( ph -> ( ph -> ph ) )
    "wph wph wi "  # wff ( ph -> ph )
    "wph wph ax-1 "  # |- ( ph -> ( ph -> ph ) )
    "wph wph wph wi wph wi wi "  # wff ( ph -> ( ( ph -> ph ) -> ph ) )
    "wph wph wph wi wi wph wph wi wi "  # wff ( ( ph -> ( ph -> ph ) ) -> ( ph -> ph ) )
    "wph wph wph wi ax-1 "  # |- ( ph -> ( ( ph -> ph ) -> ph ) )
    "wph wph wph wi wph ax-2 "  # |- ( ( ph -> ( ( ph -> ph ) -> ph ) ) -> ... )
    "ax-mp ax-mp"
).split()


@pytest.fixture(scope="session")
def toy_source():
    return TOY_DB


@pytest.fixture(scope="session")
def toy_db():
    return parse_database(TOY_DB)


@pytest.fixture(scope="session")
def toy_grammar(toy_db):
    return build_grammar(toy_db)


@pytest.fixture(scope="session")
def toy_vocab(toy_db, toy_grammar):
    return build_vocabulary(toy_db, toy_grammar)


@pytest.fixture()
def rng():
    return random.Random(20260814)
