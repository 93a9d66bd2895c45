"""Acceptance gate: one test per release criterion, run on the pinned corpus.

Each test prints a single summary line so a verbose run reads as a
checklist.  The suite needs only the built-in baseline and oracle guidance
models; no trained model or network service is involved.
"""

import itertools
import json
import math
import random
import sys
import time
from pathlib import Path

import pytest

from mmprover.database import decompress_proof, parse_database
from mmprover.dataset import DatasetConfig, extract_datasets, extract_steps, split_propositions
from mmprover.grammar import ParseTree, build_grammar, build_vocabulary, parse_expression, render, var_node
from mmprover.guidance import BaselineGuidance, oracle_from_proofs
from mmprover.search import Search, SearchParams, priority, prove
from mmprover.unify import (
    TheoremIndex,
    apply_substitution,
    check_disjoint,
    make_context,
    match_assertion,
    viable_theorems,
)
from mmprover.verifier import (
    ProofTree,
    emit_rpn,
    prune,
    tree_from_rpn,
    verify_database,
    verify_rpn_proof,
)
from tests.helpers import random_tree

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "scripts"))
sys.path.insert(0, str(ROOT / "tests"))

from make_fixture import DEFAULT_SEED, build_fixture  # noqa: E402
from oracles.independent_verifier import verify_database_text  # noqa: E402

CORPUS = ROOT / "fixtures" / "fixture.mm"
CORPUS_VARS = {"ph": "wff", "ps": "wff", "ch": "wff", "th": "wff", "ta": "wff"}


def _report(line: str) -> None:
    print(f"\n[PRIMARY] {line}", flush=True)


@pytest.fixture(scope="module")
def corpus_text():
    return CORPUS.read_text(encoding="utf-8")


@pytest.fixture(scope="module")
def corpus_db(corpus_text):
    return parse_database(corpus_text)


@pytest.fixture(scope="module")
def corpus_grammar(corpus_db):
    return build_grammar(corpus_db)


@pytest.fixture(scope="module")
def corpus_index(corpus_db, corpus_grammar):
    return TheoremIndex(corpus_db, corpus_grammar)


@pytest.fixture(scope="module")
def corpus_oracle(corpus_db, corpus_grammar, corpus_index):
    return oracle_from_proofs(corpus_db, corpus_grammar, corpus_index)


# --------------------------------------------------------------------------
# 1. Verifier soundness and independent agreement


def _proof_spans(tokens):
    """(start, end) index pairs of proof token runs between $= and $."""
    spans = []
    i = 0
    while i < len(tokens):
        if tokens[i] == "$=":
            j = tokens.index("$.", i)
            spans.append((i + 1, j))
            i = j
        i += 1
    return spans


def _mutants(text, rng):
    """Databases with one tampered proof each; parsing stays valid."""
    tokens = text.split()
    normal = [s for s in _proof_spans(tokens) if tokens[s[0]] != "(" and s[1] - s[0] >= 3]
    compressed = [s for s in _proof_spans(tokens) if tokens[s[0]] == "("]
    out = []

    def emit(mutated_tokens):
        out.append(" ".join(mutated_tokens))

    for start, end in rng.sample(normal, 4):
        t = tokens[:]
        del t[end - 1]  # drop the final step: conclusion left unfinished
        emit(t)
        t = tokens[:]
        t[start], t[start + 1] = t[start + 1], t[start]  # swap two steps
        emit(t)
        t = tokens[:]
        mid = (start + end) // 2
        t.insert(mid, t[mid])  # duplicate a step
        emit(t)
    for start, end in rng.sample(compressed, 3):
        blob = tokens[end - 1]
        t = tokens[:]
        t[end - 1] = blob[:-1] + ("B" if blob[-1] != "B" else "C")
        emit(t)  # last letter changed
        if len(blob) > 1:
            t = tokens[:]
            t[end - 1] = blob[:-1]
            emit(t)  # truncated letter blob
    return out


def _verdicts(text):
    """label -> passed, or None when the database does not parse."""
    try:
        db = parse_database(text)
        return {label: err is None for label, err in verify_database(db)}
    except Exception:
        return None


def _oracle_verdicts(text):
    try:
        return {label: err is None for label, err in verify_database_text(text)}
    except Exception:
        return None


def test_a1_verifier_soundness_and_independent_agreement(corpus_text):
    start = time.monotonic()
    db = parse_database(corpus_text)
    results = verify_database(db)
    assert len(results) >= 3000
    bad = [(label, err) for label, err in results if err is not None]
    assert not bad, f"kernel rejected {bad[:3]}"

    reference = verify_database_text(corpus_text)
    ref_bad = [(label, err) for label, err in reference if err is not None]
    assert not ref_bad, f"reference verifier rejected {ref_bad[:3]}"
    assert [label for label, _ in results] == [label for label, _ in reference]
    elapsed = time.monotonic() - start
    assert elapsed < 60.0

    # Agreement must survive tampering, not just the happy path: both
    # verifiers must reach identical verdicts on mutated proofs.
    small_text, _ = build_fixture(DEFAULT_SEED + 99, 60)
    assert _verdicts(small_text) == _oracle_verdicts(small_text)
    disagreements = 0
    caught = 0
    mutants = _mutants(small_text, random.Random(7))
    for mutant in mutants:
        mine = _verdicts(mutant)
        ref = _oracle_verdicts(mutant)
        if mine != ref:
            disagreements += 1
        if mine is None or (mine and not all(mine.values())):
            caught += 1
    assert disagreements == 0
    assert caught >= len(mutants) // 2  # the tampering was not a no-op

    _report(
        f"verifier soundness: PASS — {len(results)} propositions verified, "
        f"0 discrepancies with the independent verifier over the corpus and "
        f"{len(mutants)} mutants, {elapsed:.1f}s"
    )


# --------------------------------------------------------------------------
# 2. Grammar round trip


def test_a2_grammar_round_trip(corpus_grammar):
    # Any ambiguity surfaces as AmbiguousParseError and fails the test.
    rng = random.Random(20260814)
    for i in range(10_000):
        budget = rng.choice((2, 4, 8, 15, 25, 40))
        t = random_tree(corpus_grammar, "wff", rng, CORPUS_VARS, budget)
        symbols = render(t, corpus_grammar)
        back = parse_expression(symbols, corpus_grammar, CORPUS_VARS)
        assert back == t, f"round trip failed at trial {i}: {' '.join(symbols)}"
    _report(
        "grammar round trip: PASS — 10000/10000 random expressions, "
        "0 ambiguity reports"
    )


# --------------------------------------------------------------------------
# 3. Unification oracle


def _tree_vars(tree):
    seen = []
    stack = [tree]
    while stack:
        node = stack.pop()
        if node.is_var:
            if node.label not in seen:
                seen.append(node.label)
        else:
            stack.extend(node.children)
    return seen


def _enumerate_trees(grammar, typecode, max_size):
    """All trees over variable 'ph' with at most max_size nodes."""
    by_size = {1: [var_node("ph", typecode)]}
    for size in range(2, max_size + 1):
        bucket = []
        for prod in grammar.productions.get(typecode, ()):
            if prod.arity == 0 or prod.arity > size - 1:
                continue
            if prod.arity == 1:
                bucket.extend(
                    ParseTree(prod.label, typecode, (c,), False)
                    for c in by_size.get(size - 1, ())
                )
            elif prod.arity == 2:
                for left_size in range(1, size - 1):
                    for a in by_size.get(left_size, ()):
                        for b in by_size.get(size - 1 - left_size, ()):
                            bucket.append(
                                ParseTree(prod.label, typecode, (a, b), False)
                            )
        by_size[size] = bucket
    return [t for ts in by_size.values() for t in ts]


def test_a3_unification_oracle(corpus_grammar, corpus_index, toy_grammar, toy_db):
    rng = random.Random(97)
    infos = corpus_index.infos
    for trial in range(1000):
        info = rng.choice(infos)
        sigma = {
            v: random_tree(corpus_grammar, tc, rng, CORPUS_VARS, rng.choice((1, 3, 6, 10)))
            for v, tc in info.float_vars
        }
        target = apply_substitution(info.assertion, sigma)
        recovered = match_assertion(info.assertion, target)
        expected = {v: sigma[v] for v in _tree_vars(info.assertion)}
        assert recovered == expected, f"trial {trial} on {info.label}"

    # Brute force: on every pattern, the recovered substitution is the only
    # one among all small candidate substitutions reaching the target.
    pool = _enumerate_trees(toy_grammar, "wff", 4)
    assert len(pool) == 12
    toy_index = TheoremIndex(toy_db, build_grammar(toy_db))
    patterns = [info.assertion for info in toy_index.infos]
    checked = 0
    for pattern in patterns:
        pvars = _tree_vars(pattern)
        for images in itertools.product(pool, repeat=len(pvars)):
            sigma = dict(zip(pvars, images))
            target = apply_substitution(pattern, sigma)
            solutions = [
                cand
                for cand in itertools.product(pool, repeat=len(pvars))
                if apply_substitution(pattern, dict(zip(pvars, cand))) == target
            ]
            assert solutions == [tuple(images)]
            checked += 1
            if len(pvars) >= 2 and checked % 7:  # full product only sparsely
                break
    _report(
        "unification oracle: PASS — 1000 generate-and-recover trials exact, "
        f"brute force over {len(pool)}-tree pool found no second solution"
    )


# --------------------------------------------------------------------------
# 4. Search-statistic oracle


def _recompute_stats(root):
    """Bottom-up recomputation of every node's (n, x, proven, dead)."""
    stats = {}

    def red(node, created_proven):
        n, x = 1, node.y
        proven = created_proven[id(node)]
        dead_kids = True
        for blue_node in node.children:
            bn, bx, bp, bd = blue(blue_node, created_proven)
            n += bn
            x += bx
            proven = proven or bp
            dead_kids = dead_kids and bd
        dead = (
            not proven
            and node.queue is not None
            and not node.queue
            and dead_kids
        )
        stats[id(node)] = (n, x, proven, dead)
        return n, x, proven, dead

    def blue(node, created_proven):
        n, x = 1, 0.0
        proven = not node.dummy
        dead = node.dummy
        for red_node in node.children:
            rn, rx, rp, rd = red(red_node, created_proven)
            n += rn
            x += rx
            proven = proven and rp
            dead = dead or rd
        stats[id(node)] = (n, x, proven, dead)
        return n, x, proven, dead

    return red, blue, stats


def _all_nodes(root):
    reds, blues = [], []
    stack = [("r", root)]
    while stack:
        kind, node = stack.pop()
        if kind == "r":
            reds.append(node)
            stack.extend(("b", b) for b in node.children)
        else:
            blues.append(node)
            stack.extend(("r", r) for r in node.children)
    return reds, blues


def _least_promising(blue, stats=None):
    chosen, chosen_mean = None, math.inf
    for r in blue.children:
        proven = stats[id(r)][2] if stats else r.proven
        if proven:
            continue
        n, x = (stats[id(r)][0], stats[id(r)][1]) if stats else (r.n, r.x)
        if x / n < chosen_mean:
            chosen, chosen_mean = r, x / n
    return chosen


def test_a4_search_statistic_oracle(toy_source):
    db = parse_database(toy_source + "\nhard $p |- ( ph -> ps ) $= ? $.\n")
    grammar = build_grammar(db)
    index = TheoremIndex(db, grammar)
    ctx = make_context(db["hard"], db, grammar)
    search = Search(ctx, grammar, index, BaselineGuidance(db),
                    SearchParams(max_passes=2000, wall_time=0))

    created_proven = {}

    def note_new_nodes():
        reds, blues = _all_nodes(search.root)
        for r in reds:
            if id(r) not in created_proven:
                created_proven[id(r)] = r.proven and not r.children
        return reds, blues

    note_new_nodes()
    passes = 0
    while search._claim(None):
        search._pass()
        passes += 1
        reds, blues = note_new_nodes()
        red_fn, _, stats = _recompute_stats(search.root)
        red_fn(search.root, created_proven)
        for node in reds + blues:
            n, x, proven, dead = stats[id(node)]
            assert node.n == n, f"pass {passes}: visit count drifted"
            assert abs(node.x - x) <= 1e-9, f"pass {passes}: payoff sum drifted"
            assert node.proven == proven, f"pass {passes}: proven flag drifted"
            assert node.dead == dead, f"pass {passes}: dead flag drifted"
        for b in blues:
            assert b.t == 0  # virtual losses all unwound
            if not b.proven and not b.dead and b.children:
                assert _least_promising(b) is _least_promising(b, stats)
    assert passes == 2000 and not search.root.proven and not search.root.dead
    _report(
        f"search-statistic oracle: PASS — {passes} passes, "
        f"{len(created_proven)} red nodes, incremental state exact"
    )


# --------------------------------------------------------------------------
# 5. Oracle-guidance end to end


def test_a5_oracle_guidance_end_to_end(corpus_db, corpus_grammar, corpus_index,
                                       corpus_oracle):
    start = time.monotonic()
    eligible = []
    for prop in corpus_db.propositions():
        if prop.typecode != corpus_db.provable_typecode:
            continue
        ctx = make_context(prop, corpus_db, corpus_grammar)
        tree = tree_from_rpn(prop, decompress_proof(prop, corpus_db), corpus_db,
                             corpus_grammar, corpus_index, ctx)
        if not isinstance(tree, ProofTree):
            continue
        red_nodes = prune(tree).node_count()
        if red_nodes <= 40:
            eligible.append((prop.label, red_nodes))
    assert len(eligible) >= 50
    sample = random.Random(5).sample(eligible, 50)

    proved = 0
    pass_budget_hits = 0
    for label, red_nodes in sample:
        result = prove(corpus_db, label, corpus_oracle,
                       grammar=corpus_grammar, index=corpus_index)
        assert result.proved, f"oracle guidance failed on {label}"
        proved += 1
        assert result.passes <= 10 * red_nodes, (
            f"{label}: {result.passes} passes > 10x{red_nodes}"
        )
        pass_budget_hits = max(pass_budget_hits, result.passes)
        st = corpus_db[label]
        ctx = make_context(st, corpus_db, corpus_grammar)
        rpn = emit_rpn(prune(result.tree), ctx, corpus_grammar, corpus_db)
        verify_rpn_proof(st, rpn, corpus_db)
    elapsed = time.monotonic() - start
    assert elapsed < 300.0
    _report(
        f"oracle end-to-end: PASS — 50/50 proved and re-verified, "
        f"max {pass_budget_hits} passes, {elapsed:.1f}s"
    )


# --------------------------------------------------------------------------
# 6. Last-step rule


def _single_application(ctx, index):
    """Is ctx.goal one hypothesis away from the context's givens?"""
    if ctx.goal in ctx.e_hyps:
        return True
    for info, constrained in viable_theorems(ctx.goal, ctx, index):

        def extend(i, sub):
            if i == len(info.e_hyps):
                return sub if len(sub) == len(info.float_vars) else None
            for hyp in ctx.e_hyps:
                nxt = match_assertion(info.e_hyps[i], hyp, sub)
                if nxt is not None:
                    found = extend(i + 1, nxt)
                    if found is not None:
                        return found
            return None

        full = extend(0, dict(constrained))
        if full is not None and check_disjoint(full, info.dvs, ctx):
            return True
    return False


def test_a6_last_step_rule(corpus_db, corpus_grammar, corpus_index):
    guidance = BaselineGuidance(corpus_db)
    qualifying = 0
    others = 0
    for prop in corpus_db.propositions():
        if prop.typecode != corpus_db.provable_typecode:
            continue
        ctx = make_context(prop, corpus_db, corpus_grammar)
        if not _single_application(ctx, corpus_index):
            others += 1
            continue
        qualifying += 1
        result = prove(corpus_db, prop.label, guidance,
                       SearchParams(max_passes=1),
                       grammar=corpus_grammar, index=corpus_index)
        assert result.proved and result.passes == 0, (
            f"{prop.label} is one application away but took "
            f"{result.passes} passes"
        )
    assert qualifying >= 50 and others >= 50  # both populations exist
    _report(
        f"last-step rule: PASS — {qualifying} single-application propositions "
        f"all proved with 0 expansion passes ({others} multi-step)"
    )


# --------------------------------------------------------------------------
# 7. Death and circularity


ADVERSARIAL_HEADER = """
$c ( ) -> -. wff |- $.
$v ph ps $.
wph $f wff ph $.
wps $f wff ps $.
wn $a wff -. ph $.
wi $a wff ( ph -> ps ) $.
"""

ADVERSARIAL_DBS = {
    "self-hypothesis cycle": ADVERSARIAL_HEADER + """
${  selfh.1 $e |- ph $.  selfh $a |- ph $.  $}
goal $p |- ( ph -> ph ) $= ? $.
""",
    "two-step cycle": ADVERSARIAL_HEADER + """
${  swap.1 $e |- ( ps -> ph ) $.  swap $a |- ( ph -> ps ) $.  $}
goal $p |- ( ph -> ps ) $= ? $.
""",
    "no applicable theorems": ADVERSARIAL_HEADER + """
ax-1 $a |- ( ph -> ( ps -> ph ) ) $.
goal $p |- -. ph $= ? $.
""",
    "cycle plus dead ends": ADVERSARIAL_HEADER + """
${  selfh.1 $e |- ph $.  selfh $a |- ph $.  $}
${  swap.1 $e |- ( ps -> ph ) $.  swap $a |- ( ph -> ps ) $.  $}
goal $p |- ( ph -> -. ph ) $= ? $.
""",
}


def test_a7_death_and_circularity():
    reports = []
    for name, text in ADVERSARIAL_DBS.items():
        db = parse_database(text)
        result = prove(db, "goal", BaselineGuidance(db),
                       SearchParams(max_passes=5000, wall_time=30.0))
        assert not result.proved, f"{name}: proved an unprovable goal"
        assert result.tree is None
        assert result.status == "exhausted", (
            f"{name}: expected a root-dead report, got {result.status!r}"
        )
        assert result.root.dead
        reports.append(f"{name} dead after {result.passes} passes")

    # Soundness flip side: a provable goal in a database full of traps is
    # still proved, and the emitted proof passes the kernel.
    trapped = ADVERSARIAL_HEADER + """
${  selfh.1 $e |- ph $.  selfh $a |- ph $.  $}
${  swap.1 $e |- ( ps -> ph ) $.  swap $a |- ( ph -> ps ) $.  $}
ax-1 $a |- ( ph -> ( ps -> ph ) ) $.
goal $p |- ( ph -> ( -. ps -> ph ) ) $= ? $.
"""
    db = parse_database(trapped)
    grammar = build_grammar(db)
    index = TheoremIndex(db, grammar)
    result = prove(db, "goal", BaselineGuidance(db), grammar=grammar, index=index)
    assert result.proved
    st = db["goal"]
    rpn = emit_rpn(prune(result.tree), make_context(st, db, grammar), grammar, db)
    verify_rpn_proof(st, rpn, db)
    _report(
        "death/circularity: PASS — "
        + "; ".join(reports)
        + "; trapped-but-provable goal proved and verified"
    )


# --------------------------------------------------------------------------
# 8. Dataset determinism and hygiene


def test_a8_dataset_determinism_and_hygiene(tmp_path, corpus_db, corpus_grammar,
                                            corpus_index):
    vocab = build_vocabulary(corpus_db, corpus_grammar)
    config = DatasetConfig(seed=0)
    manifests = []
    for name in ("first", "second"):
        manifests.append(extract_datasets(
            corpus_db, tmp_path / name, config,
            grammar=corpus_grammar, index=corpus_index, vocab=vocab))
    first, second = (sorted((tmp_path / n).iterdir()) for n in ("first", "second"))
    assert [p.name for p in first] == [p.name for p in second]
    for a, b in zip(first, second):
        assert a.read_bytes() == b.read_bytes(), f"{a.name} differs between runs"

    manifest = manifests[0]
    test_labels = set(manifest["split_labels"]["test"])
    leaked = 0
    for path in first:
        if ".train." in path.name or ".validation." in path.name:
            for line in path.read_text(encoding="utf-8").splitlines():
                if '"context":"' in line and json.loads(line)["context"] in test_labels:
                    leaked += 1
    assert leaked == 0

    splits = split_propositions(corpus_db, config.seed)
    steps, _ = extract_steps(corpus_db, splits, corpus_grammar, corpus_index)
    sample = random.Random(0).sample(steps, 1000)
    for step in sample:
        info = corpus_index.step_info(step.theorem)
        assert apply_substitution(info.assertion, step.subst) == step.expression
    _report(
        "dataset determinism/hygiene: PASS — two seed-0 extractions "
        f"byte-identical, 0 test-split records in training files, "
        f"1000/1000 sampled steps replay"
    )


# --------------------------------------------------------------------------
# 9. Priority formula and parallel search


def test_a9_priority_formula_and_parallel_search(corpus_db, corpus_grammar,
                                                 corpus_index, corpus_oracle):
    params = SearchParams(alpha=1.0, beta=0.5, gamma=3.0)
    got = priority(x=0.5, n=1, t=0, v=1.0, parent_n=2, params=params)
    want = 0.5 + 0.5 + math.sqrt(math.log(2.0))
    assert abs(got - want) <= 1e-9
    assert abs(want - 1.8326) < 5e-5  # the hand-computed reference value

    # Virtual loss: x/(n + 3t) with one pending visit quarters the first term.
    loaded = priority(x=1.0, n=1, t=1, v=0.0, parent_n=1, params=params)
    assert abs(loaded - 0.25) <= 1e-9

    eligible = [p.label for p in corpus_db.propositions()
                if p.typecode == corpus_db.provable_typecode]
    sample = random.Random(11).sample(eligible, 6)
    start = time.monotonic()
    for label in sample:
        result = prove(corpus_db, label, corpus_oracle,
                       SearchParams(gamma=3.0, threads=4, wall_time=60.0),
                       grammar=corpus_grammar, index=corpus_index)
        assert result.proved, f"parallel search failed on {label}"
        st = corpus_db[label]
        ctx = make_context(st, corpus_db, corpus_grammar)
        rpn = emit_rpn(prune(result.tree), ctx, corpus_grammar, corpus_db)
        verify_rpn_proof(st, rpn, corpus_db)
    elapsed = time.monotonic() - start

    # A four-thread run on an unprovable goal must also come back.
    db = parse_database(ADVERSARIAL_DBS["two-step cycle"])
    result = prove(db, "goal", BaselineGuidance(db),
                   SearchParams(threads=4, max_passes=500, wall_time=30.0))
    assert not result.proved
    _report(
        "priority formula & parallel search: PASS — hand values within 1e-9, "
        f"6/6 four-thread proofs verified in {elapsed:.1f}s, no deadlock"
    )
