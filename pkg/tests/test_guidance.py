"""Guidance models: baseline heuristics, proof-replay oracle, remote client."""

import contextlib
import json
import socket
import threading

import pytest

from mmprover.database import MMError, decompress_proof
from mmprover.grammar import var_node
from mmprover.guidance import (
    BaselineGuidance,
    OracleGuidance,
    RemoteGuidance,
    _product_by_rank,
    oracle_from_proofs,
    resolve_guidance,
    validate_candidate,
)
from mmprover.unify import TheoremIndex, make_context, viable_theorems
from mmprover.verifier import prune, tree_from_rpn


@pytest.fixture(scope="module")
def index(toy_db, toy_grammar):
    return TheoremIndex(toy_db, toy_grammar)


@pytest.fixture(scope="module")
def ctx_mp2(toy_db, toy_grammar):
    return make_context(toy_db.label_index["mp2"], toy_db, toy_grammar)


def wff(grammar, text, variables):
    return grammar.parse(["wff", *text.split()], variables)


VARS = {"ph": "wff", "ps": "wff", "ch": "wff"}


# -- baseline ---------------------------------------------------------------


def test_baseline_frequencies(toy_db):
    b = BaselineGuidance(toy_db)
    assert b._frequencies() == {"wi": 13, "wn": 2, "ax-1": 2, "ax-2": 1, "ax-mp": 6}


def test_baseline_relevance_frequency_prior(toy_db, index, ctx_mp2):
    b = BaselineGuidance(toy_db)
    cands = [(index.by_label["ax-mp"], {}), (index.by_label["axdv"], {})]
    scores = b.relevance(ctx_mp2, ctx_mp2.goal, cands)
    assert len(scores) == 2
    assert scores[0] == 7.0  # 6 uses + 1
    assert scores[1] == 1.0  # never used


def test_baseline_relevance_hypothesis_bonus(toy_db, toy_grammar, index, ctx_mp2):
    b = BaselineGuidance(toy_db)
    info = index.by_label["axdv"]
    grounded = {"ph": var_node("ph", "wff")}  # axdv.1 becomes |- ph, a hypothesis
    foreign = {"ph": var_node("ch", "wff")}  # |- ch is not a hypothesis
    scores = b.relevance(ctx_mp2, ctx_mp2.goal, [(info, grounded), (info, foreign)])
    assert scores == [4.0, 1.0]


def test_baseline_generate_ranking(toy_db, toy_grammar, index, ctx_mp2):
    b = BaselineGuidance(toy_db)
    [(info, constrained)] = viable_theorems(ctx_mp2.goal, ctx_mp2, index)
    assert info.label == "ax-mp"
    assert constrained == {"ps": var_node("ch", "wff")}
    out = b.generate(ctx_mp2, ctx_mp2.goal, info, constrained, 5)
    images = [subst["ph"] for subst, _ in out]
    expect = [
        var_node("ch", "wff"),
        var_node("ph", "wff"),
        var_node("ps", "wff"),
        wff(toy_grammar, "( ps -> ch )", VARS),
        wff(toy_grammar, "( ph -> ( ps -> ch ) )", VARS),
    ]
    assert images == expect
    probs = [p for _, p in out]
    assert probs == [1.0, 1 / 2, 1 / 3, 1 / 4, 1 / 5]
    assert all(validate_candidate(s, info, constrained, ctx_mp2) for s, _ in out)


def test_baseline_generate_no_unconstrained(toy_db, index, ctx_mp2):
    b = BaselineGuidance(toy_db)
    info = index.by_label["ax-mp"]
    full = {"ph": var_node("ph", "wff"), "ps": var_node("ch", "wff")}
    assert b.generate(ctx_mp2, ctx_mp2.goal, info, full, 5) == [(full, 1.0)]


def test_baseline_generate_respects_disjointness(toy_db, toy_grammar, index):
    b = BaselineGuidance(toy_db)
    ctx = make_context(toy_db.label_index["axdv"], toy_db, toy_grammar)
    info = index.by_label["axdv"]
    constrained = {"ph": var_node("ph", "wff")}
    out = b.generate(ctx, ctx.goal, info, constrained, 10)
    # every pool entry containing ph collides with f(ph) under $d ph ps
    assert out == [({"ph": var_node("ph", "wff"), "ps": var_node("ps", "wff")}, 1.0)]


def test_baseline_payoff_decays_with_size(toy_db, toy_grammar, ctx_mp2):
    b = BaselineGuidance(toy_db)
    small = b.payoff(ctx_mp2, var_node("ch", "wff"))
    big = b.payoff(ctx_mp2, wff(toy_grammar, "( ph -> ( ps -> ch ) )", VARS))
    assert 0.0 < big < small <= 1.0


def test_product_by_rank_order():
    assert list(_product_by_rank([3, 2], 100)) == [
        (0, 0), (0, 1), (1, 0), (2, 0), (1, 1), (2, 1),
    ]


def test_validate_candidate_rejections(toy_db, toy_grammar, index, ctx_mp2):
    info = index.by_label["ax-mp"]
    ch = var_node("ch", "wff")
    good = {"ph": ch, "ps": ch}
    assert validate_candidate(good, info, {"ps": ch}, ctx_mp2)
    assert not validate_candidate({"ps": ch}, info, {}, ctx_mp2)  # ph missing
    assert not validate_candidate(
        {"ph": ch, "ps": var_node("qq", "wff")}, info, {}, ctx_mp2
    )  # qq is not a context variable
    assert not validate_candidate(
        good, info, {"ps": var_node("ph", "wff")}, ctx_mp2
    )  # contradicts the constrained binding


# -- oracle -------------------------------------------------------------------


@pytest.fixture(scope="module")
def oracle(toy_db, toy_grammar, index):
    return oracle_from_proofs(toy_db, toy_grammar, index)


def test_oracle_relevance_singles_out_true_theorem(toy_db, toy_grammar, index, oracle):
    ctx = make_context(toy_db.label_index["id"], toy_db, toy_grammar)
    cands = viable_theorems(ctx.goal, ctx, index)
    assert [info.label for info, _ in cands] == ["ax-mp", "mp2", "mp2b"]
    scores = oracle.relevance(ctx, ctx.goal, list(cands))
    assert scores == [0.99, 0.005, 0.005]


def test_oracle_relevance_single_candidate(toy_db, index, ctx_mp2, oracle):
    cands = list(viable_theorems(ctx_mp2.goal, ctx_mp2, index))
    assert len(cands) == 1 and cands[0][0].label == "ax-mp"
    assert oracle.relevance(ctx_mp2, ctx_mp2.goal, cands) == [1.0]


def test_oracle_generate_returns_true_substitution(toy_db, toy_grammar, index, oracle):
    prop = toy_db.label_index["id"]
    ctx = make_context(prop, toy_db, toy_grammar)
    [(info, constrained)] = [
        c for c in viable_theorems(ctx.goal, ctx, index) if c[0].label == "ax-mp"
    ]
    tree = prune(
        tree_from_rpn(prop, decompress_proof(prop, toy_db), toy_db, toy_grammar, index, ctx)
    )
    out = oracle.generate(ctx, ctx.goal, info, constrained, 3)
    assert out[0] == ({v: tree.subst[v] for v, _ in info.float_vars}, 1.0)
    assert validate_candidate(out[0][0], info, constrained, ctx)


def test_oracle_payoff_scores_proof_membership(toy_db, toy_grammar, oracle, ctx_mp2):
    on_path = wff(toy_grammar, "( ps -> ch )", VARS)
    off_path = wff(toy_grammar, "( ch -> ch )", VARS)
    assert oracle.payoff(ctx_mp2, on_path) == 1.0
    assert oracle.payoff(ctx_mp2, ctx_mp2.e_hyps[0]) == 1.0
    assert oracle.payoff(ctx_mp2, off_path) == 0.1


def test_oracle_falls_back_for_unknown_goals(toy_db, toy_grammar, index, oracle, ctx_mp2):
    b = BaselineGuidance(toy_db)
    goal = wff(toy_grammar, "( ch -> ch )", VARS)
    cands = [(index.by_label["ax-mp"], {"ps": goal})]
    assert oracle.relevance(ctx_mp2, goal, cands) == b.relevance(ctx_mp2, goal, cands)


def test_oracle_falls_back_for_unknown_context(toy_db, toy_grammar, oracle):
    ctx = make_context(toy_db.label_index["wnn"], toy_db, toy_grammar)
    expr = var_node("ph", "wff")
    assert oracle.payoff(ctx, expr) == 1.0 / (1.0 + expr.size / 8.0)


# -- remote --------------------------------------------------------------------


@contextlib.contextmanager
def fake_server(handler, hello_ok=True):
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind(("127.0.0.1", 0))
    srv.listen(1)
    port = srv.getsockname()[1]
    srv.settimeout(10)

    def run():
        try:
            conn, _ = srv.accept()
        except OSError:
            return
        with conn, conn.makefile("r", encoding="utf-8") as rf:
            for line in rf:
                msg = json.loads(line)
                if msg["method"] == "hello":
                    result = {"ok": hello_ok}
                else:
                    result = handler(msg["method"], msg["payload"])
                    if result is None:  # stay silent; client should time out
                        continue
                reply = json.dumps({"id": msg["id"], "result": result})
                try:
                    conn.sendall(reply.encode("utf-8") + b"\n")
                except OSError:
                    return

    thread = threading.Thread(target=run, daemon=True)
    thread.start()
    try:
        yield port
    finally:
        srv.close()


def remote(port, toy_vocab, toy_grammar, timeout=5.0):
    return RemoteGuidance("127.0.0.1", port, toy_vocab, toy_grammar, timeout=timeout)


def test_remote_relevance_roundtrip(toy_vocab, toy_grammar, index, ctx_mp2):
    seen = []

    def handler(method, payload):
        seen.append((method, payload))
        return {"scores": [0.7, 0.3]}

    cands = [(index.by_label["ax-mp"], {}), (index.by_label["axdv"], {})]
    with fake_server(handler) as port:
        g = remote(port, toy_vocab, toy_grammar)
        assert g.relevance(ctx_mp2, ctx_mp2.goal, cands) == [0.7, 0.3]
        g.close()
    method, payload = seen[0]
    assert method == "relevance"
    assert payload["theorems"] == ["ax-mp", "axdv"]
    state = payload["state"]
    assert len(state["tokens"]) == len(state["features"])
    assert toy_vocab.special("EOS") in state["tokens"]
    assert state["tokens"].count(toy_vocab.special("EOH")) == 2  # three hypotheses


def test_remote_relevance_rejects_malformed(toy_vocab, toy_grammar, index, ctx_mp2):
    cands = [(index.by_label["ax-mp"], {})]
    with fake_server(lambda m, p: {"scores": [-1.0]}) as port:
        g = remote(port, toy_vocab, toy_grammar)
        assert g.relevance(ctx_mp2, ctx_mp2.goal, cands) == [1.0]
        g.close()


def test_remote_payoff(toy_vocab, toy_grammar, ctx_mp2):
    with fake_server(lambda m, p: {"score": 0.9}) as port:
        g = remote(port, toy_vocab, toy_grammar)
        assert g.payoff(ctx_mp2, ctx_mp2.goal) == 0.9
        g.close()
    with fake_server(lambda m, p: {"score": 1.5}) as port:
        g = remote(port, toy_vocab, toy_grammar)
        assert g.payoff(ctx_mp2, ctx_mp2.goal) == 0.5  # out of range -> fallback
        g.close()


def test_remote_generate_roundtrip(toy_db, toy_vocab, toy_grammar, index, ctx_mp2):
    wn = toy_vocab.index["wn"]

    def handler(method, payload):
        assert payload["theorem"] == "ax-mp"
        assert payload["unconstrained"] == [{"var": "ph", "typecode": "wff"}]
        ph = payload["renaming"]["ph"]
        ch = payload["renaming"]["ch"]
        assert payload["constrained"] == {"ps": [ch]}
        return {
            "candidates": [
                {"trees": [[wn, ph]], "prob": 0.8},
                {"trees": [[wn]], "prob": 0.7},  # truncated: skipped
                {"trees": [[ph, ph]], "prob": 0.6},  # trailing junk: skipped
                {"trees": [[ph]], "prob": 0.4},
            ]
        }

    [(info, constrained)] = viable_theorems(ctx_mp2.goal, ctx_mp2, index)
    with fake_server(handler) as port:
        g = remote(port, toy_vocab, toy_grammar)
        out = g.generate(ctx_mp2, ctx_mp2.goal, info, constrained, 5)
        g.close()
    ph_t = var_node("ph", "wff")
    ch_t = var_node("ch", "wff")
    neg = toy_grammar.node("wn", [ph_t])
    assert out == [
        ({"ph": neg, "ps": ch_t}, 1.0),
        ({"ph": ph_t, "ps": ch_t}, 0.5),
    ]


def test_remote_generate_skips_call_when_fully_constrained(
    toy_vocab, toy_grammar, index, ctx_mp2
):
    def handler(method, payload):  # pragma: no cover - must not be reached
        raise AssertionError("generate should not hit the server")

    info = index.by_label["ax-mp"]
    full = {"ph": var_node("ph", "wff"), "ps": var_node("ch", "wff")}
    with fake_server(handler) as port:
        g = remote(port, toy_vocab, toy_grammar)
        assert g.generate(ctx_mp2, ctx_mp2.goal, info, full, 5) == [(full, 1.0)]
        g.close()


def test_remote_timeouts_fall_back(toy_vocab, toy_grammar, index, ctx_mp2):
    cands = [(index.by_label["ax-mp"], {}), (index.by_label["axdv"], {})]
    [(info, constrained)] = viable_theorems(ctx_mp2.goal, ctx_mp2, index)
    with fake_server(lambda m, p: None) as port:
        g = remote(port, toy_vocab, toy_grammar, timeout=0.3)
        assert g.relevance(ctx_mp2, ctx_mp2.goal, cands) == [1.0, 1.0]
        assert g.payoff(ctx_mp2, ctx_mp2.goal) == 0.5
        assert g.generate(ctx_mp2, ctx_mp2.goal, info, constrained, 5) == []
        g.close()


def test_remote_bad_handshake_is_fatal(toy_vocab, toy_grammar, index, ctx_mp2):
    cands = [(index.by_label["ax-mp"], {})]
    with fake_server(lambda m, p: {}, hello_ok=False) as port:
        g = remote(port, toy_vocab, toy_grammar)
        with pytest.raises(MMError, match="handshake"):
            g.connect()
        # after the fatal handshake the model degrades to fallbacks
        assert g.relevance(ctx_mp2, ctx_mp2.goal, cands) == [1.0]


def test_remote_unreachable_falls_back(toy_vocab, toy_grammar, index, ctx_mp2):
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    g = remote(port, toy_vocab, toy_grammar, timeout=0.5)
    cands = [(index.by_label["ax-mp"], {})]
    assert g.relevance(ctx_mp2, ctx_mp2.goal, cands) == [1.0]
    assert g.payoff(ctx_mp2, ctx_mp2.goal) == 0.5


def test_resolve_guidance(toy_db, toy_grammar, index):
    assert isinstance(
        resolve_guidance("baseline", toy_db, toy_grammar, index), BaselineGuidance
    )
    assert isinstance(
        resolve_guidance("oracle", toy_db, toy_grammar, index), OracleGuidance
    )
    g = resolve_guidance("remote:localhost:9", toy_db, toy_grammar, index)
    assert isinstance(g, RemoteGuidance)
    assert (g.host, g.port) == ("localhost", 9)
    with pytest.raises(MMError, match="guidance"):
        resolve_guidance("psychic", toy_db, toy_grammar, index)
