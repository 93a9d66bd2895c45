"""Guidance models: the contract the search consumes, plus three providers.

A guidance model answers three questions about a proof search state:

- ``relevance``: given a goal expression and the viable theorems (with their
  constrained substitutions), how plausible is each theorem as the last step?
- ``generate``: given a chosen theorem and the substitution constrained by
  matching, propose full substitutions for the unconstrained variables, best
  first, each with a probability relative to the best candidate.
- ``payoff``: how provable does an expression look in this context?

The search treats every answer as untrusted advice: substitutions are
re-validated (types, disjointness, constrained bindings) before use, and
nothing is ever accepted into a proof without the verification kernel.

Providers: ``BaselineGuidance`` (deterministic heuristics over the database),
``OracleGuidance`` (replays known proofs; for testing and calibration) and
``RemoteGuidance`` (a line-delimited JSON client for a model service).
"""

from __future__ import annotations

import heapq
import itertools
import json
import socket
import threading

from mmprover.database import Database, MMError
from mmprover.grammar import Grammar, ParseTree, TokenVocabulary, make_renaming, tokenize
from mmprover.unify import (
    Context,
    Substitution,
    TheoremInfo,
    apply_substitution,
    check_disjoint,
)

Candidate = tuple[TheoremInfo, Substitution]


class GuidanceModel:
    """Interface the search engine talks to.

    Scores are non-negative and need not be normalized; the engine
    normalizes over the candidates it passes.  ``generate`` returns at most
    ``limit`` substitutions extending ``constrained`` to all of the
    theorem's floating variables, best first; probabilities are relative to
    the best candidate (the first entry's probability is 1.0).
    """

    def relevance(self, ctx: Context, goal: ParseTree,
                  candidates: list[Candidate]) -> list[float]:
        raise NotImplementedError

    def generate(self, ctx: Context, goal: ParseTree, info: TheoremInfo,
                 constrained: Substitution, limit: int
                 ) -> list[tuple[Substitution, float]]:
        raise NotImplementedError

    def payoff(self, ctx: Context, expr: ParseTree) -> float:
        raise NotImplementedError

    def close(self) -> None:
        pass


def unconstrained_variables(info: TheoremInfo, constrained: Substitution):
    return [(v, tc) for v, tc in info.float_vars if v not in constrained]


def validate_candidate(subst: Substitution, info: TheoremInfo,
                       constrained: Substitution, ctx: Context) -> bool:
    """Engine-side re-validation of a guidance-proposed substitution."""
    for v, tc in info.float_vars:
        img = subst.get(v)
        if img is None or img.typecode != tc:
            return False
        for z in img.variables():
            if z not in ctx.variables:
                return False
    for v, img in constrained.items():
        if subst.get(v) != img:
            return False
    return check_disjoint(subst, info.dvs, ctx)


# ---------------------------------------------------------------------------
# Baseline


class BaselineGuidance(GuidanceModel):
    """Deterministic heuristics requiring nothing but the database.

    Relevance multiplies a theorem's usage frequency in the database's own
    proofs (Laplace-smoothed) by a bonus for every essential hypothesis the
    constrained substitution already grounds to a context hypothesis.
    Generation enumerates subtrees of the goal, the context hypotheses and
    the constrained images, ranked by size; a candidate's probability is the
    product of 1/rank over its variables, so the best candidate has
    probability 1.  Payoff decays with expression size.
    """

    POOL_CAP = 64
    ENUM_CAP = 512

    def __init__(self, db: Database):
        self.db = db
        self._freq: dict[str, int] | None = None
        self._ctx_pools: dict[tuple[str, str], list[ParseTree]] = {}

    # frequencies are computed lazily: counting needs every stored proof
    def _frequencies(self) -> dict[str, int]:
        if self._freq is None:
            from mmprover.database import decompress_proof

            freq: dict[str, int] = {}
            for prop in self.db.propositions():
                try:
                    labels = decompress_proof(prop, self.db)
                except MMError:
                    continue
                for lab in labels:
                    st = self.db.label_index.get(lab)
                    if st is not None and st.is_assertion:
                        freq[lab] = freq.get(lab, 0) + 1
            self._freq = freq
        return self._freq

    def relevance(self, ctx, goal, candidates):
        freq = self._frequencies()
        hyp_set = set(ctx.e_hyps)
        scores = []
        for info, constrained in candidates:
            s = float(freq.get(info.label, 0) + 1)
            unconstrained = {v for v, _ in unconstrained_variables(info, constrained)}
            for e_tree in info.e_hyps:
                if any(v in unconstrained for v in e_tree.variables()):
                    continue
                if apply_substitution(e_tree, constrained) in hyp_set:
                    s *= 4.0
            scores.append(s)
        return scores

    def _context_pool(self, ctx: Context, typecode: str) -> list[ParseTree]:
        key = (ctx.label, typecode)
        pool = self._ctx_pools.get(key)
        if pool is None:
            pool = []
            seen = set()
            for tree in ctx.e_hyps:
                for node in tree.walk():
                    if node.typecode == typecode and node not in seen:
                        seen.add(node)
                        pool.append(node)
            self._ctx_pools[key] = pool
        return pool

    def _pools(self, ctx, goal, info, constrained, unconstrained):
        pools = []
        for v, tc in unconstrained:
            seen = set()
            pool = []
            sources = itertools.chain(
                goal.walk(),
                self._context_pool(ctx, tc),
                (n for img in constrained.values() for n in img.walk()),
            )
            for node in sources:
                if node.typecode == tc and node not in seen:
                    seen.add(node)
                    pool.append(node)
                    if len(pool) >= self.POOL_CAP:
                        break
            pool.sort(key=lambda t: t.size)
            pools.append(pool)
        return pools

    def generate(self, ctx, goal, info, constrained, limit):
        unconstrained = unconstrained_variables(info, constrained)
        if not unconstrained:
            full = dict(constrained)
            if validate_candidate(full, info, constrained, ctx):
                return [(full, 1.0)]
            return []
        pools = self._pools(ctx, goal, info, constrained, unconstrained)
        if any(not p for p in pools):
            return []
        out = []
        for ranks in _product_by_rank([len(p) for p in pools], self.ENUM_CAP):
            full = dict(constrained)
            prob = 1.0
            for (v, _), pool, r in zip(unconstrained, pools, ranks):
                full[v] = pool[r]
                prob /= r + 1
            if validate_candidate(full, info, constrained, ctx):
                out.append((full, prob))
                if len(out) >= limit:
                    break
        return out

    def payoff(self, ctx, expr):
        return 1.0 / (1.0 + expr.size / 8.0)


def _product_by_rank(sizes: list[int], cap: int):
    """Index tuples over ranked lists, cheapest rank-product first."""
    start = (0,) * len(sizes)
    heap = [(1.0, start)]
    seen = {start}
    popped = 0
    while heap and popped < cap:
        cost, ix = heapq.heappop(heap)
        popped += 1
        yield ix
        for d in range(len(sizes)):
            if ix[d] + 1 < sizes[d]:
                nxt = ix[:d] + (ix[d] + 1,) + ix[d + 1 :]
                if nxt not in seen:
                    seen.add(nxt)
                    heapq.heappush(heap, (cost / (ix[d] + 1) * (ix[d] + 2), nxt))


# ---------------------------------------------------------------------------
# Oracle


class OracleGuidance(GuidanceModel):
    """Replays known proof trees; near-perfect guidance for tests.

    For each registered proposition the oracle knows, per proved expression,
    the rule applied and the full substitution.  Relevance puts mass 1-eps on
    the true theorem, generation returns the true substitution first, payoff
    is high exactly on expressions the known proof proves.  Everything else
    falls back to the baseline.
    """

    def __init__(self, db: Database, eps: float = 0.01, fallback: GuidanceModel | None = None):
        self.eps = eps
        self.fallback = fallback or BaselineGuidance(db)
        self._maps: dict[str, dict[ParseTree, tuple[str, Substitution]]] = {}

    def register(self, prop_label: str, tree) -> None:
        """Record a proof tree (for the proposition's own search)."""
        mapping: dict[ParseTree, tuple[str, Substitution]] = {}
        stack = [tree]
        while stack:
            node = stack.pop()
            if not node.is_hyp and node.expr not in mapping:
                mapping[node.expr] = (node.rule, node.subst)
            stack.extend(node.children)
        self._maps[prop_label] = mapping

    def known(self, ctx: Context, expr: ParseTree):
        return self._maps.get(ctx.label, {}).get(expr)

    def relevance(self, ctx, goal, candidates):
        true = self.known(ctx, goal)
        if true is None or not any(info.label == true[0] for info, _ in candidates):
            return self.fallback.relevance(ctx, goal, candidates)
        n = len(candidates)
        if n == 1:
            return [1.0]
        rest = self.eps / (n - 1)
        return [
            1.0 - self.eps if info.label == true[0] else rest
            for info, _ in candidates
        ]

    def generate(self, ctx, goal, info, constrained, limit):
        true = self.known(ctx, goal)
        if true is not None and true[0] == info.label:
            full = {v: true[1][v] for v, _ in info.float_vars if v in true[1]}
            if validate_candidate(full, info, constrained, ctx):
                return [(full, 1.0)]
        return self.fallback.generate(ctx, goal, info, constrained, limit)

    def payoff(self, ctx, expr):
        mapping = self._maps.get(ctx.label)
        if mapping is None:
            return self.fallback.payoff(ctx, expr)
        if expr in mapping or expr in ctx.e_hyps:
            return 1.0
        return 0.1


def oracle_from_proofs(db: Database, grammar: Grammar, index, labels=None,
                       eps: float = 0.01) -> OracleGuidance:
    """Build an oracle from the database's stored proofs (pruned replays)."""
    from mmprover.database import decompress_proof
    from mmprover.unify import make_context
    from mmprover.verifier import ProofTree, prune, tree_from_rpn

    oracle = OracleGuidance(db, eps=eps)
    for prop in db.propositions():
        if labels is not None and prop.label not in labels:
            continue
        try:
            ctx = make_context(prop, db, grammar)
            tree = tree_from_rpn(
                prop, decompress_proof(prop, db), db, grammar, index, ctx
            )
        except MMError:
            continue  # incomplete or broken stored proof: nothing to learn
        if isinstance(tree, ProofTree):
            oracle.register(prop.label, prune(tree))
    return oracle


# ---------------------------------------------------------------------------
# Remote


REMOTE_PROTOCOL = """\
Line-delimited JSON over TCP; every line is one object.

Request:  {"id": <int>, "method": <str>, "payload": {...}}
Response: {"id": <int>, "result": {...}} or {"id": <int>, "error": <str>}

Methods:
  hello      payload {"vocab_hash": sha256-hex}
             result  {"ok": true}
  relevance  payload {"state": STATE, "theorems": [label, ...]}
             result  {"scores": [float, ...]}   # same order, non-negative
  generate   payload {"state": STATE, "theorem": label,
                      "constrained": {var: TOKENS, ...},
                      "unconstrained": [{"var": v, "typecode": tc}, ...],
                      "renaming": {context-var: token-id, ...},
                      "position": int,   # context's database position
                      "limit": int, "max_tokens": int}
             result  {"candidates": [{"trees": [TOKENS per unconstrained
                      var, in request order], "prob": float}, ...]}
  payoff     payload {"state": STATE}
             result  {"score": float}           # in [0, 1]

STATE is {"tokens": [int, ...], "features": [[d, deg, pdeg, pos], ...]}:
the context's essential hypotheses separated by EOH, then EOS, then the
goal expression, under a shared canonical dummy renaming.  TOKENS is a
depth-first pre-order constructor/dummy token list (same renaming).
"""


class RemoteGuidance(GuidanceModel):
    """Client for a guidance service speaking the line-JSON protocol.

    One socket, requests multiplexed by id; a reader thread distributes
    responses.  Failures degrade gracefully per call: relevance falls back
    to uniform scores, generate to no candidates and payoff to 0.5.  A
    vocabulary-hash mismatch at handshake is fatal, though: advice from a
    model trained on different token ids would be garbage.
    """

    def __init__(self, host: str, port: int, vocab: TokenVocabulary,
                 grammar: Grammar, timeout: float = 10.0):
        self.host = host
        self.port = port
        self.vocab = vocab
        self.grammar = grammar
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._rfile = None
        self._lock = threading.Lock()
        self._next_id = itertools.count(1)
        self._pending: dict[int, dict | None] = {}
        self._cond = threading.Condition()
        self._reader: threading.Thread | None = None
        self._failed = False
        self._state_cache: dict = {}

    # -- transport ----------------------------------------------------------

    def connect(self) -> None:
        """Open the connection and run the handshake now instead of lazily.

        Raises MMError if the service does not accept the handshake (usually
        a vocabulary-hash mismatch) -- that is a configuration error, unlike
        transient per-call failures which only trigger fallbacks.
        """
        if self._sock is not None or self._failed:
            return
        sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        sock.settimeout(None)
        self._sock = sock
        self._rfile = sock.makefile("r", encoding="utf-8")
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        reply = self._call("hello", {"vocab_hash": self.vocab.sha256()})
        if not reply or not reply.get("ok"):
            self.close()
            self._failed = True
            raise MMError(
                f"guidance service at {self.host}:{self.port} did not accept "
                f"the handshake (vocabulary hash mismatch?)"
            )

    def _read_loop(self) -> None:
        try:
            for line in self._rfile:
                try:
                    msg = json.loads(line)
                except json.JSONDecodeError:
                    continue
                rid = msg.get("id")
                with self._cond:
                    if rid in self._pending:
                        self._pending[rid] = msg
                        self._cond.notify_all()
        except Exception:
            pass
        with self._cond:
            for rid, v in self._pending.items():
                if v is None:
                    self._pending[rid] = {"id": rid, "error": "connection closed"}
            self._cond.notify_all()

    def _call(self, method: str, payload: dict) -> dict | None:
        """One request/response; None on timeout or transport error."""
        rid = next(self._next_id)
        line = json.dumps(
            {"id": rid, "method": method, "payload": payload},
            separators=(",", ":"),
        )
        with self._cond:
            self._pending[rid] = None
        try:
            with self._lock:
                assert self._sock is not None
                self._sock.sendall(line.encode("utf-8") + b"\n")
        except OSError:
            with self._cond:
                self._pending.pop(rid, None)
            return None
        with self._cond:
            ok = self._cond.wait_for(
                lambda: self._pending.get(rid) is not None, timeout=self.timeout
            )
            msg = self._pending.pop(rid, None)
        if not ok or msg is None or "error" in msg:
            return None
        return msg.get("result")

    def _request(self, method: str, payload: dict) -> dict | None:
        if self._failed:
            return None
        try:
            self.connect()
        except OSError:
            self._failed = True
            return None
        return self._call(method, payload)

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None

    # -- encoding -------------------------------------------------------------

    def _state(self, ctx: Context, goal: ParseTree):
        key = (ctx.label, goal)
        hit = self._state_cache.get(key)
        if hit is not None:
            return hit
        variables: dict[str, str] = {}
        for tree in (*ctx.e_hyps, goal):
            variables.update(tree.variables())
        renaming = make_renaming(variables, self.vocab, None)
        seq = tokenize([list(ctx.e_hyps), [goal]], renaming, self.vocab)
        state = (
            {"tokens": seq.tokens, "features": [list(f) for f in seq.features]},
            renaming,
        )
        if len(self._state_cache) > 4096:
            self._state_cache.clear()
        self._state_cache[key] = state
        return state

    def _tree_tokens(self, tree: ParseTree, renaming: dict[str, int]) -> list[int]:
        return tokenize([[tree]], renaming, self.vocab).tokens

    # -- methods ----------------------------------------------------------------

    def relevance(self, ctx, goal, candidates):
        state, _ = self._state(ctx, goal)
        result = self._request(
            "relevance",
            {"state": state, "theorems": [info.label for info, _ in candidates]},
        )
        if result is None:
            return [1.0] * len(candidates)
        scores = result.get("scores")
        if (
            not isinstance(scores, list)
            or len(scores) != len(candidates)
            or not all(isinstance(s, (int, float)) and s >= 0 for s in scores)
        ):
            return [1.0] * len(candidates)
        return [float(s) for s in scores]

    def generate(self, ctx, goal, info, constrained, limit):
        unconstrained = unconstrained_variables(info, constrained)
        if not unconstrained:
            full = dict(constrained)
            if validate_candidate(full, info, constrained, ctx):
                return [(full, 1.0)]
            return []
        state, renaming = self._state(ctx, goal)
        renaming = dict(renaming)
        used = set(renaming.values())
        for img in constrained.values():
            # images are normally subtrees of the goal, so already renamed;
            # cover stray context variables defensively
            for v, tc in img.variables().items():
                if v not in renaming:
                    tok = next(
                        (t for t in self.vocab.dummies.get(tc, ()) if t not in used),
                        None,
                    )
                    if tok is None:
                        return []
                    renaming[v] = tok
                    used.add(tok)
        payload = {
            "state": state,
            "theorem": info.label,
            "constrained": {
                v: self._tree_tokens(img, renaming)
                for v, img in sorted(constrained.items())
            },
            "unconstrained": [
                {"var": v, "typecode": tc} for v, tc in unconstrained
            ],
            "renaming": {v: t for v, t in sorted(renaming.items())},
            "position": ctx.db_position,
            "limit": limit,
            "max_tokens": 75,
        }
        result = self._request("generate", payload)
        if result is None:
            return []
        out = []
        back = {tok: v for v, tok in renaming.items()}
        ctx_vars = ctx.variables
        for cand in result.get("candidates", ())[: 4 * limit]:
            trees = cand.get("trees")
            prob = cand.get("prob", 0.0)
            if not isinstance(trees, list) or len(trees) != len(unconstrained):
                continue
            full = dict(constrained)
            ok = True
            for (v, tc), toks in zip(unconstrained, trees):
                tree = self._decode_tree(toks, back, ctx_vars)
                if tree is None or tree.typecode != tc:
                    ok = False
                    break
                full[v] = tree
            if ok and validate_candidate(full, info, constrained, ctx):
                out.append((full, float(prob)))
                if len(out) >= limit:
                    break
        if out:
            best = out[0][1] or 1.0
            out = [(s, p / best if best else 1.0) for s, p in out]
        return out

    def _decode_tree(self, toks, back: dict[int, str], ctx_vars) -> ParseTree | None:
        from mmprover.grammar import tree_from_tokens, var_node

        if not isinstance(toks, list) or not all(
            isinstance(t, int) and 0 <= t < len(self.vocab.tokens) for t in toks
        ):
            return None
        try:
            raw, end = tree_from_tokens(toks, self.vocab)
        except MMError:
            return None
        if end != len(toks):
            return None

        def rebuild(node: ParseTree) -> ParseTree | None:
            if node.is_var:  # a dummy leaf; map back to a context variable
                tok = self.vocab.index[node.label]
                v = back.get(tok)
                if v is None or ctx_vars.get(v) != node.typecode:
                    return None
                return var_node(v, node.typecode)
            kids = []
            for c in node.children:
                r = rebuild(c)
                if r is None:
                    return None
                kids.append(r)
            return ParseTree(node.label, node.typecode, tuple(kids), False)

        return rebuild(raw)

    def payoff(self, ctx, expr):
        state, _ = self._state(ctx, expr)
        result = self._request("payoff", {"state": state})
        if result is None:
            return 0.5
        score = result.get("score")
        if not isinstance(score, (int, float)) or not (0.0 <= score <= 1.0):
            return 0.5
        return float(score)


def resolve_guidance(spec: str, db: Database, grammar: Grammar, index,
                     vocab: TokenVocabulary | None = None) -> GuidanceModel:
    """Build a guidance model from a CLI-style spec string.

    ``baseline``, ``oracle`` or ``remote:HOST:PORT``.
    """
    if spec == "baseline":
        return BaselineGuidance(db)
    if spec == "oracle":
        return oracle_from_proofs(db, grammar, index)
    if spec.startswith("remote:"):
        _, host, port = spec.split(":", 2)
        if vocab is None:
            from mmprover.grammar import build_vocabulary

            vocab = build_vocabulary(db, grammar)
        return RemoteGuidance(host, int(port), vocab, grammar)
    raise MMError(f"unknown guidance spec {spec!r}")
