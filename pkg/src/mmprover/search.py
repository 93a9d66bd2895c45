"""Bandit tree search over partial proof trees.

The search grows a two-colored tree rooted at the goal expression:

- a *red* node is an expression to prove; its children are alternative ways
  of proving it (OR),
- a *blue* node is one theorem application ``(rule, substitution)``; its
  children are the red subgoals the application leaves open (AND).

Each pass descends from the root.  At a red node the pass either
materializes a new blue child from the node's lazy expansion queue (when the
child quota ``ceil(n/quota_divisor)`` allows) or follows the blue child with
the highest bandit priority

    x_b / (n_b + gamma * t_b)  +  beta * v_b / n_b  +  alpha * sqrt(ln n_a / n_b)

where ``x``/``n`` are structural subtree sums (``x = y + sum(children x)``,
``n = 1 + sum(children n)``), ``v`` the guidance-assigned initial value and
``t`` a virtual-loss count for passes currently in flight.  At a blue node
the pass follows the unproven red child with the lowest mean payoff: an AND
node is only as strong as its weakest subgoal.

Expansion queues are lazy on two levels: a red node's queue is built (one
relevance call) only when the node is first chosen for expansion, and a
queue entry's substitutions are generated (one generative call) only when
the entry is first popped.  Entry values combine the relevance ratio against
the best viable theorem with the generative probability ratio against the
entry's best substitution.

A red node born equal to a context hypothesis, or provable by a single
theorem application whose essential hypotheses all match context hypotheses,
is proven at creation; the root can therefore finish with zero passes.
Candidates recreating an ancestor expression are skipped, an exhausted entry
materializes a dead dummy child (payoff 0) so the visit still counts, and a
red node whose queue and children are exhausted dies, propagating death
upward; a dead root ends the search early.

Guidance output is advice, never trusted: every substitution is re-validated
and the final tree is meant to be checked by the verifier.
"""

from __future__ import annotations

import heapq
import json
import math
import threading
import time
from dataclasses import dataclass, field

from mmprover.database import Database, MMError
from mmprover.grammar import Grammar, ParseTree, build_grammar
from mmprover.guidance import GuidanceModel, unconstrained_variables, validate_candidate
from mmprover.unify import (
    Context,
    Substitution,
    TheoremIndex,
    TheoremInfo,
    apply_substitution,
    make_context,
    match_assertion,
    viable_theorems,
)
from mmprover.verifier import ProofTree


@dataclass
class SearchParams:
    """Knobs of the search; defaults follow the reference configuration."""

    alpha: float = 1.0  # exploration weight
    beta: float = 0.5  # initial-value weight
    gamma: float = 3.0  # virtual-loss weight
    quota_divisor: int = 3  # children allowed: ceil(n / quota_divisor)
    max_passes: int = 10000
    wall_time: float = 300.0  # seconds; 0 disables the clock
    beam: int = 5  # substitutions requested per generative call
    token_limit: int = 75  # size cap for generated substitution trees
    threads: int = 1


def priority(x: float, n: float, t: float, v: float, parent_n: float,
             params: SearchParams) -> float:
    """Bandit priority of a blue child with stats (x, n, t, v) under a red
    parent with visit count parent_n."""
    return (
        x / (n + params.gamma * t)
        + params.beta * v / n
        + params.alpha * math.sqrt(math.log(parent_n) / n)
    )


class RedNode:
    """An expression to prove."""

    __slots__ = (
        "expr", "parent", "children", "child_keys", "queue",
        "n", "x", "y", "proven", "dead", "proof",
    )

    def __init__(self, expr: ParseTree, parent: "BlueNode | None"):
        self.expr = expr
        self.parent = parent
        self.children: list[BlueNode] = []
        self.child_keys: set = set()
        self.queue: list | None = None  # None until built
        self.n = 1
        self.x = 0.0
        self.y = 0.0
        self.proven = False
        self.dead = False
        self.proof: ProofTree | None = None


class BlueNode:
    """One theorem application; children are its open subgoals."""

    __slots__ = (
        "rule", "subst", "parent", "children",
        "n", "x", "y", "v", "t", "proven", "dead", "dummy",
    )

    def __init__(self, rule: str, subst: Substitution, parent: RedNode, v: float):
        self.rule = rule
        self.subst = subst
        self.parent = parent
        self.children: list[RedNode] = []
        self.n = 1
        self.x = 0.0
        self.y = 0.0  # blue nodes carry no payoff of their own
        self.v = v
        self.t = 0
        self.proven = False
        self.dead = False
        self.dummy = False


class _QueueEntry:
    __slots__ = ("info", "constrained", "rel", "gens", "idx")

    def __init__(self, info: TheoremInfo, constrained: Substitution, rel: float):
        self.info = info
        self.constrained = constrained
        self.rel = rel  # relevance ratio against the best viable theorem
        self.gens: list[tuple[Substitution, float]] | None = None
        self.idx = 0


@dataclass
class SearchResult:
    label: str
    proved: bool
    status: str  # "proved" | "exhausted" | "passes" | "timeout"
    tree: ProofTree | None
    passes: int
    elapsed: float
    red_count: int
    blue_count: int
    dummy_count: int
    relevance_calls: int
    generate_calls: int
    payoff_calls: int
    root: RedNode = field(repr=False)


class Search:
    """One proof attempt.  Construct, then ``run()``."""

    def __init__(self, ctx: Context, grammar: Grammar, index: TheoremIndex,
                 guidance: GuidanceModel, params: SearchParams | None = None,
                 trace=None):
        self.ctx = ctx
        self.grammar = grammar
        self.index = index
        self.guidance = guidance
        self.params = params or SearchParams()
        self._trace_fn = trace
        self._lock = threading.Lock()
        self._seq = 0
        self._hyp_labels = dict(zip(ctx.e_hyps, ctx.e_labels))
        self._pay_cache: dict[ParseTree, float] = {}
        self._rel_cache: dict[ParseTree, list[float]] = {}
        self._last_cache: dict[ParseTree, ProofTree | None] = {}
        self.passes = 0
        self.red_count = 0
        self.blue_count = 0
        self.dummy_count = 0
        self.relevance_calls = 0
        self.generate_calls = 0
        self.payoff_calls = 0
        self._timed_out = False
        self.root = self._new_red(ctx.goal, None, None)
        if self.root.proven:
            self._trace({"event": "proved", "pass": 0, "rule": self.root.proof.rule})

    # -- driving ------------------------------------------------------------

    def run(self) -> SearchResult:
        start = time.monotonic()
        p = self.params
        deadline = start + p.wall_time if p.wall_time else None
        if p.threads <= 1:
            while self._claim(deadline):
                self._pass()
        else:
            workers = [
                threading.Thread(target=self._worker, args=(deadline,))
                for _ in range(p.threads)
            ]
            for w in workers:
                w.start()
            for w in workers:
                w.join()
        elapsed = time.monotonic() - start
        if self.root.proven:
            status = "proved"
        elif self.root.dead:
            status = "exhausted"
        elif self._timed_out:
            status = "timeout"
        else:
            status = "passes"
        return SearchResult(
            label=self.ctx.label,
            proved=self.root.proven,
            status=status,
            tree=self.root.proof,
            passes=self.passes,
            elapsed=elapsed,
            red_count=self.red_count,
            blue_count=self.blue_count,
            dummy_count=self.dummy_count,
            relevance_calls=self.relevance_calls,
            generate_calls=self.generate_calls,
            payoff_calls=self.payoff_calls,
            root=self.root,
        )

    def _claim(self, deadline) -> bool:
        """Reserve the next pass; False when the search should stop."""
        with self._lock:
            if self.root.proven or self.root.dead:
                return False
            if self.passes >= self.params.max_passes:
                return False
            if deadline is not None and time.monotonic() > deadline:
                self._timed_out = True
                return False
            self.passes += 1
            return True

    def _worker(self, deadline) -> None:
        while self._claim(deadline):
            self._pass()

    # -- one pass -------------------------------------------------------------

    def _pass(self) -> None:
        with self._lock:
            red, path = self._descend()
            viables = None
            if red is not None and red.queue is None:
                viables = viable_theorems(red.expr, self.ctx, self.index)
        if red is None:
            with self._lock:
                self._unwind(path)
            return
        try:
            if viables is not None:
                scores = self._relevance(red.expr, viables)  # no lock held
                with self._lock:
                    if red.queue is None:
                        self._install_queue(red, viables, scores)
            with self._lock:
                entry = heapq.heappop(red.queue)[2] if red.queue else None
            if entry is None:
                with self._lock:
                    self._maybe_die(red)
                    if red.dead:
                        self._trace({"event": "dead", "pass": self.passes,
                                     "goal": self._render(red.expr)})
                return
            if entry.gens is None:
                self.generate_calls += 1
                entry.gens = self.guidance.generate(
                    self.ctx, red.expr, entry.info, entry.constrained,
                    self.params.beam,
                )
            while True:
                with self._lock:
                    picked = self._select_candidate(red, entry)
                if picked is None:
                    with self._lock:
                        self._attach_dummy(red)
                        self._trace({"event": "dummy", "pass": self.passes,
                                     "rule": entry.info.label,
                                     "goal": self._render(red.expr)})
                    return
                subst, value, hyps, key = picked
                prepared = self._prepare_reds(hyps)  # payoff calls, no lock
                with self._lock:
                    if key in red.child_keys:  # raced with another pass
                        continue  # same entry; idx is already past the dupe
                    self._attach_blue(red, entry, subst, value, hyps, key, prepared)
                    self._trace({"event": "expand", "pass": self.passes,
                                 "rule": entry.info.label,
                                 "goal": self._render(red.expr),
                                 "open": len(hyps)})
                    if self.root.proven:
                        self._trace({"event": "proved", "pass": self.passes,
                                     "rule": self.root.proof.rule})
                return
        finally:
            with self._lock:
                self._unwind(path)

    def _descend(self):
        """Walk to the red node this pass will expand.

        Returns (red, chosen_blues); red is None when the pass ended by
        marking a branch dead (or raced with a finished search).  Chosen
        blue nodes carry a virtual loss until the pass unwinds.
        """
        node = self.root
        path: list[BlueNode] = []
        while True:
            if node.proven or node.dead:
                return None, path
            quota = -(-node.n // self.params.quota_divisor)  # ceil
            alive = [b for b in node.children if not b.proven and not b.dead]
            expandable = node.queue is None or node.queue
            if expandable and (len(node.children) < quota or not alive):
                return node, path
            if not alive:
                self._maybe_die(node)
                if node.dead:
                    self._trace({"event": "dead", "pass": self.passes,
                                 "goal": self._render(node.expr)})
                return None, path
            ln_n = math.log(node.n)
            best = None
            best_p = -math.inf
            for b in alive:
                p = (
                    b.x / (b.n + self.params.gamma * b.t)
                    + self.params.beta * b.v / b.n
                    + self.params.alpha * math.sqrt(ln_n / b.n)
                )
                if p > best_p:
                    best, best_p = b, p
            best.t += 1
            path.append(best)
            chosen = None
            chosen_mean = math.inf
            for r in best.children:
                if r.proven:
                    continue
                mean = r.x / r.n
                if mean < chosen_mean:
                    chosen, chosen_mean = r, mean
            if chosen is None:  # all children proven: a completion race
                return None, path
            node = chosen

    def _unwind(self, path: list[BlueNode]) -> None:
        for b in path:
            b.t -= 1

    # -- queue ---------------------------------------------------------------

    def _relevance(self, expr: ParseTree, viables) -> list[float]:
        scores = self._rel_cache.get(expr)
        if scores is None:
            self.relevance_calls += 1
            scores = self.guidance.relevance(self.ctx, expr, list(viables))
            if len(scores) != len(viables) or any(s < 0 for s in scores):
                scores = [1.0] * len(viables)
            self._rel_cache[expr] = scores
        return scores

    def _install_queue(self, red: RedNode, viables, scores: list[float]) -> None:
        best = max(scores, default=0.0)
        red.queue = []
        for (info, constrained), s in zip(viables, scores):
            rel = s / best if best > 0 else 1.0
            self._push_entry(red, _QueueEntry(info, constrained, rel), rel)

    def _push_entry(self, red: RedNode, entry: _QueueEntry, value: float) -> None:
        self._seq += 1
        heapq.heappush(red.queue, (-value, self._seq, entry))

    def _select_candidate(self, red: RedNode, entry: _QueueEntry):
        """Next usable substitution of a popped entry, or None if exhausted.

        Re-pushing the entry (for its following candidate) happens in
        ``_attach_blue`` so a raced duplicate candidate retries cleanly.
        """
        gens = entry.gens
        base = gens[0][1] if gens and gens[0][1] > 0 else 1.0
        limit = self.params.token_limit
        while entry.idx < len(gens):
            subst, prob = gens[entry.idx]
            entry.idx += 1
            if not validate_candidate(subst, entry.info, entry.constrained, self.ctx):
                continue
            if any(
                subst[v].size > limit
                for v, _ in unconstrained_variables(entry.info, entry.constrained)
            ):
                continue
            key = (entry.info.label, frozenset(subst.items()))
            if key in red.child_keys:
                continue
            hyps = [
                apply_substitution(h, subst)
                for h, prov in zip(entry.info.e_hyps, entry.info.e_provable)
                if prov
            ]
            if self._circular(red, hyps):
                continue
            ratio = min(1.0, max(prob, 0.0) / base)
            return subst, entry.rel * ratio, hyps, key
        return None

    def _circular(self, red: RedNode, hyps) -> bool:
        ancestors = set()
        node = red
        while node is not None:
            ancestors.add(node.expr)
            node = node.parent.parent if node.parent else None
        return any(h in ancestors for h in hyps)

    # -- node creation ---------------------------------------------------------

    def _prepare_reds(self, hyps):
        """Payoff or immediate proof for each subgoal; guidance runs unlocked."""
        prepared = []
        for expr in hyps:
            proof = self._last_step(expr)
            prepared.append((proof, 1.0 if proof else self._payoff(expr)))
        return prepared

    def _payoff(self, expr: ParseTree) -> float:
        y = self._pay_cache.get(expr)
        if y is None:
            self.payoff_calls += 1
            y = self.guidance.payoff(self.ctx, expr)
            if not isinstance(y, (int, float)) or not (0.0 <= y <= 1.0):
                y = 0.5
            self._pay_cache[expr] = y
        return y

    def _last_step(self, expr: ParseTree) -> ProofTree | None:
        """A one-step proof of ``expr``, if its hypotheses are all given.

        Covers ``expr`` being a context hypothesis itself, a theorem with no
        essential hypotheses, and a theorem whose essential hypotheses all
        match context hypotheses.
        """
        if expr in self._last_cache:
            return self._last_cache[expr]
        result = None
        hyp_label = self._hyp_labels.get(expr)
        if hyp_label is not None:
            result = ProofTree(expr, hyp_label, {}, (), is_hyp=True)
        else:
            for info, constrained in viable_theorems(expr, self.ctx, self.index):
                step = self._match_all_hyps(info, constrained, expr)
                if step is not None:
                    result = step
                    break
        self._last_cache[expr] = result
        return result

    def _match_all_hyps(self, info: TheoremInfo, constrained: Substitution,
                        expr: ParseTree) -> ProofTree | None:
        ctx = self.ctx

        def extend(i, sub, picks):
            if i == len(info.e_hyps):
                if len(sub) == len(info.float_vars) and validate_candidate(
                    sub, info, constrained, ctx
                ):
                    yield sub, picks
                return
            pat = info.e_hyps[i]
            for j, hyp in enumerate(ctx.e_hyps):
                nxt = match_assertion(pat, hyp, sub)
                if nxt is not None:
                    yield from extend(i + 1, nxt, picks + (j,))

        found = next(extend(0, dict(constrained), ()), None)
        if found is None:
            return None
        sub, picks = found
        children = tuple(
            ProofTree(ctx.e_hyps[j], ctx.e_labels[j], {}, (), is_hyp=True)
            for j in picks
        )
        return ProofTree(expr, info.label, sub, children)

    def _new_red(self, expr: ParseTree, parent: BlueNode | None, prepared) -> RedNode:
        red = RedNode(expr, parent)
        self.red_count += 1
        proof, y = prepared if prepared is not None else (
            self._last_step(expr),
            None,
        )
        if proof is not None:
            red.proof = proof
            red.proven = True
            red.y = 1.0
        else:
            red.y = y if y is not None else self._payoff(expr)
        red.x = red.y
        return red

    def _attach_blue(self, red: RedNode, entry: _QueueEntry, subst: Substitution,
                     value: float, hyps, key, prepared) -> None:
        if entry.idx < len(entry.gens):
            base = entry.gens[0][1] if entry.gens[0][1] > 0 else 1.0
            nxt = min(1.0, max(entry.gens[entry.idx][1], 0.0) / base)
            self._push_entry(red, entry, entry.rel * nxt)
        blue = BlueNode(entry.info.label, subst, red, value)
        self.blue_count += 1
        for expr, prep in zip(hyps, prepared):
            blue.children.append(self._new_red(expr, blue, prep))
        blue.n = 1 + sum(r.n for r in blue.children)
        blue.x = sum(r.x for r in blue.children)
        red.children.append(blue)
        red.child_keys.add(key)
        if all(r.proven for r in blue.children):
            self._complete(blue)
        self._recompute_up(red)

    def _attach_dummy(self, red: RedNode) -> None:
        blue = BlueNode("", {}, red, 0.0)
        blue.dead = True
        blue.dummy = True
        self.dummy_count += 1
        red.children.append(blue)
        self._maybe_die(red)
        self._recompute_up(red)

    # -- propagation -------------------------------------------------------------

    def _complete(self, blue: BlueNode) -> None:
        while True:
            blue.proven = True
            red = blue.parent
            if red.proven:
                return
            red.proof = ProofTree(
                red.expr, blue.rule, blue.subst,
                tuple(r.proof for r in blue.children),
            )
            red.proven = True
            blue = red.parent
            if blue is None or not all(r.proven for r in blue.children):
                return

    def _maybe_die(self, red: RedNode) -> None:
        while (
            red is not None
            and not red.proven
            and not red.dead
            and red.queue is not None
            and not red.queue
            and all(b.dead for b in red.children)
        ):
            red.dead = True
            blue = red.parent
            if blue is None or blue.dead:
                return
            blue.dead = True
            red = blue.parent

    def _recompute_up(self, node) -> None:
        while node is not None:
            node.n = 1 + sum(c.n for c in node.children)
            node.x = node.y + sum(c.x for c in node.children)
            node = node.parent

    # -- misc ---------------------------------------------------------------------

    def _render(self, expr: ParseTree) -> str:
        return " ".join(self.grammar.render(expr))

    def _trace(self, event: dict) -> None:
        if self._trace_fn is not None:
            self._trace_fn(event)


def prove(db: Database, label: str, guidance: GuidanceModel,
          params: SearchParams | None = None, *, grammar: Grammar | None = None,
          index: TheoremIndex | None = None, trace=None) -> SearchResult:
    """Search for a proof of one proposition in its own context."""
    st = db.label_index.get(label)
    if st is None or not st.is_assertion:
        raise MMError(f"{label!r} is not an assertion in this database")
    if st.typecode != db.provable_typecode:
        raise MMError(f"{label!r} is a syntax assertion; nothing to search")
    grammar = grammar or build_grammar(db)
    index = index or TheoremIndex(db, grammar)
    ctx = make_context(st, db, grammar)
    return Search(ctx, grammar, index, guidance, params, trace=trace).run()


def trace_writer(fh):
    """A trace callback appending one JSON object per line to ``fh``."""

    def write(event: dict) -> None:
        fh.write(json.dumps(event, sort_keys=True) + "\n")

    return write
