"""Expression grammar: non-provable axioms as context-free productions.

Axioms whose typecode is not the provable one act as constructor productions
with the typecodes as syntactic categories and the context's variables as
extra terminals.  Expressions parse to unique trees of constructor
applications; ambiguity is a hard error, never silently resolved.

Also home to the token vocabulary and the tree tokenizer: constructor labels
read in depth-first pre-order, free variables renamed to typed dummy tokens,
each token carrying a (depth, degree, parent degree, position) feature.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from mmprover.database import AXIOM, Database, MMError


class NoParseError(MMError):
    """The symbol sequence has no derivation in the grammar."""


class AmbiguousParseError(MMError):
    """The symbol sequence has more than one derivation."""


class ParseTree:
    """An expression as a tree of constructor applications over variables.

    Variable nodes are leaves.  Children of a constructor node follow the
    order of the variable slots in the constructor's body.  Trees are
    immutable, hashable and compare structurally.
    """

    __slots__ = ("label", "typecode", "children", "is_var", "size", "_hash")

    def __init__(self, label: str, typecode: str, children: tuple["ParseTree", ...], is_var: bool):
        self.label = label
        self.typecode = typecode
        self.children = children
        self.is_var = is_var
        self.size = 1 + sum(c.size for c in children)
        self._hash = hash((label, typecode, is_var) + tuple(c._hash for c in children))

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, ParseTree):
            return NotImplemented
        if self._hash != other._hash:
            return False
        stack = [(self, other)]
        while stack:
            a, b = stack.pop()
            if a is b:
                continue
            if (
                a.label != b.label
                or a.typecode != b.typecode
                or a.is_var != b.is_var
                or len(a.children) != len(b.children)
            ):
                return False
            stack.extend(zip(a.children, b.children))
        return True

    def __hash__(self):
        return self._hash

    def __repr__(self):
        if self.is_var:
            return f"Var({self.label}:{self.typecode})"
        inner = ", ".join(repr(c) for c in self.children)
        return f"{self.label}({inner})"

    def variables(self) -> dict[str, str]:
        """All variable symbols in the tree, mapped to their typecodes."""
        out: dict[str, str] = {}
        stack = [self]
        while stack:
            n = stack.pop()
            if n.is_var:
                out[n.label] = n.typecode
            else:
                stack.extend(n.children)
        return out

    def walk(self):
        """Depth-first pre-order traversal."""
        stack = [self]
        while stack:
            n = stack.pop()
            yield n
            stack.extend(reversed(n.children))


def var_node(symbol: str, typecode: str) -> ParseTree:
    return ParseTree(symbol, typecode, (), True)


@dataclass(frozen=True)
class Production:
    """One constructor axiom viewed as a production of its typecode."""

    label: str
    typecode: str
    body: tuple[str, ...]  # symbols after the typecode
    slots: tuple[tuple[int, str, str], ...]  # (body position, variable, slot typecode)
    float_to_slot: tuple[int, ...]  # frame float order -> body-slot index
    db_position: int

    @property
    def arity(self) -> int:
        return len(self.slots)


class Grammar:
    """Constructor productions of a database, indexed for chart parsing."""

    def __init__(self, db: Database):
        self.db = db
        self.provable_typecode = db.provable_typecode
        self.float_typecode_order = list(db.float_typecode_order)
        self.productions: dict[str, list[Production]] = {}
        self.by_label: dict[str, Production] = {}
        self.var_typecodes: dict[str, str] = dict(db.variables)
        self._first: dict[str, frozenset[str]] = {}
        self._parse_cache: dict = {}

        for st in db.assertions():
            if st.kind != AXIOM or st.typecode == self.provable_typecode:
                continue
            assert st.frame is not None
            if st.frame.e_hyps:
                continue  # a derivation rule over syntax, not a constructor
            body = st.body[1:]
            if not body:
                raise MMError(f"constructor {st.label!r} has an empty body", st.line)
            var_tc = {v: tc for v, tc, _ in st.frame.float_vars}
            slots = []
            seen = set()
            for i, sym in enumerate(body):
                if sym in var_tc:
                    if sym in seen:
                        raise MMError(
                            f"constructor {st.label!r} repeats variable {sym!r}", st.line
                        )
                    seen.add(sym)
                    slots.append((i, sym, var_tc[sym]))
            slot_of_var = {v: k for k, (_, v, _) in enumerate(slots)}
            float_to_slot = tuple(slot_of_var[v] for v, _, _ in st.frame.float_vars)
            prod = Production(
                label=st.label,
                typecode=st.typecode,
                body=body,
                slots=tuple(slots),
                float_to_slot=float_to_slot,
                db_position=st.pos,
            )
            self.productions.setdefault(st.typecode, []).append(prod)
            self.by_label[st.label] = prod
        self._reject_unit_cycles()
        self._compute_first_sets()

    def _reject_unit_cycles(self) -> None:
        # A cycle of single-slot productions (tc1 -> tc2 -> ... -> tc1) makes
        # every parse through it infinitely ambiguous; refuse such grammars.
        edges: dict[str, set[str]] = {}
        for tc, prods in self.productions.items():
            for p in prods:
                if len(p.body) == 1 and p.slots:
                    edges.setdefault(tc, set()).add(p.slots[0][2])
        state: dict[str, int] = {}  # 1 = on stack, 2 = done

        def visit(tc, path):
            state[tc] = 1
            for nxt in edges.get(tc, ()):
                if state.get(nxt) == 1:
                    cycle = " -> ".join(path + [nxt])
                    raise MMError(f"unit-production cycle in grammar: {cycle}")
                if state.get(nxt) != 2:
                    visit(nxt, path + [nxt])
            state[tc] = 2

        for tc in edges:
            if state.get(tc) != 2:
                visit(tc, [tc])

    # -- construction helpers ------------------------------------------------

    def node(self, label: str, children) -> ParseTree:
        """Build a constructor node, checking arity and slot typecodes."""
        prod = self.by_label[label]
        children = tuple(children)
        if len(children) != prod.arity:
            raise MMError(
                f"{label!r} takes {prod.arity} children, got {len(children)}"
            )
        for child, (_, _, tc) in zip(children, prod.slots):
            if child.typecode != tc:
                raise MMError(
                    f"{label!r} slot needs {tc!r}, got {child.typecode!r}"
                )
        return ParseTree(label, prod.typecode, children, False)

    # -- FIRST sets for prediction filtering ---------------------------------

    def _compute_first_sets(self) -> None:
        # FIRST(tc) holds constants that can begin a tc-expression plus
        # "VAR:<tc2>" markers when a variable of tc2 can begin one.
        first: dict[str, set[str]] = {tc: set() for tc in self.productions}
        changed = True
        while changed:
            changed = False
            for tc, prods in self.productions.items():
                for p in prods:
                    head = p.body[0]
                    if p.slots and p.slots[0][0] == 0:
                        slot_tc = p.slots[0][2]
                        add = {f"VAR:{slot_tc}"} | first.get(slot_tc, set())
                    else:
                        add = {head}
                    if not add <= first[tc]:
                        first[tc] |= add
                        changed = True
        self._first = {tc: frozenset(s) for tc, s in first.items()}

    def first_terminals(self, tc: str) -> frozenset[str]:
        return self._first.get(tc, frozenset())

    # -- parsing --------------------------------------------------------------

    def parse(self, symbols, context_vars: dict[str, str]) -> ParseTree:
        """Parse a typecode-prefixed symbol sequence into its unique tree.

        ``context_vars`` maps the variables usable as terminals to their
        typecodes.  Raises NoParseError or AmbiguousParseError.
        """
        symbols = tuple(symbols)
        if not symbols:
            raise NoParseError("empty expression")
        key = (symbols, frozenset(context_vars.items()))
        hit = self._parse_cache.get(key)
        if hit is not None:
            return hit
        goal, syms = symbols[0], symbols[1:]
        tree = self._parse_goal(goal, syms, context_vars, symbols)
        self._parse_cache[key] = tree
        return tree

    def parse_body(self, body, context_vars: dict[str, str]) -> ParseTree:
        """Parse a statement body, resolving the provable typecode.

        A provable-typecode body carries no grammatical category of its own;
        the expression after it is parsed as the first float typecode (in
        order of first declaration) that accepts it.  Other bodies parse
        directly.
        """
        body = tuple(body)
        if not body:
            raise NoParseError("empty body")
        if body[0] != self.provable_typecode:
            return self.parse(body, context_vars)
        rest = body[1:]
        for tc in self.float_typecode_order:
            try:
                return self.parse((tc,) + rest, context_vars)
            except NoParseError:
                continue
        raise NoParseError(f"cannot parse {' '.join(body)!r} under any typecode")

    def _parse_goal(self, goal, syms, context_vars, full) -> ParseTree:
        # A bare variable of the goal typecode is its own unique parse: a
        # competing one-symbol constructor derivation would need a unit
        # production goal -> goal, which _reject_unit_cycles rules out.
        if len(syms) == 1 and context_vars.get(syms[0]) == goal:
            return var_node(syms[0], goal)
        tree = self._try_earley(goal, syms, context_vars)
        if tree is None:
            raise NoParseError(f"cannot parse {' '.join(full)!r}")
        return tree

    def _try_earley(self, goal, syms, context_vars):
        """Earley recognizer plus tree extraction; None when no parse."""
        n = len(syms)
        if n == 0 or goal not in self.productions:
            return None
        prods_by_tc = self.productions
        first = self._first
        slot_at = self._slot_at

        # item: (production, dot, origin); queues[j] holds items whose dot
        # sits at input position j.  No production is nullable, so every
        # completion strictly follows the registration of its waiters.
        queues: list[list] = [[] for _ in range(n + 1)]
        charts: list[set] = [set() for _ in range(n + 1)]
        predicted_at: list[set] = [set() for _ in range(n + 1)]
        waiting: dict[tuple[str, int], list] = {}
        # spans[(tc, i)] -> ends j of completed tc constituents over syms[i:j]
        spans: dict[tuple[str, int], set[int]] = {}
        completed_goal = False

        def symbol_key(j):
            s = syms[j]
            tc = context_vars.get(s)
            return f"VAR:{tc}" if tc is not None else s

        def predict(tc, j, out):
            stack = [tc]
            k = symbol_key(j)
            while stack:
                t = stack.pop()
                if t in predicted_at[j]:
                    continue
                predicted_at[j].add(t)
                for p in prods_by_tc.get(t, ()):
                    if slot_at(p, 0) is not None:
                        slot_tc = slot_at(p, 0)[2]
                        if k == f"VAR:{slot_tc}" or k in first.get(slot_tc, ()):
                            out.append((p, 0, j))
                            stack.append(slot_tc)
                    elif k == p.body[0]:
                        out.append((p, 0, j))

        predict(goal, 0, queues[0])
        for j in range(n + 1):
            queue = queues[j]
            chart = charts[j]
            qi = 0
            while qi < len(queue):
                item = queue[qi]
                qi += 1
                if item in chart:
                    continue
                chart.add(item)
                p, dot, origin = item
                if dot == len(p.body):
                    spans.setdefault((p.typecode, origin), set()).add(j)
                    if p.typecode == goal and origin == 0 and j == n:
                        completed_goal = True
                    for wp, wdot, worigin in waiting.get((p.typecode, origin), ()):
                        queue.append((wp, wdot + 1, worigin))
                    continue
                if j >= n:
                    continue
                slot = slot_at(p, dot)
                if slot is None:
                    if syms[j] == p.body[dot]:
                        queues[j + 1].append((p, dot + 1, origin))
                    continue
                slot_tc = slot[2]
                if context_vars.get(syms[j]) == slot_tc:
                    queues[j + 1].append((p, dot + 1, origin))
                    spans.setdefault((slot_tc, j), set()).add(j + 1)
                waiting.setdefault((slot_tc, j), []).append(item)
                predict(slot_tc, j, queue)

        if not completed_goal:
            return None
        return self._extract(goal, n, syms, context_vars, spans)

    @staticmethod
    def _slot_at(p: Production, dot: int):
        for s in p.slots:
            if s[0] == dot:
                return s
        return None

    def _extract(self, goal, n, syms, context_vars, spans):
        """Build the unique tree for syms[0:n] as goal; raise on ambiguity.

        Counts derivations per (typecode, span) capped at two; a second
        derivation anywhere reachable from the root is reported as ambiguity.
        Re-entering an in-progress span is impossible because unit cycles
        are rejected at grammar build and no production is nullable.
        """
        memo: dict = {}
        in_progress: set = set()
        slot_at = self._slot_at

        def derive(tc, i, j):
            # up to two distinct trees for syms[i:j] as tc; two is enough to
            # prove ambiguity at the root, where multiplicity accumulates
            key = (tc, i, j)
            if key in memo:
                return memo[key]
            if key in in_progress:
                raise MMError("internal: derivation cycle slipped past grammar checks")
            in_progress.add(key)
            results = []
            if j - i == 1 and context_vars.get(syms[i]) == tc:
                results.append(var_node(syms[i], tc))
            for p in self.productions.get(tc, ()):
                if len(results) >= 2:
                    break
                for children in match_body(p, 0, i, j, []):
                    results.append(ParseTree(p.label, tc, tuple(children), False))
                    if len(results) >= 2:
                        break
            in_progress.discard(key)
            memo[key] = results
            return results

        def match_body(p, dot, pos, end, acc):
            # yield child tuples matching p.body[dot:] over syms[pos:end]
            if dot == len(p.body):
                if pos == end:
                    yield tuple(acc)
                return
            slot = slot_at(p, dot)
            if slot is None:
                if pos < end and syms[pos] == p.body[dot]:
                    yield from match_body(p, dot + 1, pos + 1, end, acc)
                return
            slot_tc = slot[2]
            for m in sorted(spans.get((slot_tc, pos), ())):
                if m > end:
                    break
                for sub in derive(slot_tc, pos, m):
                    acc.append(sub)
                    yield from match_body(p, dot + 1, m, end, acc)
                    acc.pop()

        roots = derive(goal, 0, n)
        if not roots:
            return None
        if len(roots) >= 2:
            raise AmbiguousParseError(
                f"ambiguous parse of {' '.join(syms)!r} as {goal!r}"
            )
        return roots[0]

    # -- rendering -------------------------------------------------------------

    def render(self, t: ParseTree) -> tuple[str, ...]:
        """Inverse of parse: typecode-prefixed symbol sequence of a tree."""
        out = [t.typecode]
        self._render_into(t, out)
        return tuple(out)

    def _render_into(self, t: ParseTree, out: list[str]) -> None:
        if t.is_var:
            out.append(t.label)
            return
        prod = self.by_label[t.label]
        child_at = {pos: child for (pos, _, _), child in zip(prod.slots, t.children)}
        for i, sym in enumerate(prod.body):
            if i in child_at:
                self._render_into(child_at[i], out)
            else:
                out.append(sym)

    def minimal_tree(self, tc: str, context_vars: dict[str, str]) -> ParseTree | None:
        """Smallest tree of the given typecode over the context's variables."""
        for v, vtc in context_vars.items():
            if vtc == tc:
                return var_node(v, tc)
        best: dict[str, ParseTree] = {}
        for v, vtc in context_vars.items():
            if vtc not in best:
                best[vtc] = var_node(v, vtc)
        changed = True
        while changed:
            changed = False
            for ptc, prods in self.productions.items():
                for p in prods:
                    if any(s[2] not in best for s in p.slots):
                        continue
                    children = tuple(best[s[2]] for s in p.slots)
                    cand = ParseTree(p.label, ptc, children, False)
                    cur = best.get(ptc)
                    if cur is None or cand.size < cur.size:
                        best[ptc] = cand
                        changed = True
        return best.get(tc)


def build_grammar(db: Database) -> Grammar:
    return Grammar(db)


def parse_expression(symbols, grammar: Grammar, context_vars: dict[str, str]) -> ParseTree:
    return grammar.parse(symbols, context_vars)


def render(tree: ParseTree, grammar: Grammar) -> tuple[str, ...]:
    return grammar.render(tree)


# ---------------------------------------------------------------------------
# Token vocabulary and tokenization


EOH = "EOH"
EOS = "EOS"
START = "START"
UV = "UV"
TARGET = "TARGET"
SPECIALS = (EOH, EOS, START, UV, TARGET)


@dataclass(frozen=True)
class TokenVocabulary:
    """Shared token table: constructor tokens, typed dummy variables, specials.

    Token ids are line numbers in the serialized form, so the engine and a
    remote model service agree by construction.
    """

    tokens: tuple[str, ...]
    index: dict[str, int] = field(repr=False)
    kinds: tuple[str, ...] = field(repr=False)  # constructor | dummy | special
    arities: tuple[int, ...] = field(repr=False)
    typecodes: tuple[str | None, ...] = field(repr=False)
    dummies: dict[str, tuple[int, ...]] = field(repr=False)  # typecode -> ids
    # Database declaration position per constructor token (None for dummies
    # and specials).  A model service uses this to restrict generation to
    # constructors declared before the proposition being proved.
    positions: tuple[int | None, ...] = field(repr=False)
    # Child typecodes per constructor token (None for dummies and specials);
    # lets a model service emit only grammatically typable token sequences.
    slots: tuple[tuple[str, ...] | None, ...] = field(repr=False)

    def __len__(self) -> int:
        return len(self.tokens)

    def special(self, name: str) -> int:
        return self.index[name]

    def serialize(self) -> str:
        return "\n".join(self.tokens) + "\n"

    def sha256(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()

    def metadata(self) -> dict:
        return {
            "hash": self.sha256(),
            "specials": {name: self.index[name] for name in SPECIALS},
            "tokens": [
                {
                    "id": i,
                    "token": self.tokens[i],
                    "kind": self.kinds[i],
                    "arity": self.arities[i],
                    "typecode": self.typecodes[i],
                    "position": self.positions[i],
                    "slots": list(self.slots[i]) if self.slots[i] is not None else None,
                }
                for i in range(len(self.tokens))
            ],
            "dummies": {tc: list(ids) for tc, ids in self.dummies.items()},
        }


def dummy_token(typecode: str, k: int) -> str:
    return f"{typecode}#{k}"


def build_vocabulary(db: Database, grammar: Grammar) -> TokenVocabulary:
    """Vocabulary over a database: every constructor, enough dummies, specials.

    The dummy count per typecode is the minimum such that every assertion's
    free variables of that typecode fit.
    """
    need: dict[str, int] = {}
    for st in db.assertions():
        assert st.frame is not None
        per_tc: dict[str, int] = {}
        for _, tc, _ in st.frame.float_vars:
            per_tc[tc] = per_tc.get(tc, 0) + 1
        for tc, cnt in per_tc.items():
            if cnt > need.get(tc, 0):
                need[tc] = cnt

    tokens: list[str] = []
    kinds: list[str] = []
    arities: list[int] = []
    typecodes: list[str | None] = []
    positions: list[int | None] = []
    slots: list[tuple[str, ...] | None] = []

    for tc in sorted(grammar.productions):
        for p in grammar.productions[tc]:
            tokens.append(p.label)
            kinds.append("constructor")
            arities.append(p.arity)
            typecodes.append(tc)
            positions.append(p.db_position)
            # child typecodes in pre-order (body) order
            slots.append(tuple(s[2] for s in p.slots))

    dummies: dict[str, tuple[int, ...]] = {}
    for tc in sorted(need):
        ids = []
        for k in range(need[tc]):
            ids.append(len(tokens))
            tokens.append(dummy_token(tc, k))
            kinds.append("dummy")
            arities.append(0)
            typecodes.append(tc)
            positions.append(None)
            slots.append(None)
        dummies[tc] = tuple(ids)

    for name in SPECIALS:
        tokens.append(name)
        kinds.append("special")
        arities.append(0)
        typecodes.append(None)
        positions.append(None)
        slots.append(None)

    return TokenVocabulary(
        tokens=tuple(tokens),
        index={t: i for i, t in enumerate(tokens)},
        kinds=tuple(kinds),
        arities=tuple(arities),
        typecodes=tuple(typecodes),
        dummies=dummies,
        positions=tuple(positions),
        slots=tuple(slots),
    )


@dataclass
class TokenSequence:
    tokens: list[int]
    features: list[tuple[int, int, int, int]]

    def __post_init__(self):
        assert len(self.tokens) == len(self.features)


def make_renaming(variables: dict[str, str], vocab: TokenVocabulary, rng) -> dict[str, int]:
    """Randomly assign distinct dummy tokens of matching typecode.

    ``rng`` is a random.Random; a None rng assigns dummies in first-use order
    (the canonical renaming used for cached theorem encodings).
    """
    by_tc: dict[str, list[str]] = {}
    for v in variables:
        by_tc.setdefault(variables[v], []).append(v)
    out: dict[str, int] = {}
    for tc, vs in by_tc.items():
        pool = list(vocab.dummies.get(tc, ()))
        if len(vs) > len(pool):
            raise MMError(f"not enough {tc!r} dummy tokens for {len(vs)} variables")
        if rng is None:
            chosen = pool[: len(vs)]
        else:
            chosen = rng.sample(pool, len(vs))
        for v, tok in zip(vs, chosen):
            out[v] = tok
    return out


def tokenize(groups, renaming: dict[str, int], vocab: TokenVocabulary) -> TokenSequence:
    """Tokenize ordered groups of trees.

    Trees within a group are separated by EOH, groups by EOS; there is no
    trailing separator.  ``renaming`` maps every variable symbol appearing in
    the trees to a dummy (or UV/TARGET special) token id; missing variables
    and collisions between two distinct variables are errors.
    """
    used: dict[int, str] = {}
    for v, tok in renaming.items():
        if tok in used and used[tok] != v:
            raise MMError(f"renaming collides {used[tok]!r} and {v!r} on token {tok}")
        used[tok] = v

    eoh = vocab.special(EOH)
    eos = vocab.special(EOS)
    zero = (0, 0, 0, 0)
    toks: list[int] = []
    feats: list[tuple[int, int, int, int]] = []

    def emit_tree(t: ParseTree, depth: int, parent_degree: int, position: int):
        degree = len(t.children)
        if t.is_var:
            if t.label not in renaming:
                raise MMError(f"renaming misses variable {t.label!r}")
            tok = renaming[t.label]
        else:
            tok = vocab.index[t.label]
        toks.append(tok)
        if vocab.kinds[tok] == "special":
            feats.append(zero)
        else:
            feats.append((depth, degree, parent_degree, position))
        for i, c in enumerate(t.children):
            emit_tree(c, depth + 1, degree, i)

    for gi, group in enumerate(groups):
        if gi:
            toks.append(eos)
            feats.append(zero)
        for ti, tree in enumerate(group):
            if ti:
                toks.append(eoh)
                feats.append(zero)
            emit_tree(tree, 0, 0, 0)
    return TokenSequence(toks, feats)


def tree_from_tokens(tokens, vocab: TokenVocabulary, start: int = 0) -> tuple[ParseTree, int]:
    """Decode one pre-order token sequence back into a tree.

    Dummy tokens become variable leaves named after the token itself.
    Returns the tree and the index one past its last token.
    """
    i = start
    if i >= len(tokens):
        raise MMError("truncated token sequence")
    tok = tokens[i]
    kind = vocab.kinds[tok]
    if kind == "dummy":
        return var_node(vocab.tokens[tok], vocab.typecodes[tok]), i + 1
    if kind != "constructor":
        raise MMError(f"unexpected token {vocab.tokens[tok]!r} in tree position")
    i += 1
    children = []
    for _ in range(vocab.arities[tok]):
        child, i = tree_from_tokens(tokens, vocab, i)
        children.append(child)
    tc = vocab.typecodes[tok]
    return ParseTree(vocab.tokens[tok], tc, tuple(children), False), i
