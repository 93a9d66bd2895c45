"""One-sided unification against assertion patterns, and theorem viability.

Matching is substitution recovery: given an assertion's parse tree as a
pattern and a concrete expression tree as the target, find the unique
substitution on the pattern's variables that maps one onto the other.
Disjointness of a substitution is judged against a proof context: the pairs
required disjoint by the theorem must land on context variables that the
context itself declares disjoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from mmprover.database import Database, MMError, Statement
from mmprover.grammar import Grammar, ParseTree

Substitution = dict[str, ParseTree]


def apply_substitution(tree: ParseTree, subst: Substitution) -> ParseTree:
    """Replace variable leaves by their images; unbound variables stay."""
    if tree.is_var:
        return subst.get(tree.label, tree)
    changed = False
    children = []
    for c in tree.children:
        nc = apply_substitution(c, subst)
        changed = changed or nc is not c
        children.append(nc)
    if not changed:
        return tree
    return ParseTree(tree.label, tree.typecode, tuple(children), False)


def match_assertion(
    pattern: ParseTree, target: ParseTree, subst: Substitution | None = None
) -> Substitution | None:
    """The unique substitution with pattern[subst] == target, or None.

    An optional starting substitution constrains the match; it is never
    mutated.  Uniqueness holds by construction: every pattern variable
    occurrence pins its image to the facing subtree.
    """
    out: Substitution = dict(subst) if subst else {}
    stack = [(pattern, target)]
    while stack:
        p, t = stack.pop()
        if p.is_var:
            bound = out.get(p.label)
            if bound is None:
                if t.typecode != p.typecode:
                    return None
                out[p.label] = t
            elif bound != t:
                return None
        else:
            if t.is_var or t.label != p.label:
                return None
            stack.extend(zip(p.children, t.children))
    return out


@dataclass
class Context:
    """The proving context of one proposition: f_C, e_C and d_C.

    ``variables`` holds every variable with an active floating hypothesis in
    the proposition's scope (optional variables included); ``e_hyps`` the
    mandatory essential hypotheses as trees; ``dvs`` every active disjoint
    pair.  ``viable_cache`` memoizes viable_theorems per goal expression.
    """

    label: str
    db_position: int
    variables: dict[str, str]
    e_hyps: tuple[ParseTree, ...]
    e_labels: tuple[str, ...]
    dvs: frozenset[tuple[str, str]]
    goal: ParseTree
    statement: Statement
    viable_cache: dict = field(default_factory=dict, repr=False)


def make_context(st: Statement, db: Database, grammar: Grammar) -> Context:
    """Build the proof context of an assertion statement."""
    if not st.is_assertion:
        raise MMError(f"{st.label!r} is not an assertion")
    assert st.frame is not None
    variables = {v: tc for v, (tc, _) in st.active_floats.items()}
    dvs = st.active_dvs
    e_trees = []
    e_labels = []
    for lab, body in st.frame.e_hyps:
        e_trees.append(grammar.parse_body(body, variables))
        e_labels.append(lab)
    goal = grammar.parse_body(st.body, variables)
    return Context(
        label=st.label,
        db_position=st.pos,
        variables=variables,
        e_hyps=tuple(e_trees),
        e_labels=tuple(e_labels),
        dvs=dvs,
        goal=goal,
        statement=st,
    )


def check_disjoint(subst: Substitution, dv_pairs, ctx: Context) -> bool:
    """Does the substitution respect the theorem's disjointness in ctx?

    For each required pair (x, y) with both variables bound, every context
    variable of subst[x] must be declared disjoint in ctx from every context
    variable of subst[y]; sharing a variable always fails.  Unbound sides are
    skipped, so partially built substitutions can be pre-checked.
    """
    for x, y in dv_pairs:
        tx = subst.get(x)
        ty = subst.get(y)
        if tx is None or ty is None:
            continue
        vx = [z for z in tx.variables() if z in ctx.variables]
        vy = [w for w in ty.variables() if w in ctx.variables]
        for z in vx:
            for w in vy:
                if z == w:
                    return False
                if (min(z, w), max(z, w)) not in ctx.dvs:
                    return False
    return True


@dataclass(frozen=True)
class TheoremInfo:
    """An assertion prepared for matching and RPN replay.

    ``assertion`` and ``e_hyps`` are parse trees over the frame's variables;
    ``e_provable`` flags which essential hypotheses carry the provable
    typecode (only those have proof subtrees of their own).
    """

    label: str
    db_position: int
    provable: bool
    assertion: ParseTree
    e_hyps: tuple[ParseTree, ...]
    e_provable: tuple[bool, ...]
    float_vars: tuple[tuple[str, str], ...]  # (var, typecode), frame order
    hyp_labels: tuple[str, ...]  # mandatory hypothesis labels, frame order
    dvs: frozenset[tuple[str, str]]
    statement: Statement = field(hash=False, compare=False)

    @property
    def variables(self) -> dict[str, str]:
        return dict(self.float_vars)


class TheoremIndex:
    """Assertions of a database prepared for application, indexed by root.

    Search candidates are the provable assertions whose hypotheses are all
    provable too; a candidate whose assertion is a bare variable matches any
    expression, the rest are bucketed by root constructor label.  step_info
    additionally covers syntax assertions so proofs that apply them (syntax
    propositions, say) can be replayed into trees.
    """

    def __init__(self, db: Database, grammar: Grammar):
        self.db = db
        self.grammar = grammar
        self.infos: list[TheoremInfo] = []
        self.by_label: dict[str, TheoremInfo] = {}  # provable assertions only
        self._syntax_infos: dict[str, TheoremInfo] = {}
        self._var_rooted: list[TheoremInfo] = []
        self._by_root: dict[str, list[TheoremInfo]] = {}
        for st in db.provable_assertions():
            info = self._build_info(st)
            self.infos.append(info)
            self.by_label[st.label] = info
            if not all(info.e_provable):
                continue  # syntax-typed hypotheses are not searchable goals
            if info.assertion.is_var:
                self._var_rooted.append(info)
            else:
                self._by_root.setdefault(info.assertion.label, []).append(info)

    def _build_info(self, st: Statement) -> TheoremInfo:
        assert st.frame is not None
        variables = {v: tc for v, tc, _ in st.frame.float_vars}
        try:
            assertion = self.grammar.parse_body(st.body, variables)
            e_trees = tuple(
                self.grammar.parse_body(body, variables)
                for _, body in st.frame.e_hyps
            )
        except MMError as exc:
            raise MMError(f"cannot index {st.label!r}: {exc}", st.line) from exc
        return TheoremInfo(
            label=st.label,
            db_position=st.pos,
            provable=st.typecode == self.db.provable_typecode,
            assertion=assertion,
            e_hyps=e_trees,
            e_provable=tuple(
                body[0] == self.db.provable_typecode for _, body in st.frame.e_hyps
            ),
            float_vars=tuple((v, tc) for v, tc, _ in st.frame.float_vars),
            hyp_labels=tuple(lab for _, lab, _ in st.frame.hypotheses),
            dvs=st.frame.dvs,
            statement=st,
        )

    def step_info(self, label: str) -> TheoremInfo:
        """Info for any assertion label, provable or syntax (lazily built)."""
        hit = self.by_label.get(label) or self._syntax_infos.get(label)
        if hit is None:
            st = self.db[label]
            if not st.is_assertion:
                raise MMError(f"{label!r} is not an assertion")
            hit = self._build_info(st)
            self._syntax_infos[label] = hit
        return hit

    def candidates(self, expr: ParseTree) -> list[TheoremInfo]:
        """Theorems whose assertion root can match expr, in database order."""
        rooted = [] if expr.is_var else self._by_root.get(expr.label, [])
        merged = self._var_rooted + rooted
        merged.sort(key=lambda i: i.db_position)
        return merged


def viable_theorems(expr: ParseTree, ctx: Context, index: TheoremIndex):
    """Theorems applicable to expr in ctx, with their constrained substitutions.

    Viable means: the theorem precedes the context's proposition in the
    database, its assertion matches expr, and the matched (partial)
    substitution passes the disjointness check.  Results are memoized on the
    context per goal expression and returned in database order.
    """
    hit = ctx.viable_cache.get(expr)
    if hit is not None:
        return hit
    out = []
    for info in index.candidates(expr):
        if info.db_position >= ctx.db_position:
            continue
        sub = match_assertion(info.assertion, expr)
        if sub is None:
            continue
        if not check_disjoint(sub, info.dvs, ctx):
            continue
        out.append((info, sub))
    result = tuple(out)
    ctx.viable_cache[expr] = result
    return result
