"""Proof verification: the trusted RPN kernel and proof-tree utilities.

``verify_rpn_proof`` is the soundness anchor of the whole system: a pure
token-level stack machine over the database, independent of the grammar,
matching and search layers.  Everything that claims to prove something must
serialize its proof to RPN and pass this kernel.

Proof trees are the structured counterpart used by search, datasets and
guidance: ``tree_from_rpn`` replays a proof into a tree, ``verify_proof_tree``
checks a tree node by node, ``prune`` canonicalizes redundant subproofs and
``emit_rpn`` serializes a tree back to kernel-checkable RPN.
"""

from __future__ import annotations

from dataclasses import dataclass

from mmprover.database import (
    ESSENTIAL_HYP,
    FLOATING_HYP,
    PROPOSITION,
    Database,
    MMError,
    Statement,
    decompress_proof,
)
from mmprover.grammar import Grammar, ParseTree
from mmprover.unify import (
    Context,
    Substitution,
    TheoremIndex,
    apply_substitution,
    check_disjoint,
)

Expression = tuple[str, ...]


# ---------------------------------------------------------------------------
# Trusted kernel


def verify_rpn_proof(prop: Statement, proof: list[str], db: Database) -> None:
    """Check an RPN label proof of ``prop`` against the database, or raise.

    Pure symbol pushing: hypotheses push their bodies, an assertion pops one
    entry per mandatory hypothesis, recovers the substitution from the
    floating ones, checks the essential ones and the disjoint-variable
    restrictions, then pushes its substituted body.  The proof is accepted
    only if exactly the statement's body remains.
    """
    if not prop.is_assertion:
        raise MMError(f"{prop.label!r} is not an assertion", prop.line)
    if not proof:
        raise MMError(f"{prop.label!r}: empty proof", prop.line)
    assert prop.frame is not None
    active_hyp_labels = {lab for _, (_, lab) in prop.active_floats.items()}
    active_hyp_labels.update(lab for _, lab, _ in prop.frame.hypotheses)

    stack: list[Expression] = []
    for label in proof:
        st = db[label]
        if st.kind in (FLOATING_HYP, ESSENTIAL_HYP):
            if label not in active_hyp_labels:
                raise MMError(
                    f"{prop.label!r}: hypothesis {label!r} is not active here",
                    prop.line,
                )
            stack.append(st.body)
        elif st.is_assertion:
            if st.pos >= prop.pos:
                raise MMError(
                    f"{prop.label!r}: {label!r} does not precede it in the database",
                    prop.line,
                )
            stack.append(_apply_assertion(prop, st, stack, db))
        else:
            raise MMError(f"{prop.label!r}: label {label!r} is not usable in a proof")
    if len(stack) != 1:
        raise MMError(
            f"{prop.label!r}: proof leaves {len(stack)} entries on the stack",
            prop.line,
        )
    if stack[0] != prop.body:
        raise MMError(
            f"{prop.label!r}: proof proves {' '.join(stack[0])!r} "
            f"instead of {' '.join(prop.body)!r}",
            prop.line,
        )


def _apply_assertion(
    prop: Statement, st: Statement, stack: list[Expression], db: Database
) -> Expression:
    """Pop st's hypotheses off the stack and return its substituted body."""
    assert st.frame is not None
    hyps = st.frame.hypotheses
    n = len(hyps)
    if n > len(stack):
        raise MMError(f"{prop.label!r}: stack underflow applying {st.label!r}", prop.line)
    entries = stack[len(stack) - n :] if n else []
    del stack[len(stack) - n :]

    subst: dict[str, Expression] = {}
    for (kind, lab, body), entry in zip(hyps, entries):
        if kind == "f":
            tc, var = body
            if entry[0] != tc:
                raise MMError(
                    f"{prop.label!r}: applying {st.label!r}, {lab!r} needs typecode "
                    f"{tc!r}, stack has {' '.join(entry)!r}",
                    prop.line,
                )
            subst[var] = entry[1:]
        else:
            expected = _substitute(body, subst)
            if entry != expected:
                raise MMError(
                    f"{prop.label!r}: applying {st.label!r}, hypothesis {lab!r} "
                    f"expects {' '.join(expected)!r}, stack has {' '.join(entry)!r}",
                    prop.line,
                )

    for x, y in st.frame.dvs:
        x_vars = [s for s in subst[x] if s in db.variables]
        y_vars = [s for s in subst[y] if s in db.variables]
        for z in x_vars:
            for w in y_vars:
                if z == w or (min(z, w), max(z, w)) not in prop.active_dvs:
                    raise MMError(
                        f"{prop.label!r}: applying {st.label!r} violates "
                        f"$d {x} {y} (via {z!r}, {w!r})",
                        prop.line,
                    )
    return _substitute(st.body, subst)


def _substitute(body: Expression, subst: dict[str, Expression]) -> Expression:
    out: list[str] = []
    for sym in body:
        img = subst.get(sym)
        if img is None:
            out.append(sym)
        else:
            out.extend(img)
    return tuple(out)


def verify_proposition(prop: Statement, db: Database) -> None:
    """Decompress and kernel-check the stored proof of a proposition."""
    if prop.kind != PROPOSITION:
        raise MMError(f"{prop.label!r} is not a proposition")
    verify_rpn_proof(prop, decompress_proof(prop, db), db)


def verify_database(db: Database) -> list[tuple[str, str | None]]:
    """Kernel-check every proposition; (label, None | error message) each."""
    results = []
    for prop in db.propositions():
        try:
            verify_proposition(prop, db)
            results.append((prop.label, None))
        except MMError as exc:
            results.append((prop.label, str(exc)))
    return results


# ---------------------------------------------------------------------------
# Proof trees


@dataclass(eq=True)
class ProofTree:
    """A complete proof of one provable expression.

    Each node applies a theorem (``rule``) under a full substitution of its
    floating variables, with one child proof per provable essential
    hypothesis, in frame order.  Hypothesis leaves reference a context
    hypothesis by label instead (``is_hyp``).
    """

    expr: ParseTree
    rule: str
    subst: Substitution
    children: tuple["ProofTree", ...]
    is_hyp: bool = False

    def node_count(self) -> int:
        """Number of proof nodes (proved expressions) in this subtree."""
        return 1 + sum(c.node_count() for c in self.children)

    def walk(self):
        stack = [self]
        while stack:
            n = stack.pop()
            yield n
            stack.extend(reversed(n.children))

    def __repr__(self):
        return f"ProofTree({self.rule}: {self.expr!r}, {len(self.children)} kids)"


def tree_from_rpn(prop: Statement, proof: list[str], db: Database,
                  grammar: Grammar, index: TheoremIndex, ctx: Context):
    """Replay an RPN proof into a ProofTree (or a ParseTree for syntax goals).

    Syntax steps (constructor axioms, syntax propositions) build expression
    trees; provable steps build proof nodes.  Substitutions and disjointness
    are checked the same way the kernel does, so a replayed tree is faithful
    to the proof it came from.
    """
    if not proof:
        raise MMError(f"{prop.label!r}: empty proof", prop.line)
    float_of = {lab: (v, tc) for v, (tc, lab) in prop.active_floats.items()}
    ehyp_of = dict(zip(ctx.e_labels, ctx.e_hyps))

    stack: list = []
    for label in proof:
        st = db[label]
        if st.kind == FLOATING_HYP:
            if label not in float_of:
                raise MMError(f"{prop.label!r}: float {label!r} not active", prop.line)
            v, tc = float_of[label]
            stack.append(ParseTree(v, tc, (), True))
        elif st.kind == ESSENTIAL_HYP:
            if label not in ehyp_of:
                raise MMError(f"{prop.label!r}: hypothesis {label!r} not active", prop.line)
            stack.append(ProofTree(ehyp_of[label], label, {}, (), is_hyp=True))
        elif st.is_assertion:
            if st.pos >= prop.pos:
                raise MMError(
                    f"{prop.label!r}: {label!r} does not precede it", prop.line
                )
            prod = grammar.by_label.get(label)
            if prod is not None:
                if prod.arity > len(stack):
                    raise MMError(f"{prop.label!r}: stack underflow at {label!r}", prop.line)
                popped = stack[len(stack) - prod.arity :] if prod.arity else []
                if prod.arity:
                    del stack[len(stack) - prod.arity :]
                children = [None] * prod.arity
                for i, entry in enumerate(popped):
                    slot = prod.float_to_slot[i]
                    want_tc = prod.slots[slot][2]
                    if not isinstance(entry, ParseTree) or entry.typecode != want_tc:
                        raise MMError(
                            f"{prop.label!r}: {label!r} expects a {want_tc!r} "
                            f"at argument {i}",
                            prop.line,
                        )
                    children[slot] = entry
                stack.append(ParseTree(label, prod.typecode, tuple(children), False))
            else:
                stack.append(_replay_assertion(prop, label, stack, index, ctx))
        else:
            raise MMError(f"{prop.label!r}: label {label!r} is not usable in a proof")
    if len(stack) != 1:
        raise MMError(f"{prop.label!r}: proof leaves {len(stack)} entries", prop.line)
    top = stack[0]
    want = ctx.goal
    got = top.expr if isinstance(top, ProofTree) else top
    if got != want:
        raise MMError(f"{prop.label!r}: replayed proof proves a different statement",
                      prop.line)
    return top


def _replay_assertion(prop, label, stack, index: TheoremIndex, ctx: Context):
    info = index.step_info(label)
    n = len(info.hyp_labels)
    if n > len(stack):
        raise MMError(f"{prop.label!r}: stack underflow at {label!r}", prop.line)
    entries = stack[len(stack) - n :] if n else []
    if n:
        del stack[len(stack) - n :]

    subst: Substitution = {}
    children: list[ProofTree] = []
    floats = iter(info.float_vars)
    e_iter = iter(zip(info.e_hyps, info.e_provable))
    st_frame = info.statement.frame
    assert st_frame is not None
    for (kind, lab, _), entry in zip(st_frame.hypotheses, entries):
        if kind == "f":
            v, tc = next(floats)
            if not isinstance(entry, ParseTree) or entry.typecode != tc:
                raise MMError(
                    f"{prop.label!r}: applying {label!r}, {lab!r} needs a {tc!r}",
                    prop.line,
                )
            subst[v] = entry
        else:
            e_tree, e_prov = next(e_iter)
            expected = apply_substitution(e_tree, subst)
            if e_prov:
                if not isinstance(entry, ProofTree) or entry.expr != expected:
                    raise MMError(
                        f"{prop.label!r}: applying {label!r}, hypothesis {lab!r} "
                        f"mismatches",
                        prop.line,
                    )
                children.append(entry)
            else:
                if not isinstance(entry, ParseTree) or entry != expected:
                    raise MMError(
                        f"{prop.label!r}: applying {label!r}, syntax hypothesis "
                        f"{lab!r} mismatches",
                        prop.line,
                    )
    if not check_disjoint(subst, info.dvs, ctx):
        raise MMError(
            f"{prop.label!r}: applying {label!r} violates disjointness", prop.line
        )
    result = apply_substitution(info.assertion, subst)
    if not info.provable:
        return result
    return ProofTree(result, label, subst, tuple(children), False)


def verify_proof_tree(tree: ProofTree, ctx: Context, index: TheoremIndex) -> None:
    """Check a proof tree node by node against its context, or raise.

    Errors name the first failing node by its path from the root (e.g.
    ``root.1.0``) and the reason.
    """

    def fail(path, why):
        raise MMError(f"proof tree node {path}: {why}")

    def check(node: ProofTree, path: str) -> None:
        if not isinstance(node, ProofTree):
            fail(path, "not a proof node")
        if node.is_hyp:
            if node.rule not in ctx.e_labels:
                fail(path, f"hypothesis {node.rule!r} is not in the context")
            want = ctx.e_hyps[ctx.e_labels.index(node.rule)]
            if node.expr != want:
                fail(path, f"hypothesis {node.rule!r} states a different expression")
            if node.children:
                fail(path, "hypothesis leaves cannot have children")
            return
        info = index.by_label.get(node.rule)
        if info is None:
            fail(path, f"{node.rule!r} is not a provable assertion")
        if info.db_position >= ctx.db_position:
            fail(path, f"{node.rule!r} does not precede {ctx.label!r}")
        for v, tc in info.float_vars:
            img = node.subst.get(v)
            if img is None:
                fail(path, f"substitution misses {v!r}")
            if img.typecode != tc:
                fail(path, f"substitution maps {v!r} to a {img.typecode!r}")
            for z in img.variables():
                if z not in ctx.variables:
                    fail(path, f"substitution uses {z!r}, unknown in the context")
        if apply_substitution(info.assertion, node.subst) != node.expr:
            fail(path, f"{node.rule!r} does not conclude the node's expression")
        provable_hyps = [t for t, p in zip(info.e_hyps, info.e_provable) if p]
        if len(node.children) != len(provable_hyps):
            fail(path, f"{node.rule!r} needs {len(provable_hyps)} subproofs, "
                       f"got {len(node.children)}")
        if not check_disjoint(node.subst, info.dvs, ctx):
            fail(path, f"{node.rule!r} violates disjointness")
        for k, (child, e_tree) in enumerate(zip(node.children, provable_hyps)):
            want = apply_substitution(e_tree, node.subst)
            if not isinstance(child, ProofTree) or child.expr != want:
                fail(f"{path}.{k}", "does not prove its hypothesis")
            check(child, f"{path}.{k}")

    check(tree, "root")


def prune(tree: ProofTree) -> ProofTree:
    """Replace every subproof by the best known proof of its expression.

    Best means fewest proof nodes; ties keep the earliest subproof
    encountered (bottom-up, left to right).  The result proves the same
    expression with no expression proved twice in different ways.
    """
    best: dict[ParseTree, tuple[int, ProofTree]] = {}

    def rebuild(node: ProofTree) -> ProofTree:
        children = tuple(rebuild(c) for c in node.children)
        cand = (
            node
            if children == node.children
            else ProofTree(node.expr, node.rule, node.subst, children, node.is_hyp)
        )
        size = cand.node_count()
        cur = best.get(node.expr)
        if cur is None or size < cur[0]:
            best[node.expr] = (size, cand)
        return best[node.expr][1]

    return rebuild(tree)


def emit_rpn(tree: ProofTree, ctx: Context, grammar: Grammar, db: Database) -> list[str]:
    """Serialize a proof tree to kernel-checkable RPN labels."""
    float_label = {v: lab for v, (_, lab) in ctx.statement.active_floats.items()}
    out: list[str] = []

    def emit_syntax(t: ParseTree) -> None:
        if t.is_var:
            lab = float_label.get(t.label)
            if lab is None:
                raise MMError(f"variable {t.label!r} has no hypothesis in context")
            out.append(lab)
            return
        prod = grammar.by_label.get(t.label)
        if prod is None:
            raise MMError(f"{t.label!r} is not a constructor")
        for i in range(prod.arity):
            emit_syntax(t.children[prod.float_to_slot[i]])
        out.append(t.label)

    def emit(node: ProofTree) -> None:
        if node.is_hyp:
            out.append(node.rule)
            return
        st = db[node.rule]
        assert st.frame is not None
        kids = iter(node.children)
        floats = iter(st.frame.float_vars)
        e_bodies = iter(st.frame.e_hyps)
        for kind, _, _ in st.frame.hypotheses:
            if kind == "f":
                v, _, _ = next(floats)
                img = node.subst.get(v)
                if img is None:
                    raise MMError(f"{node.rule!r}: substitution misses {v!r}")
                emit_syntax(img)
            else:
                lab, body = next(e_bodies)
                if body[0] == db.provable_typecode:
                    emit(next(kids))
                else:
                    # syntax hypothesis: rebuild its tree from the substitution
                    e_tree = grammar.parse_body(
                        body, {v: tc for v, tc, _ in st.frame.float_vars}
                    )
                    emit_syntax(apply_substitution(e_tree, node.subst))
        out.append(node.rule)

    emit(tree)
    return out


def proposition_source(label: str, body, proof: list[str]) -> str:
    """Format a ``$p`` statement block with a normal (uncompressed) proof."""
    return f"{label} $p {' '.join(body)} $= {' '.join(proof)} $.\n"
