"""Test utilities: random parse-tree generation over a grammar."""

from mmprover.grammar import Grammar, ParseTree, var_node


def random_tree(grammar: Grammar, typecode: str, rng, context_vars: dict[str, str],
                budget: int = 40) -> ParseTree:
    """A random well-typed tree, biased toward leaves as the budget shrinks."""
    vars_of = [v for v, tc in context_vars.items() if tc == typecode]
    prods = [
        p
        for p in grammar.productions.get(typecode, ())
        if budget > p.arity or (not vars_of and not p.arity)
    ]
    leafy = [p for p in prods if p.arity == 0]
    if budget <= 1 or not prods:
        if vars_of:
            return var_node(rng.choice(vars_of), typecode)
        if leafy:
            prods = leafy
        if not prods:
            raise ValueError(f"cannot generate a {typecode!r} leaf")
    elif vars_of and rng.random() < 0.35:
        return var_node(rng.choice(vars_of), typecode)
    p = rng.choice(prods)
    share = max(1, (budget - 1) // max(1, p.arity))
    children = [
        random_tree(grammar, slot_tc, rng, context_vars, share)
        for _, _, slot_tc in p.slots
    ]
    return ParseTree(p.label, typecode, tuple(children), False)
