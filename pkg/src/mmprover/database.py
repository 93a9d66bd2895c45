"""Metamath database parsing: statements, scoping, frames, proof decompression.

The supported language subset is the one ``set.mm`` uses: ``$c $v $f $e $d
$a $p`` statements, ``${ $}`` scoping and ``$( $)`` comments.  File inclusion
(``$[ $]``) is rejected with a clear error.  Comments are discarded entirely,
including ``$j``/``$t`` annotations.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field


class MMError(Exception):
    """Error in Metamath source or in a proof, with a source line when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


CONSTANT_DECL = "constant-decl"
VARIABLE_DECL = "variable-decl"
FLOATING_HYP = "floating-hyp"
ESSENTIAL_HYP = "essential-hyp"
DISJOINT_DECL = "disjoint-decl"
AXIOM = "axiom"
PROPOSITION = "proposition"


@dataclass
class Statement:
    """One database statement, with its resolved mandatory frame if assertional.

    ``body`` always starts with the typecode for hypotheses and assertions.
    ``frame`` is set for axioms and propositions; ``active_dvs`` additionally
    records every disjoint pair active in the statement's scope (needed to
    check dummy-variable disjointness when verifying proofs).
    """

    label: str | None
    kind: str
    typecode: str | None
    body: tuple[str, ...]
    pos: int
    line: int
    proof: tuple[str, ...] | None = None
    frame: "StatementFrame | None" = None
    active_dvs: frozenset[tuple[str, str]] = frozenset()
    # variables with an active $f in scope, var -> (typecode, $f label)
    active_floats: dict[str, tuple[str, str]] = field(default_factory=dict)

    @property
    def is_assertion(self) -> bool:
        return self.kind in (AXIOM, PROPOSITION)


@dataclass
class StatementFrame:
    """Mandatory frame of an assertion, resolved at parse time.

    ``hypotheses`` lists the mandatory hypotheses in database order, each as
    ``("f"|"e", label, body)``.  This is the stack order used by proofs.
    ``float_vars`` are the (var, typecode, label) triples in database order,
    and ``dvs`` the disjoint pairs restricted to mandatory variables.
    """

    hypotheses: list[tuple[str, str, tuple[str, ...]]]
    float_vars: list[tuple[str, str, str]]
    dvs: frozenset[tuple[str, str]]

    @property
    def f_count(self) -> int:
        return len(self.float_vars)

    @property
    def e_hyps(self) -> list[tuple[str, tuple[str, ...]]]:
        return [(lab, body) for k, lab, body in self.hypotheses if k == "e"]


class _Scope:
    __slots__ = ("consts", "variables", "dvs", "floats", "essentials")

    def __init__(self):
        self.consts: set[str] = set()
        self.variables: set[str] = set()
        self.dvs: set[tuple[str, str]] = set()
        self.floats: list[tuple[str, str, str, int]] = []  # (var, tc, label, pos)
        self.essentials: list[tuple[str, tuple[str, ...], int]] = []  # (label, body, pos)


class Database:
    """A parsed Metamath database.

    Statement order is preserved exactly as in source; ``label_index`` maps a
    label to its statement.  Immutable once parsed, safe for concurrent reads.
    """

    def __init__(self):
        self.statements: list[Statement] = []
        self.label_index: dict[str, Statement] = {}
        self.constants: set[str] = set()
        self.variables: dict[str, str] = {}  # var -> typecode (from its $f)
        self.float_typecodes: set[str] = set()
        self.float_typecode_order: list[str] = []  # by first $f appearance
        self.provable_typecode: str | None = None

    def __getitem__(self, label: str) -> Statement:
        try:
            return self.label_index[label]
        except KeyError:
            raise MMError(f"unknown label {label!r}") from None

    def assertions(self, typecode: str | None = None):
        for st in self.statements:
            if st.is_assertion and (typecode is None or st.typecode == typecode):
                yield st

    def propositions(self):
        return (st for st in self.statements if st.kind == PROPOSITION)

    def provable_assertions(self):
        """Axioms and propositions of the provable (⊢-like) typecode."""
        return self.assertions(self.provable_typecode)

    def _detect_provable_typecode(self) -> None:
        # The provable typecode is not hard-coded: it is the assertion
        # typecode that never types a variable.  For set.mm this is "|-".
        heads = {st.typecode for st in self.statements if st.is_assertion}
        candidates = heads - self.float_typecodes
        if not candidates:
            self.provable_typecode = None
        elif len(candidates) == 1:
            self.provable_typecode = candidates.pop()
        else:
            proved = {st.typecode for st in self.statements if st.kind == PROPOSITION}
            narrowed = candidates & proved
            self.provable_typecode = sorted(narrowed or candidates)[0]


class _Tokenizer:
    """Whitespace token stream with line tracking and comment stripping."""

    def __init__(self, source: str):
        self._tokens: list[tuple[str, int]] = []
        for lineno, line in enumerate(source.splitlines(), start=1):
            for tok in line.split():
                self._tokens.append((tok, lineno))
        self._i = 0
        self.line = 0

    def _raw_next(self) -> str | None:
        if self._i >= len(self._tokens):
            return None
        tok, self.line = self._tokens[self._i]
        self._i += 1
        return tok

    def next(self) -> str | None:
        """Next token outside comments; rejects file inclusion."""
        tok = self._raw_next()
        while tok == "$(":
            start = self.line
            while True:
                tok = self._raw_next()
                if tok is None:
                    raise MMError("unclosed comment $(", start)
                if tok == "$)":
                    break
                if tok == "$(":
                    raise MMError("nested comment $(", self.line)
            tok = self._raw_next()
        if tok == "$[":
            raise MMError("file inclusion $[ ... $] is not supported", self.line)
        return tok

    def read_statement(self) -> list[str]:
        """Tokens up to the closing ``$.``."""
        start = self.line
        out = []
        while True:
            tok = self.next()
            if tok is None:
                raise MMError("end of file before $.", start)
            if tok == "$.":
                return out
            out.append(tok)


def parse_database(source: str) -> Database:
    """Parse Metamath source text into a Database.

    Raises MMError (with line numbers) on lexical errors, scope errors,
    undeclared symbols and duplicate labels.
    """
    db = Database()
    toks = _Tokenizer(source)
    scopes = [_Scope()]

    def lookup_const(sym: str) -> bool:
        return any(sym in sc.consts for sc in scopes)

    def lookup_var(sym: str) -> bool:
        return any(sym in sc.variables for sc in scopes)

    def active_float_of(var: str):
        for sc in reversed(scopes):
            for v, tc, lab, pos in sc.floats:
                if v == var:
                    return (v, tc, lab, pos)
        return None

    def check_body_symbols(body, line):
        for sym in body:
            if not lookup_const(sym) and not lookup_var(sym):
                raise MMError(f"undeclared symbol {sym!r}", line)

    def check_vars_typed(body, line):
        for sym in body:
            if lookup_var(sym) and active_float_of(sym) is None:
                raise MMError(f"variable {sym!r} has no active $f", line)

    def add_statement(st: Statement) -> None:
        if st.label is not None:
            if st.label in db.label_index:
                raise MMError(f"duplicate label {st.label!r}", st.line)
            db.label_index[st.label] = st
        db.statements.append(st)

    def make_frame(body: tuple[str, ...], line: int) -> StatementFrame:
        e_hyps = [(lab, bod, pos) for sc in scopes for lab, bod, pos in sc.essentials]
        mand_vars = {
            sym
            for bod in itertools.chain((b for _, b, _ in e_hyps), [body])
            for sym in bod
            if lookup_var(sym)
        }
        floats = []
        for sc in scopes:
            for v, tc, lab, pos in sc.floats:
                if v in mand_vars:
                    floats.append((v, tc, lab, pos))
                    mand_vars.discard(v)
        if mand_vars:
            raise MMError(f"variables with no active $f: {sorted(mand_vars)}", line)
        hyps = sorted(
            [("f", lab, (tc, v), pos) for v, tc, lab, pos in floats]
            + [("e", lab, bod, pos) for lab, bod, pos in e_hyps],
            key=lambda h: h[3],
        )
        hyp_list = [(k, lab, tuple(bod)) for k, lab, bod, _ in hyps]
        float_list = [(v, tc, lab) for v, tc, lab, _ in sorted(floats, key=lambda f: f[3])]
        mand = {v for v, _, _ in float_list}
        dvs = frozenset(
            p for sc in scopes for p in sc.dvs if p[0] in mand and p[1] in mand
        )
        return StatementFrame(hypotheses=hyp_list, float_vars=float_list, dvs=dvs)

    label: str | None = None
    label_line = 0
    while True:
        tok = toks.next()
        if tok is None:
            break
        line = toks.line
        if tok == "${":
            if label is not None:
                raise MMError("label before ${", line)
            scopes.append(_Scope())
        elif tok == "$}":
            if label is not None:
                raise MMError("label before $}", line)
            if len(scopes) == 1:
                raise MMError("unmatched $}", line)
            scopes.pop()
        elif tok == "$c":
            if label is not None:
                raise MMError("label before $c", line)
            if len(scopes) > 1:
                raise MMError("$c only allowed in outermost scope", line)
            for sym in toks.read_statement():
                if lookup_const(sym) or lookup_var(sym):
                    raise MMError(f"symbol {sym!r} already declared", line)
                scopes[-1].consts.add(sym)
                db.constants.add(sym)
                st = Statement(None, CONSTANT_DECL, None, (sym,), len(db.statements), line)
                add_statement(st)
        elif tok == "$v":
            if label is not None:
                raise MMError("label before $v", line)
            for sym in toks.read_statement():
                if lookup_const(sym) or lookup_var(sym):
                    raise MMError(f"symbol {sym!r} already declared", line)
                scopes[-1].variables.add(sym)
                st = Statement(None, VARIABLE_DECL, None, (sym,), len(db.statements), line)
                add_statement(st)
        elif tok == "$d":
            if label is not None:
                raise MMError("label before $d", line)
            body = toks.read_statement()
            if len(body) < 2:
                raise MMError("$d needs at least two variables", line)
            for sym in body:
                if not lookup_var(sym):
                    raise MMError(f"$d symbol {sym!r} is not an active variable", line)
            if len(set(body)) != len(body):
                raise MMError("$d repeats a variable", line)
            scopes[-1].dvs.update(
                (min(x, y), max(x, y)) for x, y in itertools.combinations(body, 2)
            )
            st = Statement(None, DISJOINT_DECL, None, tuple(body), len(db.statements), line)
            add_statement(st)
        elif tok in ("$f", "$e", "$a", "$p"):
            if label is None:
                raise MMError(f"{tok} needs a label", line)
            body = toks.read_statement()
            if tok == "$f":
                if len(body) != 2:
                    raise MMError("$f must be exactly 'typecode variable'", line)
                tc, var = body
                if not lookup_const(tc):
                    raise MMError(f"$f typecode {tc!r} not a declared constant", line)
                if not lookup_var(var):
                    raise MMError(f"$f variable {var!r} not declared", line)
                if active_float_of(var) is not None:
                    raise MMError(f"variable {var!r} already typed by an active $f", line)
                st = Statement(label, FLOATING_HYP, tc, tuple(body), len(db.statements), line)
                add_statement(st)
                scopes[-1].floats.append((var, tc, label, st.pos))
                db.variables.setdefault(var, tc)
                if tc not in db.float_typecodes:
                    db.float_typecodes.add(tc)
                    db.float_typecode_order.append(tc)
            elif tok == "$e":
                if not body:
                    raise MMError("$e body is empty", line)
                if not lookup_const(body[0]):
                    raise MMError(f"$e typecode {body[0]!r} not a constant", line)
                check_body_symbols(body, line)
                check_vars_typed(body, line)
                st = Statement(label, ESSENTIAL_HYP, body[0], tuple(body), len(db.statements), line)
                add_statement(st)
                scopes[-1].essentials.append((label, tuple(body), st.pos))
            else:
                proof = None
                if tok == "$p":
                    if "$=" not in body:
                        raise MMError("$p without $= proof", line)
                    cut = body.index("$=")
                    proof = tuple(body[cut + 1 :])
                    body = body[:cut]
                    if not proof:
                        raise MMError("empty proof", line)
                if not body:
                    raise MMError(f"{tok} body is empty", line)
                if not lookup_const(body[0]):
                    raise MMError(f"assertion typecode {body[0]!r} not a constant", line)
                check_body_symbols(body, line)
                check_vars_typed(body, line)
                kind = AXIOM if tok == "$a" else PROPOSITION
                st = Statement(label, kind, body[0], tuple(body), len(db.statements), line)
                st.frame = make_frame(st.body, line)
                st.active_dvs = frozenset(p for sc in scopes for p in sc.dvs)
                st.active_floats = {
                    v: (tc, lab) for sc in scopes for v, tc, lab, _ in sc.floats
                }
                if kind == PROPOSITION:
                    st.proof = proof
                add_statement(st)
            label = None
        elif tok.startswith("$"):
            raise MMError(f"unknown keyword {tok!r}", line)
        else:
            if label is not None:
                raise MMError(f"two labels in a row: {label!r}, {tok!r}", line)
            if any(c in tok for c in "$"):
                raise MMError(f"bad label token {tok!r}", line)
            label = tok
            label_line = line
    if label is not None:
        raise MMError(f"dangling label {label!r}", label_line)
    if len(scopes) != 1:
        raise MMError("unclosed ${", toks.line)
    db._detect_provable_typecode()
    return db


def load_database(path: str) -> Database:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_database(fh.read())


# ---------------------------------------------------------------------------
# Proof decompression


def _decode_compressed_ints(chars: str, line: int) -> list[int]:
    """Decode the A-Z integer encoding; Z markers map to -1."""
    ints = []
    acc = 0
    for ch in chars:
        if ch == "Z":
            if acc:
                raise MMError("Z inside a multi-character number", line)
            ints.append(-1)
        elif "A" <= ch <= "T":
            ints.append(20 * acc + (ord(ch) - ord("A")))
            acc = 0
        elif "U" <= ch <= "Y":
            acc = 5 * acc + (ord(ch) - ord("U")) + 1
        elif ch == "?":
            raise MMError("incomplete proof (? step)", line)
        else:
            raise MMError(f"bad compressed proof character {ch!r}", line)
    if acc:
        raise MMError("truncated compressed number", line)
    return ints


def decompress_proof(prop: Statement, db: Database) -> list[str]:
    """Return the proof of ``prop`` as a flat label list in RPN order.

    Compressed proofs are expanded: back-references to Z-tagged steps are
    replaced by a replay of the label span that produced the tagged step.
    Normal proofs pass through unchanged.
    """
    if prop.kind != PROPOSITION or prop.proof is None:
        raise MMError(f"{prop.label!r} has no proof")
    proof = list(prop.proof)
    if proof[0] != "(":
        if "?" in proof:
            raise MMError(f"{prop.label!r}: incomplete proof", prop.line)
        return proof
    try:
        close = proof.index(")")
    except ValueError:
        raise MMError(f"{prop.label!r}: unterminated compressed label block", prop.line)
    assert prop.frame is not None
    mand_labels = [lab for _, lab, _ in prop.frame.hypotheses]
    ref_labels = mand_labels + proof[1:close]
    ints = _decode_compressed_ints("".join(proof[close + 1 :]), prop.line)

    # Abstract replay: track, for every stack slot, the span of emitted
    # labels that built it, so Z back-references can be replayed inline.
    out: list[str] = []
    stack_spans: list[tuple[int, int]] = []
    saved_spans: list[tuple[int, int]] = []

    def pops_of(label: str) -> int:
        st = db[label]
        if st.kind in (FLOATING_HYP, ESSENTIAL_HYP):
            return 0
        if st.is_assertion:
            assert st.frame is not None
            return len(st.frame.hypotheses)
        raise MMError(f"label {label!r} is not usable in a proof", prop.line)

    for n in ints:
        if n == -1:
            if not stack_spans:
                raise MMError(f"{prop.label!r}: Z tag with empty stack", prop.line)
            saved_spans.append(stack_spans[-1])
            continue
        if n < len(ref_labels):
            label = ref_labels[n]
            npop = pops_of(label)
            if npop > len(stack_spans):
                raise MMError(f"{prop.label!r}: proof stack underflow", prop.line)
            start = stack_spans[-npop][0] if npop else len(out)
            del stack_spans[len(stack_spans) - npop :]
            out.append(label)
            stack_spans.append((start, len(out)))
        else:
            idx = n - len(ref_labels)
            if idx >= len(saved_spans):
                raise MMError(
                    f"{prop.label!r}: compressed reference {n} out of range", prop.line
                )
            a, b = saved_spans[idx]
            start = len(out)
            out.extend(out[a:b])
            stack_spans.append((start, len(out)))
    return out
