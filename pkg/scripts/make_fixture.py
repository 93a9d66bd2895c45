#!/usr/bin/env python3
"""Generate the propositional-calculus test corpus at fixtures/fixture.mm.

The corpus is produced deterministically from a seed, so the file can be
regenerated byte-for-byte and its hash pinned by the test suite.  It is a
self-contained Metamath database with:

* four wff constructors (negation, implication, biconditional, and a
  bracket form whose body uses its variables in reverse float order);
* the three classical axioms, modus ponens with two essential
  hypotheses, and an axiom whose application requires a disjointness
  check;
* thousands of derived propositions built by five schemes: substitution
  instances of earlier theorems, antecedent introduction, ax-2
  detachment chains, deduction blocks with one to three essential
  hypotheses, and disjoint-variable theorems;
* a small number of syntax propositions (typecode ``wff``);
* roughly half of the proofs stored in compressed form, with repeated
  subproofs tagged and back-referenced.

Every generated proof is checked with the package verifier and with the
independent oracle verifier before the file is written, and compressed
proofs are round-tripped through the package decompressor.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import random
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))
sys.path.insert(0, str(REPO / "tests"))

DEFAULT_SEED = 20250814
DEFAULT_TARGET = 3210
DEFAULT_OUT = REPO / "fixtures" / "fixture.mm"

VAR_ORDER = ("ph", "ps", "ch", "th", "ta")
FLOATS = {"ph": "wph", "ps": "wps", "ch": "wch", "th": "wth", "ta": "wta"}

HEADER = """$( Propositional-calculus test corpus. $)
$( Generated by scripts/make_fixture.py; regenerate rather than edit. $)

$c ( ) -> -. <-> [ ] ~ wff |- $.
$v ph ps ch th ta $.
wph $f wff ph $.
wps $f wff ps $.
wch $f wff ch $.
wth $f wff th $.
wta $f wff ta $.
wn $a wff -. ph $.
wi $a wff ( ph -> ps ) $.
wb $a wff ( ph <-> ps ) $.
wrev $a wff [ ps ~ ph ] $.
ax-1 $a |- ( ph -> ( ps -> ph ) ) $.
ax-2 $a |- ( ( ph -> ( ps -> ch ) ) -> ( ( ph -> ps ) -> ( ph -> ch ) ) ) $.
ax-3 $a |- ( ( -. ph -> -. ps ) -> ( ps -> ph ) ) $.
${
  min $e |- ph $.
  maj $e |- ( ph -> ps ) $.
  ax-mp $a |- ps $.
$}
${
  $d ph ps $.
  adv.1 $e |- ph $.
  adv $a |- ( ps -> ph ) $.
$}
"""

# Arities (number of stack entries consumed) of the header labels.
BASE_ARITY = {
    "wph": 0, "wps": 0, "wch": 0, "wth": 0, "wta": 0,
    "wn": 1, "wi": 2, "wb": 2, "wrev": 2,
    "ax-1": 2, "ax-2": 3, "ax-3": 2, "ax-mp": 4,
    "min": 0, "maj": 0, "adv": 3, "adv.1": 0,
}

AX1 = ("wi", ("v", "ph"), ("wi", ("v", "ps"), ("v", "ph")))
AX2 = ("wi",
       ("wi", ("v", "ph"), ("wi", ("v", "ps"), ("v", "ch"))),
       ("wi",
        ("wi", ("v", "ph"), ("v", "ps")),
        ("wi", ("v", "ph"), ("v", "ch"))))
AX3 = ("wi",
       ("wi", ("wn", ("v", "ph")), ("wn", ("v", "ps"))),
       ("wi", ("v", "ps"), ("v", "ph")))


# ----------------------------------------------------------------------
# Wff helpers (tuples: ("v", name) or (constructor, child...))

def render(wff):
    kind = wff[0]
    if kind == "v":
        return [wff[1]]
    if kind == "wn":
        return ["-."] + render(wff[1])
    if kind == "wi":
        return ["("] + render(wff[1]) + ["->"] + render(wff[2]) + [")"]
    if kind == "wb":
        return ["("] + render(wff[1]) + ["<->"] + render(wff[2]) + [")"]
    if kind == "wrev":
        # Body uses the second float slot first.
        return ["["] + render(wff[2]) + ["~"] + render(wff[1]) + ["]"]
    raise ValueError(kind)


def syntax_rpn(wff):
    kind = wff[0]
    if kind == "v":
        return [FLOATS[wff[1]]]
    out = []
    for child in wff[1:]:
        out.extend(syntax_rpn(child))
    out.append(kind)
    return out


def wff_vars(wff):
    if wff[0] == "v":
        return {wff[1]}
    out = set()
    for child in wff[1:]:
        out |= wff_vars(child)
    return out


def substitute(wff, sigma):
    if wff[0] == "v":
        return sigma[wff[1]]
    return (wff[0],) + tuple(substitute(child, sigma) for child in wff[1:])


def frame_vars(wff):
    """Mandatory variables in global float declaration order."""
    present = wff_vars(wff)
    return [v for v in VAR_ORDER if v in present]


def wrap_tokens(tokens, indent):
    """Join tokens into lines of bounded width with a hanging indent."""
    lines = []
    current = ""
    for tok in tokens:
        candidate = (current + " " + tok) if current else tok
        if current and len(candidate) > 78:
            lines.append(current)
            current = indent + tok
        else:
            current = candidate
    if current:
        lines.append(current)
    return "\n".join(lines)


# ----------------------------------------------------------------------
# Proof compression

def _spans(rpn, arity):
    """For each position, the (start, end) of the subproof it completes."""
    starts = []
    spans = []
    for i, lab in enumerate(rpn):
        a = arity[lab]
        if a == 0:
            start = i
        else:
            start = starts[-a]
            del starts[-a:]
        starts.append(start)
        spans.append((start, i + 1))
    if len(starts) != 1:
        raise ValueError("rpn does not reduce to one statement")
    return spans


def _encode_number(num):
    """1-based reference number -> compressed-proof letters."""
    out = [chr(ord("A") + (num - 1) % 20)]
    rem = (num - 1) // 20
    while rem:
        out.insert(0, chr(ord("U") + (rem - 1) % 5))
        rem = (rem - 1) // 5
    return "".join(out)


def compress_proof(rpn, mandatory, arity):
    """Encode an RPN label list as a compressed proof token list.

    Repeated subproofs of length >= 2 are emitted once, tagged with Z, and
    back-referenced afterwards.
    """
    spans = _spans(rpn, arity)
    by_start = {}
    counts = {}
    for start, end in spans:
        by_start.setdefault(start, []).append((start, end))
        counts[tuple(rpn[start:end])] = \
            counts.get(tuple(rpn[start:end]), 0) + 1
    for entries in by_start.values():
        entries.sort(key=lambda se: -se[1])

    mand_index = {lab: i for i, lab in enumerate(mandatory)}
    listed = []
    listed_index = {}
    tagged = {}
    ops = []  # ("mand", i) | ("lab", i) | ("ref", tag) | ("Z",)

    def number_op(lab):
        if lab in mand_index:
            ops.append(("mand", mand_index[lab]))
        else:
            if lab not in listed_index:
                listed_index[lab] = len(listed)
                listed.append(lab)
            ops.append(("lab", listed_index[lab]))

    def walk(p, q):
        while p < q:
            chosen = None
            for start, end in by_start.get(p, ()):
                key = tuple(rpn[start:end])
                if end <= q and end - start >= 2 and counts[key] >= 2:
                    chosen = (start, end, key)
                    break
            if chosen is None:
                number_op(rpn[p])
                p += 1
                continue
            start, end, key = chosen
            if key in tagged:
                ops.append(("ref", tagged[key]))
            else:
                walk(start, end - 1)
                number_op(rpn[end - 1])
                ops.append(("Z",))
                tagged[key] = len(tagged)
            p = end

    walk(0, len(rpn))

    m, n = len(mandatory), len(listed)
    blob = []
    for op in ops:
        if op[0] == "mand":
            blob.append(_encode_number(op[1] + 1))
        elif op[0] == "lab":
            blob.append(_encode_number(m + op[1] + 1))
        elif op[0] == "ref":
            blob.append(_encode_number(m + n + op[1] + 1))
        else:
            blob.append("Z")
    text = "".join(blob)
    chunks = [text[i:i + 60] for i in range(0, len(text), 60)]
    return ["("] + listed + [")"] + chunks


# ----------------------------------------------------------------------
# Corpus builder

class FixtureBuilder:
    def __init__(self, seed, target):
        self.rng = random.Random(seed)
        self.seed = seed
        self.target = target
        self.lines = [HEADER]
        self.arity = dict(BASE_ARITY)
        # (label, wff) theorems without essential hypotheses, reusable
        # as proof steps.
        self.bases = [("ax-1", AX1), ("ax-2", AX2), ("ax-3", AX3)]
        self.seen = {" ".join(["|-"] + render(w)) for _lab, w in self.bases}
        self.counts = {}
        self.compressed_labels = []
        self.proofs = {}  # label -> rpn list, for self-checking

    # -- random structure ------------------------------------------------

    def rand_wff(self, depth=2, pool=VAR_ORDER):
        r = self.rng.random()
        if depth <= 0 or r < 0.40:
            return ("v", self.rng.choice(pool))
        if r < 0.62:
            return ("wn", self.rand_wff(depth - 1, pool))
        if r < 0.90:
            return ("wi", self.rand_wff(depth - 1, pool),
                    self.rand_wff(depth - 1, pool))
        if r < 0.96:
            return ("wb", self.rand_wff(depth - 1, pool),
                    self.rand_wff(depth - 1, pool))
        return ("wrev", self.rand_wff(depth - 1, pool),
                self.rand_wff(depth - 1, pool))

    def pick_base(self):
        label, wff = self.rng.choice(self.bases)
        if len(render(wff)) > 40:
            label, wff = self.rng.choice(self.bases[:200])
        return label, wff

    def thm_ref(self, label, wff):
        """RPN that pushes a stored no-hypothesis theorem as stated."""
        return [FLOATS[v] for v in frame_vars(wff)] + [label]

    # -- statement emission ----------------------------------------------

    def _register(self, label, wff, rpn, typecode="|-", reusable=True):
        key = " ".join([typecode] + render(wff))
        if key in self.seen:
            return False
        self.seen.add(key)
        self.arity[label] = len(frame_vars(wff))
        self.proofs[label] = rpn
        if reusable and typecode == "|-":
            self.bases.append((label, wff))
        return True

    def _proof_text(self, label, rpn, mandatory):
        if self.rng.random() < 0.5:
            self.compressed_labels.append(label)
            return compress_proof(rpn, mandatory, self.arity)
        return rpn

    def _emit_plain(self, label, wff, rpn, typecode="|-", reusable=True):
        if not self._register(label, wff, rpn, typecode, reusable):
            return False
        mandatory = [FLOATS[v] for v in frame_vars(wff)]
        proof = self._proof_text(label, rpn, mandatory)
        tokens = [label, "$p", typecode] + render(wff) + ["$="] + proof + ["$."]
        self.lines.append(wrap_tokens(tokens, "    "))
        return True

    def _emit_block(self, label, wff, hyps, rpn, dvs=None):
        """Emit a ${ ... $} block with essential hypotheses (and maybe $d)."""
        key = " ".join(["|-"] + render(wff) + ["&&"]
                       + [t for h in hyps for t in render(h) + ["&"]])
        if key in self.seen:
            return False
        self.seen.add(key)
        mand_vars = set(wff_vars(wff))
        for h in hyps:
            mand_vars |= wff_vars(h)
        ordered = [v for v in VAR_ORDER if v in mand_vars]
        hyp_labels = ["%s.%d" % (label, i + 1) for i in range(len(hyps))]
        for hl in hyp_labels:
            self.arity[hl] = 0
        self.arity[label] = len(ordered) + len(hyps)
        self.proofs[label] = rpn
        mandatory = [FLOATS[v] for v in ordered] + hyp_labels
        proof = self._proof_text(label, rpn, mandatory)
        parts = ["${"]
        if dvs:
            parts.append("  $d " + " ".join(dvs) + " $.")
        for hl, h in zip(hyp_labels, hyps):
            parts.append(wrap_tokens([hl, "$e", "|-"] + render(h) + ["$."],
                                     "      "))
        body = [label, "$p", "|-"] + render(wff) + ["$="] + proof + ["$."]
        wrapped = wrap_tokens(body, "      ").split("\n")
        wrapped[0] = "  " + wrapped[0]
        parts.append("\n".join(wrapped))
        parts.append("$}")
        self.lines.append("\n".join(parts))
        return True

    # -- schemes -----------------------------------------------------------

    def scheme_syntax(self):
        w = self.rand_wff(depth=3)
        if len(render(w)) < 3:
            return False
        label = "syn%04d" % (self.counts.get("syntax", 0) + 1)
        if not self._emit_plain(label, w, syntax_rpn(w), typecode="wff",
                                reusable=False):
            return False
        self.counts["syntax"] = self.counts.get("syntax", 0) + 1
        return True

    def scheme_instance(self):
        base_label, base = self.pick_base()
        sigma = {v: self.rand_wff(depth=2) for v in frame_vars(base)}
        new = substitute(base, sigma)
        if len(render(new)) > 70:
            return False
        rpn = []
        for v in frame_vars(base):
            rpn.extend(syntax_rpn(sigma[v]))
        rpn.append(base_label)
        label = "inst%04d" % (self.counts.get("instance", 0) + 1)
        if not self._emit_plain(label, new, rpn):
            return False
        self.counts["instance"] = self.counts.get("instance", 0) + 1
        return True

    def scheme_intro(self):
        """From |- B conclude |- ( W -> B ) for an arbitrary antecedent W."""
        b_label, b = self.pick_base()
        w = self.rand_wff(depth=2)
        new = ("wi", w, b)
        if len(render(new)) > 70:
            return False
        maj = syntax_rpn(b) + syntax_rpn(w) + ["ax-1"]
        rpn = (syntax_rpn(b) + syntax_rpn(new)
               + self.thm_ref(b_label, b) + maj + ["ax-mp"])
        label = "imp%04d" % (self.counts.get("intro", 0) + 1)
        if not self._emit_plain(label, new, rpn):
            return False
        self.counts["intro"] = self.counts.get("intro", 0) + 1
        return True

    def scheme_detach(self):
        """ax-2 + modus ponens on a theorem |- ( A -> ( B -> C ) )."""
        nested = [(lab, w) for lab, w in self.bases
                  if w[0] == "wi" and w[2][0] == "wi"
                  and len(render(w)) <= 40]
        if not nested:
            return False
        t_label, t = self.rng.choice(nested)
        a, rest = t[1], t[2]
        b, c = rest[1], rest[2]
        new = ("wi", ("wi", a, b), ("wi", a, c))
        if len(render(new)) > 70:
            return False
        maj = (syntax_rpn(a) + syntax_rpn(b) + syntax_rpn(c) + ["ax-2"])
        rpn = (syntax_rpn(t) + syntax_rpn(new)
               + self.thm_ref(t_label, t) + maj + ["ax-mp"])
        label = "det%04d" % (self.counts.get("detach", 0) + 1)
        if not self._emit_plain(label, new, rpn):
            return False
        self.counts["detach"] = self.counts.get("detach", 0) + 1
        return True

    def scheme_deduction(self):
        """Blocks with one to three essential hypotheses."""
        idx = self.counts.get("deduction", 0) + 1
        label = "ded%04d" % idx
        form = self.rng.randrange(3)

        def hyp_labels(k):
            return ["%s.%d" % (label, i + 1) for i in range(k)]

        if form == 0:
            # From |- H conclude |- ( W -> H ).
            h = self.rand_wff(depth=2)
            w = self.rand_wff(depth=2)
            new = ("wi", w, h)
            l1, = hyp_labels(1)
            rpn = (syntax_rpn(h) + syntax_rpn(new) + [l1]
                   + syntax_rpn(h) + syntax_rpn(w) + ["ax-1", "ax-mp"])
            ok = self._emit_block(label, new, [h], rpn)
        elif form == 1:
            # From |- H and |- ( H -> G ) conclude |- G.
            h = self.rand_wff(depth=2)
            g = self.rand_wff(depth=2)
            l1, l2 = hyp_labels(2)
            rpn = syntax_rpn(h) + syntax_rpn(g) + [l1, l2, "ax-mp"]
            ok = self._emit_block(label, g, [h, ("wi", h, g)], rpn)
        else:
            # From |- A, |- B, |- ( A -> ( B -> C ) ) conclude |- C.
            a = self.rand_wff(depth=1)
            b = self.rand_wff(depth=1)
            c = self.rand_wff(depth=2)
            l1, l2, l3 = hyp_labels(3)
            inner = (syntax_rpn(a) + syntax_rpn(("wi", b, c))
                     + [l1, l3, "ax-mp"])
            rpn = syntax_rpn(b) + syntax_rpn(c) + [l2] + inner + ["ax-mp"]
            ok = self._emit_block(label, c, [a, b, ("wi", a, ("wi", b, c))],
                                  rpn)
        if not ok:
            return False
        self.counts["deduction"] = self.counts.get("deduction", 0) + 1
        return True

    def scheme_disjoint(self):
        """Theorems applying adv, which demands disjoint substitutions."""
        idx = self.counts.get("disjoint", 0) + 1
        label = "dvt%04d" % idx
        h_pool = self.rng.sample(("ph", "ch", "th"), self.rng.randrange(1, 3))
        w_var = self.rng.choice(("ps", "ta"))
        h = self.rand_wff(depth=2, pool=tuple(h_pool))
        w = self.rand_wff(depth=1, pool=(w_var,))
        new = ("wi", w, h)
        dv_vars = [v for v in VAR_ORDER
                   if v in wff_vars(h) | wff_vars(w)]
        if len(dv_vars) < 2:
            return False
        rpn = (syntax_rpn(h) + syntax_rpn(w)
               + ["%s.1" % label, "adv"])
        if not self._emit_block(label, new, [h], rpn, dvs=dv_vars):
            return False
        self.counts["disjoint"] = self.counts.get("disjoint", 0) + 1
        return True

    # -- assembly ----------------------------------------------------------

    def build(self):
        schedule = [
            ("syntax", 40),
            ("instance", 420),
            ("intro", 320),
            ("detach", 200),
            ("instance", 420),
            ("intro", 320),
            ("detach", 220),
            ("deduction", 620),
            ("disjoint", 160),
            ("instance", 260),
            ("intro", 230),
        ]
        total = sum(n for _s, n in schedule)
        if total < self.target:
            schedule.append(("instance", self.target - total))
        fns = {
            "syntax": self.scheme_syntax,
            "instance": self.scheme_instance,
            "intro": self.scheme_intro,
            "detach": self.scheme_detach,
            "deduction": self.scheme_deduction,
            "disjoint": self.scheme_disjoint,
        }
        for scheme, count in schedule:
            produced = 0
            attempts = 0
            while produced < count:
                attempts += 1
                if attempts > count * 200:
                    raise RuntimeError("scheme %s stalled" % scheme)
                if fns[scheme]():
                    produced += 1
        return "\n".join(self.lines) + "\n"


# ----------------------------------------------------------------------

def build_fixture(seed=DEFAULT_SEED, target=DEFAULT_TARGET):
    """Return (text, builder) for the deterministic corpus."""
    builder = FixtureBuilder(seed, target)
    text = builder.build()
    return text, builder


def self_check(text, builder, quiet=False):
    from mmprover.database import parse_database, decompress_proof
    from oracles.independent_verifier import verify_database_text
    from mmprover.verifier import verify_database

    db = parse_database(text)
    results = verify_database(db)
    bad = [(lab, err) for lab, err in results if err is not None]
    if bad:
        raise RuntimeError("package verifier rejected: %r" % bad[:3])
    oracle = verify_database_text(text)
    bad = [(lab, err) for lab, err in oracle if err is not None]
    if bad:
        raise RuntimeError("oracle verifier rejected: %r" % bad[:3])
    if len(results) != len(oracle):
        raise RuntimeError("verifiers saw different proposition counts")
    for label in builder.compressed_labels:
        st = db.label_index[label]
        expanded = decompress_proof(st, db)
        if list(expanded) != list(builder.proofs[label]):
            raise RuntimeError("compressed round trip failed for %r" % label)
    if not quiet:
        n_props = len(results)
        print("propositions: %d (%d compressed)"
              % (n_props, len(builder.compressed_labels)))
        print("schemes: %s" % json.dumps(builder.counts, sort_keys=True))
    return len(results)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=DEFAULT_OUT)
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    parser.add_argument("--target", type=int, default=DEFAULT_TARGET)
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)

    text, builder = build_fixture(args.seed, args.target)
    n_props = self_check(text, builder, quiet=args.quiet)
    data = text.encode("utf-8")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_bytes(data)
    digest = hashlib.sha256(data).hexdigest()
    manifest = {
        "seed": args.seed,
        "target": args.target,
        "propositions": n_props,
        "compressed_proofs": len(builder.compressed_labels),
        "schemes": builder.counts,
        "sha256": digest,
        "file": args.out.name,
    }
    manifest_path = args.out.with_suffix(".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True)
                             + "\n")
    if not args.quiet:
        print("wrote %s (%d bytes)" % (args.out, len(data)))
        print("sha256: %s" % digest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
