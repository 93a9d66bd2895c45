"""Command-line surface: verify, prove, extract, bench.

Exit statuses: 0 every requested item succeeded, 1 some item failed,
2 usage or configuration error.  Summaries are stable tab-separated rows
on stdout; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import random
import statistics
import sys
import time
from pathlib import Path

from mmprover.database import MMError, PROPOSITION, parse_database
from mmprover.dataset import DatasetConfig, extract_datasets, split_propositions
from mmprover.grammar import build_grammar, build_vocabulary
from mmprover.guidance import RemoteGuidance, resolve_guidance
from mmprover.search import SearchParams, prove, trace_writer
from mmprover.unify import TheoremIndex, make_context
from mmprover.verifier import (
    emit_rpn,
    proposition_source,
    prune,
    verify_proof_tree,
    verify_proposition,
    verify_rpn_proof,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmprover",
        description="Metamath proof verification, search and data extraction.")
    sub = parser.add_subparsers(dest="command", required=True)
    defaults = SearchParams()

    def add_db(sp):
        sp.add_argument("--db", required=True, type=Path,
                        help="Metamath database file")
        sp.add_argument("--seed", type=int, default=0,
                        help="seed for splits and sampling")

    def add_selection(sp):
        sp.add_argument("--theorem", action="append", default=[],
                        metavar="LABEL", help="proposition label (repeatable)")
        sp.add_argument("--all-test", action="store_true",
                        help="select every test-split proposition")

    def add_search(sp):
        sp.add_argument("--passes", type=int, default=defaults.max_passes)
        sp.add_argument("--timeout", type=float, default=defaults.wall_time,
                        help="per-theorem wall clock limit in seconds")
        sp.add_argument("--beam", type=int, default=defaults.beam)
        sp.add_argument("--alpha", type=float, default=defaults.alpha)
        sp.add_argument("--beta", type=float, default=defaults.beta)
        sp.add_argument("--gamma", type=float, default=defaults.gamma)
        sp.add_argument("--threads", type=int, default=defaults.threads)
        sp.add_argument("--guidance", default="baseline",
                        help="baseline | oracle | remote (with --endpoint)")
        sp.add_argument("--endpoint", metavar="HOST:PORT",
                        help="remote guidance server address")
        sp.add_argument("--trace", type=Path,
                        help="append search trace JSON lines to this file")

    sp = sub.add_parser("verify", help="check stored proofs")
    add_db(sp)
    sp.add_argument("--theorem", action="append", default=[], metavar="LABEL")

    sp = sub.add_parser("prove", help="search for proofs")
    add_db(sp)
    add_selection(sp)
    add_search(sp)
    sp.add_argument("--out", type=Path,
                    help="append found $p blocks to this file")

    sp = sub.add_parser("extract", help="emit training datasets")
    add_db(sp)
    sp.add_argument("--out", type=Path, required=True,
                    help="output directory for dataset files")
    sp.add_argument("--guidance", default="baseline",
                    help="guidance used for payoff negatives")
    sp.add_argument("--endpoint", metavar="HOST:PORT")

    sp = sub.add_parser("bench", help="batch prove with summary statistics")
    add_db(sp)
    add_selection(sp)
    add_search(sp)
    sp.add_argument("--out", type=Path,
                    help="append found $p blocks to this file")
    sp.add_argument("--sample", type=int, default=0,
                    help="cap the selection to N seeded-random propositions")
    return parser


def _load_database(parser, path: Path):
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"mmprover: cannot read {path}: {exc}", file=sys.stderr)
        raise SystemExit(1)
    try:
        return text, parse_database(text)
    except MMError as exc:
        print(f"mmprover: parse error in {path}: {exc}", file=sys.stderr)
        raise SystemExit(1)


def _guidance_spec(parser, args) -> str:
    spec = args.guidance
    if spec == "remote":
        if not args.endpoint:
            parser.error("remote guidance requires --endpoint HOST:PORT")
        return f"remote:{args.endpoint}"
    if spec in ("baseline", "oracle") or spec.startswith("remote:"):
        return spec
    parser.error(f"unknown guidance {spec!r}")


def _select_theorems(parser, args, db) -> list[str]:
    labels = list(args.theorem)
    if args.all_test:
        splits = split_propositions(db, args.seed)
        labels.extend(splits["test"])
    seen = set()
    ordered = []
    for label in labels:
        if label in seen:
            continue
        seen.add(label)
        st = db.label_index.get(label)
        if st is None or st.kind != PROPOSITION:
            parser.error(f"{label!r} is not a proposition in the database")
        if st.typecode != db.provable_typecode:
            parser.error(f"{label!r} is a syntax proposition; nothing to prove")
        ordered.append(label)
    if not ordered:
        parser.error("no propositions selected; use --theorem or --all-test")
    return ordered


def _search_params(args) -> SearchParams:
    return SearchParams(alpha=args.alpha, beta=args.beta, gamma=args.gamma,
                        max_passes=args.passes, wall_time=args.timeout,
                        beam=args.beam, threads=args.threads)


def _reverify_block(source_text: str, block: str, label: str) -> None:
    """Independently re-parse the database and check an emitted proof block."""
    tokens = block.split()
    start = tokens.index("$=") + 1
    end = tokens.index("$.", start)
    proof = tokens[start:end]
    fresh = parse_database(source_text)
    verify_rpn_proof(fresh.label_index[label], proof, fresh)


def _prove_batch(parser, args, with_blocks: bool):
    """Shared engine for the prove and bench commands.

    Returns (rows, failures) where each row is
    (label, proved, passes, elapsed_seconds).
    """
    text, db = _load_database(parser, args.db)
    grammar = build_grammar(db)
    index = TheoremIndex(db, grammar)
    labels = _select_theorems(parser, args, db)
    if getattr(args, "sample", 0) and args.sample < len(labels):
        labels = random.Random(args.seed).sample(labels, args.sample)
    spec = _guidance_spec(parser, args)
    vocab = build_vocabulary(db, grammar) if spec.startswith("remote:") else None
    try:
        guidance = resolve_guidance(spec, db, grammar, index, vocab)
    except MMError as exc:
        print(f"mmprover: {exc}", file=sys.stderr)
        raise SystemExit(2)
    if isinstance(guidance, RemoteGuidance):
        try:
            guidance.connect()
        except (OSError, MMError) as exc:
            print(f"mmprover: warning: guidance service unavailable ({exc}); "
                  f"continuing with fallbacks", file=sys.stderr)

    params = _search_params(args)
    trace_fh = args.trace.open("a", encoding="utf-8") if args.trace else None
    trace = trace_writer(trace_fh) if trace_fh else None
    out_path = args.out if with_blocks else None

    rows = []
    failures = 0
    try:
        for label in labels:
            started = time.monotonic()
            try:
                result = prove(db, label, guidance, params,
                               grammar=grammar, index=index, trace=trace)
            except MMError as exc:
                print(f"mmprover: {label}: {exc}", file=sys.stderr)
                rows.append((label, False, 0, time.monotonic() - started))
                failures += 1
                continue
            elapsed = time.monotonic() - started
            if result.proved:
                st = db.label_index[label]
                ctx = make_context(st, db, grammar)
                tree = prune(result.tree)
                verify_proof_tree(tree, ctx, index)
                rpn = emit_rpn(tree, ctx, grammar, db)
                verify_rpn_proof(st, rpn, db)
                if out_path is not None:
                    block = proposition_source(label, st.body, rpn)
                    with out_path.open("a", encoding="utf-8") as fh:
                        fh.write(block)
                    _reverify_block(text, block, label)
            else:
                failures += 1
            rows.append((label, result.proved, result.passes, elapsed))
    finally:
        if trace_fh:
            trace_fh.close()
        guidance.close()
    return rows, failures


def cmd_verify(parser, args) -> int:
    _text, db = _load_database(parser, args.db)
    if args.theorem:
        for label in args.theorem:
            st = db.label_index.get(label)
            if st is None or st.kind != PROPOSITION:
                parser.error(f"{label!r} is not a proposition in the database")
        props = [db.label_index[label] for label in args.theorem]
    else:
        props = list(db.propositions())
    failures = 0
    for prop in props:
        try:
            verify_proposition(prop, db)
            print(f"{prop.label}\tok")
        except MMError as exc:
            print(f"{prop.label}\tfail\t{exc}")
            failures += 1
    return 1 if failures else 0


def cmd_prove(parser, args) -> int:
    rows, failures = _prove_batch(parser, args, with_blocks=True)
    for label, proved, passes, elapsed in rows:
        print(f"{label}\t{'yes' if proved else 'no'}\t{passes}"
              f"\t{elapsed:.2f}\t{args.beam}")
    return 1 if failures else 0


def cmd_bench(parser, args) -> int:
    rows, failures = _prove_batch(parser, args, with_blocks=True)
    for label, proved, passes, elapsed in rows:
        print(f"{label}\t{'yes' if proved else 'no'}\t{passes}"
              f"\t{elapsed:.2f}\t{args.beam}")
    n = len(rows)
    proved_rows = [row for row in rows if row[1]]
    walls = sorted(row[3] for row in rows)

    def pct(q: float) -> float:
        return walls[min(len(walls) - 1, int(q * len(walls)))]

    print(f"proved\t{len(proved_rows)}/{n}\t{len(proved_rows) / n:.4f}")
    if proved_rows:
        median_passes = statistics.median(row[2] for row in proved_rows)
        print(f"median_passes\t{median_passes:g}")
    else:
        print("median_passes\t-")
    print(f"wall_p50\t{pct(0.50):.3f}")
    print(f"wall_p90\t{pct(0.90):.3f}")
    print(f"wall_max\t{walls[-1]:.3f}")
    return 1 if failures else 0


def cmd_extract(parser, args) -> int:
    text, db = _load_database(parser, args.db)
    spec = _guidance_spec(parser, args)
    grammar = build_grammar(db)
    index = TheoremIndex(db, grammar)
    vocab = build_vocabulary(db, grammar)
    try:
        guidance = resolve_guidance(spec, db, grammar, index, vocab)
    except MMError as exc:
        print(f"mmprover: {exc}", file=sys.stderr)
        raise SystemExit(2)
    if isinstance(guidance, RemoteGuidance):
        try:
            guidance.connect()
        except (OSError, MMError) as exc:
            print(f"mmprover: warning: guidance service unavailable ({exc}); "
                  f"payoff negatives will use fallbacks", file=sys.stderr)
    config = DatasetConfig(seed=args.seed, guidance_name=spec)
    try:
        manifest = extract_datasets(
            db, args.out, config, guidance=guidance, grammar=grammar,
            index=index, vocab=vocab,
            snapshot_hash=hashlib.sha256(text.encode("utf-8")).hexdigest())
    finally:
        guidance.close()
    printable = {k: v for k, v in manifest.items() if k != "split_labels"}
    print(json.dumps(printable, indent=2, sort_keys=True))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "verify": cmd_verify,
        "prove": cmd_prove,
        "extract": cmd_extract,
        "bench": cmd_bench,
    }
    try:
        return handlers[args.command](parser, args)
    except MMError as exc:
        print(f"mmprover: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
