#!/usr/bin/env python3
"""Truncate a Metamath database after its first N propositions.

Keeps the original text byte-for-byte up to the end of the Nth $p
statement, then closes any ${ scopes still open at the cut.  Useful for
carving training-sized prefixes out of a larger corpus.
"""

from __future__ import annotations

import argparse
import re
import sys


def slice_text(text: str, props: int) -> str:
    depth = 0
    in_comment = False
    in_statement = False
    is_prop = False
    seen = 0
    for m in re.finditer(r"\S+", text):
        tok = m.group()
        if in_comment:
            if tok == "$)":
                in_comment = False
            continue
        if tok == "$(":
            in_comment = True
            continue
        if tok == "${":
            depth += 1
        elif tok == "$}":
            depth -= 1
        elif tok == "$p":
            in_statement = True
            is_prop = True
        elif tok in ("$a", "$e", "$f", "$c", "$v", "$d"):
            in_statement = True
        elif tok == "$.":
            if in_statement and is_prop:
                seen += 1
                if seen == props:
                    return text[: m.end()] + "\n" + "$}\n" * depth
            in_statement = False
            is_prop = False
    raise SystemExit(
        f"database has only {seen} propositions, cannot take {props}"
    )


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--db", required=True, help="source database file")
    ap.add_argument("--props", type=int, required=True,
                    help="number of propositions to keep")
    ap.add_argument("--out", required=True, help="output database file")
    args = ap.parse_args(argv)

    with open(args.db, encoding="utf-8") as f:
        text = f.read()
    sliced = slice_text(text, args.props)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(sliced)
    print(f"kept {args.props} propositions, {len(sliced)} bytes", file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
