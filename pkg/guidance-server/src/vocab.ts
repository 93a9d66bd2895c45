/**
 * Token vocabulary shared with the proof engine.
 *
 * The flat `vocabulary.txt` (one token per line, ids are line numbers) is
 * what the handshake hash covers; `vocabulary.json` adds per-token kind,
 * arity, typecode and declaration position.  Both are emitted by the
 * engine's dataset extraction.
 */

import { createHash } from "node:crypto";
import { readFileSync } from "node:fs";
import { join } from "node:path";

export interface TokenInfo {
  id: number;
  token: string;
  kind: "constructor" | "dummy" | "special";
  arity: number;
  typecode: string | null;
  /** Database declaration index for constructors, null otherwise. */
  position: number | null;
  /** Child typecodes in pre-order for constructors, null otherwise. */
  slots: string[] | null;
}

export interface Specials {
  EOH: number;
  EOS: number;
  START: number;
  UV: number;
  TARGET: number;
}

export class Vocab {
  readonly tokens: TokenInfo[];
  readonly size: number;
  readonly hash: string;
  readonly specials: Specials;
  /** typecode -> dummy token ids, in id order. */
  readonly dummies: Map<string, number[]>;
  readonly byName: Map<string, number>;

  constructor(flatText: string, meta: {
    hash: string;
    specials: Record<string, number>;
    tokens: TokenInfo[];
    dummies: Record<string, number[]>;
  }) {
    const names = flatText.split("\n").filter((l) => l.length > 0);
    this.hash = createHash("sha256").update(flatText, "utf-8").digest("hex");
    if (this.hash !== meta.hash) {
      throw new Error(
        `vocabulary.txt hash ${this.hash} does not match vocabulary.json ${meta.hash}`,
      );
    }
    if (names.length !== meta.tokens.length) {
      throw new Error("vocabulary flat/json token count mismatch");
    }
    this.tokens = meta.tokens;
    for (let i = 0; i < names.length; i++) {
      if (this.tokens[i].id !== i || this.tokens[i].token !== names[i]) {
        throw new Error(`vocabulary token ${i} disagrees between files`);
      }
    }
    this.size = names.length;
    this.specials = {
      EOH: meta.specials.EOH,
      EOS: meta.specials.EOS,
      START: meta.specials.START,
      UV: meta.specials.UV,
      TARGET: meta.specials.TARGET,
    };
    this.dummies = new Map(Object.entries(meta.dummies));
    this.byName = new Map(names.map((n, i) => [n, i]));
  }

  arity(id: number): number {
    return this.tokens[id].arity;
  }

  kind(id: number): TokenInfo["kind"] {
    return this.tokens[id].kind;
  }

  typecode(id: number): string | null {
    return this.tokens[id].typecode;
  }

  position(id: number): number | null {
    return this.tokens[id].position;
  }

  isSpecial(id: number): boolean {
    return this.tokens[id].kind === "special";
  }
}

export function loadVocab(dir: string): Vocab {
  const flat = readFileSync(join(dir, "vocabulary.txt"), "utf-8");
  const meta = JSON.parse(readFileSync(join(dir, "vocabulary.json"), "utf-8"));
  return new Vocab(flat, meta);
}

/**
 * Structure features for a pre-order token stream, mirroring the engine's
 * tokenizer: each tree node gets (depth, degree, parent degree, position
 * among siblings); special tokens always get (0,0,0,0) but still occupy
 * their leaf slot in the walk.  EOH/EOS separate trees and groups and may
 * only appear between complete trees.
 */
export function featuresFor(tokens: number[], vocab: Vocab): number[][] {
  const feats: number[][] = [];
  // stack of open constructor nodes: [remaining children, degree, next child index]
  const stack: Array<{ remaining: number; degree: number; nextPos: number }> = [];
  const { EOH, EOS } = vocab.specials;
  for (const tok of tokens) {
    if (tok === EOH || tok === EOS) {
      if (stack.length > 0) {
        throw new Error("separator inside an incomplete tree");
      }
      feats.push([0, 0, 0, 0]);
      continue;
    }
    const degree = vocab.arity(tok);
    const parent = stack.length > 0 ? stack[stack.length - 1] : null;
    if (vocab.isSpecial(tok)) {
      feats.push([0, 0, 0, 0]);
    } else {
      feats.push([
        stack.length,
        degree,
        parent ? parent.degree : 0,
        parent ? parent.nextPos : 0,
      ]);
    }
    if (degree > 0) {
      stack.push({ remaining: degree, degree, nextPos: 0 });
    } else {
      // a completed leaf closes ancestors whose children are all done
      let done = true;
      while (done && stack.length > 0) {
        const top = stack[stack.length - 1];
        top.remaining -= 1;
        top.nextPos += 1;
        if (top.remaining === 0) {
          stack.pop();
        } else {
          done = false;
        }
      }
    }
  }
  if (stack.length > 0) throw new Error("token stream ends mid-tree");
  return feats;
}

/**
 * Split a state token stream into its EOS-separated groups, returning the
 * token index where each group starts.  Used to assign per-section weight
 * banks: tokens before the first EOS belong to section 0, the EOS and
 * everything after it to section 1 (and so on for later separators).
 */
export function sectionOf(tokens: number[], vocab: Vocab): Int32Array {
  const out = new Int32Array(tokens.length);
  let sec = 0;
  for (let i = 0; i < tokens.length; i++) {
    out[i] = sec;
    if (tokens[i] === vocab.specials.EOS) sec += 1;
  }
  return out;
}

/** Lengths of the complete trees in a pre-order stream (no separators). */
export function splitTrees(tokens: number[], vocab: Vocab): number[][] {
  const trees: number[][] = [];
  let i = 0;
  while (i < tokens.length) {
    let need = 1;
    const start = i;
    while (need > 0) {
      if (i >= tokens.length) throw new Error("token stream ends mid-tree");
      need += vocab.arity(tokens[i]) - 1;
      i += 1;
    }
    trees.push(tokens.slice(start, i));
  }
  return trees;
}
