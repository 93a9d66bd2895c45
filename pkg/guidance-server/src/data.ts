/**
 * Dataset files produced by the engine's extraction: line-delimited JSON,
 * optionally gzipped.  Records carry token streams under a per-record dummy
 * renaming plus the variable -> token and variable -> typecode maps needed
 * to redraw that renaming each epoch.
 */

import { existsSync, readFileSync } from "node:fs";
import { join } from "node:path";
import { gunzipSync } from "node:zlib";
import { Rng } from "./rng.js";
import { Vocab } from "./vocab.js";

export interface State {
  tokens: number[];
  features: number[][];
}

export interface RelevanceRecord {
  context: string;
  state: State;
  renaming: Record<string, number>;
  typecodes: Record<string, string>;
  candidates: string[];
  target: string;
  target_index: number;
}

export interface GenerativeRecord {
  context: string;
  state: State;
  renaming: Record<string, number>;
  typecodes: Record<string, string>;
  theorem: string;
  constrained: Record<string, number[]>;
  unconstrained: Array<{ var: string; typecode: string }>;
  targets: number[][];
}

export interface PayoffRecord {
  context: string;
  state: State;
  renaming: Record<string, number>;
  typecodes: Record<string, string>;
  label: 0 | 1;
}

export interface TheoremRecord {
  label: string;
  kind: string;
  db_position: number;
  split: string | null;
  state: State;
  renaming: Record<string, number>;
  typecodes: Record<string, string>;
}

export function readJsonl<T>(path: string): T[] {
  let raw: Buffer | string;
  if (existsSync(path)) {
    raw = readFileSync(path);
  } else if (existsSync(path + ".gz")) {
    raw = gunzipSync(readFileSync(path + ".gz"));
  } else {
    throw new Error(`no such dataset file: ${path}[.gz]`);
  }
  const text = raw.toString("utf-8");
  const out: T[] = [];
  for (const line of text.split("\n")) {
    if (line.length === 0) continue;
    out.push(JSON.parse(line) as T);
  }
  return out;
}

export function datasetFile<T>(dir: string, kind: string, split: string): T[] {
  return readJsonl<T>(join(dir, `${kind}.${split}.jsonl`));
}

export function loadTheorems(dir: string): Map<string, TheoremRecord> {
  const out = new Map<string, TheoremRecord>();
  for (const r of readJsonl<TheoremRecord>(join(dir, "theorems.jsonl"))) {
    out.set(r.label, r);
  }
  return out;
}

export interface DataManifest {
  vocabulary_sha256: string;
  splits: Record<string, number>;
  [key: string]: unknown;
}

export function loadManifest(dir: string): DataManifest {
  return JSON.parse(readFileSync(join(dir, "manifest.json"), "utf-8"));
}

/**
 * Draw a fresh injective dummy assignment for a record's variables and
 * return it as a token -> token remap from the stored renaming.  The remap
 * is identity on everything except the record's own dummy tokens, so it
 * can be applied to any token stream of the record.
 */
export function redrawRemap(renaming: Record<string, number>,
                            typecodes: Record<string, string>,
                            vocab: Vocab, rng: Rng): Map<number, number> {
  const byTc = new Map<string, string[]>();
  for (const v of Object.keys(renaming).sort()) {
    const tc = typecodes[v];
    if (!byTc.has(tc)) byTc.set(tc, []);
    byTc.get(tc)!.push(v);
  }
  const remap = new Map<number, number>();
  for (const [tc, vars] of byTc) {
    const pool = vocab.dummies.get(tc);
    if (!pool || pool.length < vars.length) {
      throw new Error(`not enough ${tc} dummies for ${vars.length} variables`);
    }
    const picks = rng.sampleIndices(pool.length, vars.length);
    vars.forEach((v, i) => remap.set(renaming[v], pool[picks[i]]));
  }
  return remap;
}

export function applyRemap(tokens: number[], remap: Map<number, number>): number[] {
  return tokens.map((t) => remap.get(t) ?? t);
}
