import { createHash } from "node:crypto";
import { Param, ParamStore, Tape } from "../src/nn.js";
import { Rng } from "../src/rng.js";
import { Vocab, loadVocab } from "../src/vocab.js";
import {
  GenerativeRecord,
  PayoffRecord,
  RelevanceRecord,
  TheoremRecord,
  datasetFile,
  loadTheorems,
} from "../src/data.js";

export const DATA_DIR = new URL("../data", import.meta.url).pathname;
export const MODELS_DIR = new URL("../models", import.meta.url).pathname;

export function vocab(): Vocab {
  return loadVocab(DATA_DIR);
}

export function theorems(): Map<string, TheoremRecord> {
  return loadTheorems(DATA_DIR);
}

export function relevanceRecords(split: string): RelevanceRecord[] {
  return datasetFile<RelevanceRecord>(DATA_DIR, "relevance", split);
}

export function generativeRecords(split: string): GenerativeRecord[] {
  return datasetFile<GenerativeRecord>(DATA_DIR, "generative", split);
}

export function payoffRecords(split: string): PayoffRecord[] {
  return datasetFile<PayoffRecord>(DATA_DIR, "payoff", split);
}

/** Give zero-initialized heads small random values so every path carries
 *  gradient during finite-difference checks. */
export function liven(store: ParamStore, seed = 77): void {
  const rng = new Rng(seed);
  for (const p of store.params.values()) {
    let zero = true;
    for (const v of p.data) {
      if (v !== 0) {
        zero = false;
        break;
      }
    }
    if (zero) {
      for (let i = 0; i < p.data.length; i++) p.data[i] = rng.normal() * 0.1;
    }
  }
}

export interface FdFailure {
  param: string;
  index: number;
  analytic: number;
  fd: number;
  rel: number;
}

/**
 * Central finite-difference check of analytic parameter gradients on
 * sampled coordinates.  `forward` must rebuild the loss from scratch (the
 * parameter data is perturbed in place between calls).
 */
export function fdCheckParams(store: ParamStore,
                              forward: (tape: Tape) => { data: Float64Array },
                              coordsPerParam = 2, h = 1e-5,
                              relTol = 1e-3, seed = 42): FdFailure[] {
  const tape = new Tape(true);
  const loss = forward(tape);
  store.zeroGrads();
  tape.backward(loss as never);
  const analytic = new Map<string, Float64Array>();
  for (const p of store.params.values()) analytic.set(p.name, p.grad.slice());

  const rng = new Rng(seed);
  const failures: FdFailure[] = [];
  const evalLoss = (): number => forward(new Tape(false)).data[0];
  for (const p of store.params.values()) {
    const n = Math.min(coordsPerParam, p.size);
    const coords = rng.sampleIndices(p.size, n);
    for (const i of coords) {
      const keep = p.data[i];
      p.data[i] = keep + h;
      const up = evalLoss();
      p.data[i] = keep - h;
      const down = evalLoss();
      p.data[i] = keep;
      const fd = (up - down) / (2 * h);
      const a = analytic.get(p.name)![i];
      const denom = Math.max(1e-8, Math.abs(a) + Math.abs(fd));
      const rel = Math.abs(a - fd) / denom;
      if (Math.abs(a - fd) > 1e-7 && rel > relTol) {
        failures.push({ param: p.name, index: i, analytic: a, fd, rel });
      }
    }
  }
  return failures;
}

/** A tiny synthetic vocabulary for filter unit tests. */
export function syntheticVocab(): Vocab {
  const names = ["inj", "pair", "w_a", "w_b", "s_a", "s_b", "s_c",
                 "EOH", "EOS", "START", "UV", "TARGET"];
  const flat = names.join("\n") + "\n";
  const hash = createHash("sha256").update(flat, "utf-8").digest("hex");
  const T = (id: number, token: string, kind: "constructor" | "dummy" | "special",
             arity: number, typecode: string | null, position: number | null,
             slots: string[] | null) => ({ id, token, kind, arity, typecode, position, slots });
  return new Vocab(flat, {
    hash,
    specials: { EOH: 7, EOS: 8, START: 9, UV: 10, TARGET: 11 },
    tokens: [
      T(0, "inj", "constructor", 1, "wff", 5, ["set"]),
      T(1, "pair", "constructor", 2, "wff", 6, ["wff", "set"]),
      T(2, "w_a", "dummy", 0, "wff", null, null),
      T(3, "w_b", "dummy", 0, "wff", null, null),
      T(4, "s_a", "dummy", 0, "set", null, null),
      T(5, "s_b", "dummy", 0, "set", null, null),
      T(6, "s_c", "dummy", 0, "set", null, null),
      T(7, "EOH", "special", 0, null, null, null),
      T(8, "EOS", "special", 0, null, null, null),
      T(9, "START", "special", 0, null, null, null),
      T(10, "UV", "special", 0, null, null, null),
      T(11, "TARGET", "special", 0, null, null, null),
    ],
    dummies: { wff: [2, 3], set: [4, 5, 6] },
  });
}

export function expectNoFailures(failures: FdFailure[]): void {
  if (failures.length > 0) {
    const lines = failures
      .slice(0, 10)
      .map((f) => `${f.param}[${f.index}] analytic=${f.analytic} fd=${f.fd} rel=${f.rel}`);
    throw new Error(`gradient mismatches:\n${lines.join("\n")}`);
  }
}
