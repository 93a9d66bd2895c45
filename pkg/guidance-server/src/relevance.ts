/**
 * Relevance network: two parallel branches embed the proof state and a
 * candidate theorem into aligned vector spaces; a bilinear form scores the
 * pair.  Theorem vectors depend only on the theorem statement, so they can
 * be computed once and cached when serving.
 */

import { Encoder, summary } from "./encoder.js";
import { Node, Param, ParamStore, Tape } from "./nn.js";
import { Rng } from "./rng.js";
import { State, RelevanceRecord, TheoremRecord } from "./data.js";
import { Vocab } from "./vocab.js";

export interface ModelConfig {
  hidden: number;
  embDim: number;
  layers: number;
  sections: number;
}

export function toyConfig(hidden = 64): ModelConfig {
  return { hidden, embDim: hidden, layers: 2, sections: 2 };
}

export class RelevanceModel {
  readonly cfg: ModelConfig;
  readonly store: ParamStore;
  readonly vocab: Vocab;
  private encCtx: Encoder;
  private encThm: Encoder;
  private fcCtx: { W: Param; b: Param };
  private fcThm: { W: Param; b: Param };
  private bilinear: Param;
  /** label -> theorem vector, used when serving; invalidated by training. */
  private thmCache = new Map<string, Float64Array>();
  cacheEnabled = true;

  constructor(vocab: Vocab, cfg: ModelConfig, rng: Rng) {
    this.cfg = cfg;
    this.vocab = vocab;
    this.store = new ParamStore(rng);
    this.encCtx = new Encoder(this.store, vocab, cfg, "ctx");
    this.encThm = new Encoder(this.store, vocab, cfg, "thm");
    this.fcCtx = {
      W: this.store.param("ctx.fc.W", cfg.hidden, 2 * cfg.hidden, "xavier"),
      b: this.store.param("ctx.fc.b", cfg.hidden, 1, "zero", false),
    };
    this.fcThm = {
      W: this.store.param("thm.fc.W", cfg.hidden, 2 * cfg.hidden, "xavier"),
      b: this.store.param("thm.fc.b", cfg.hidden, 1, "zero", false),
    };
    // zero-initialized so an untrained model scores every pair identically
    this.bilinear = this.store.param("bilinear.W", cfg.hidden, cfg.hidden, "zero");
  }

  exprVec(tape: Tape, state: State): Node {
    const enc = this.encCtx.encode(tape, state.tokens, state.features, this.vocab);
    return tape.leaky(tape.addBias(tape.mv(this.fcCtx.W, summary(tape, enc)), this.fcCtx.b));
  }

  thmVec(tape: Tape, state: State): Node {
    const enc = this.encThm.encode(tape, state.tokens, state.features, this.vocab);
    return tape.leaky(tape.addBias(tape.mv(this.fcThm.W, summary(tape, enc)), this.fcThm.b));
  }

  logit(tape: Tape, v: Node, w: Node): Node {
    return tape.dot(v, tape.mv(this.bilinear, w));
  }

  /**
   * Negative-sampling loss for one record: -log s(l_pos) - sum over four
   * negatives of log s(-l_neg), negatives uniform (with replacement) over
   * the record's other viable candidates.  Records with no alternative
   * candidate carry no signal and yield null.
   */
  recordLoss(tape: Tape, rec: RelevanceRecord, state: State,
             getVec: (label: string) => Node, rng: Rng): Node | null {
    const pool = rec.candidates.filter((c) => c !== rec.target);
    if (pool.length === 0) return null;
    const v = this.exprVec(tape, state);
    const terms: Node[] = [];
    terms.push(tape.negLogSigmoid(this.logit(tape, v, getVec(rec.target)), 1));
    for (let i = 0; i < 4; i++) {
      const neg = pool[rng.int(pool.length)];
      terms.push(tape.negLogSigmoid(this.logit(tape, v, getVec(neg)), -1));
    }
    return tape.sumScalars(terms);
  }

  /** Theorem vector as plain data, cached by label when enabled. */
  thmVecData(label: string, theorems: Map<string, TheoremRecord>): Float64Array | null {
    if (this.cacheEnabled) {
      const hit = this.thmCache.get(label);
      if (hit) return hit;
    }
    const rec = theorems.get(label);
    if (!rec) return null;
    const tape = new Tape(false);
    const w = this.thmVec(tape, rec.state);
    if (this.cacheEnabled) this.thmCache.set(label, w.data);
    return w.data;
  }

  invalidateCache(): void {
    this.thmCache.clear();
  }

  /**
   * Bilinear scores for a list of theorem labels against one state.
   * Unknown labels get the zero vector, hence a neutral logit.
   */
  logits(state: State, labels: string[], theorems: Map<string, TheoremRecord>): Float64Array {
    const tape = new Tape(false);
    const v = this.exprVec(tape, state);
    const out = new Float64Array(labels.length);
    const H = this.cfg.hidden;
    const W = this.bilinear.data;
    // v^T W once, then dot with each theorem vector
    const vw = new Float64Array(H);
    for (let i = 0; i < H; i++) {
      const vi = v.data[i];
      if (vi === 0) continue;
      const off = i * H;
      for (let j = 0; j < H; j++) vw[j] += vi * W[off + j];
    }
    for (let k = 0; k < labels.length; k++) {
      const w = this.thmVecData(labels[k], theorems);
      if (!w) {
        out[k] = 0;
        continue;
      }
      let s = 0;
      for (let j = 0; j < H; j++) s += vw[j] * w[j];
      out[k] = s;
    }
    return out;
  }

  /** Softmax probabilities over the supplied candidate labels. */
  probabilities(state: State, labels: string[],
                theorems: Map<string, TheoremRecord>): Float64Array {
    const l = this.logits(state, labels, theorems);
    let mx = -Infinity;
    for (const x of l) mx = Math.max(mx, x);
    let z = 0;
    for (let i = 0; i < l.length; i++) {
      l[i] = Math.exp(l[i] - mx);
      z += l[i];
    }
    for (let i = 0; i < l.length; i++) l[i] /= z;
    return l;
  }
}

/** Rank of the target among candidates by descending logit, ties by index. */
export function targetRank(logits: Float64Array, targetIndex: number): number {
  let rank = 0;
  for (let i = 0; i < logits.length; i++) {
    if (i === targetIndex) continue;
    if (logits[i] > logits[targetIndex] ||
        (logits[i] === logits[targetIndex] && i < targetIndex)) {
      rank += 1;
    }
  }
  return rank;
}
