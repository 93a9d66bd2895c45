/**
 * Generative network: sequence-to-sequence with attention.  The encoder
 * reads the applied theorem's hypotheses (with the substitution so far
 * spliced in and the variable being generated marked) followed by the
 * context hypotheses; the decoder emits the target substitution tree in
 * pre-order, one constructor or variable token at a time.
 *
 * Trees are self-delimiting in pre-order -- decoding stops when every
 * opened constructor has all its children -- so there is no stop token.
 */

import { Encoder } from "./encoder.js";
import { GruBank, Node, Param, ParamStore, Tape, gruBank, gruStep } from "./nn.js";
import { Rng } from "./rng.js";
import { GenerativeRecord, State, TheoremRecord } from "./data.js";
import { Vocab, featuresFor } from "./vocab.js";
import { ModelConfig } from "./relevance.js";

/** Substitution content for one theorem variable during conditioning. */
export type SubstEntry = number[] | "UV" | "TARGET";

/**
 * Splice a substitution into a theorem's hypothesis section and append the
 * context hypotheses, EOS-separated.  Structure features are recomputed
 * for the spliced trees and reused for the untouched context section.
 */
export function buildConditioning(
  thm: TheoremRecord,
  subst: Map<string, SubstEntry>,
  ctxHyp: { tokens: number[]; features: number[][] },
  vocab: Vocab,
): State {
  const eos = vocab.specials.EOS;
  const eosIdx = thm.state.tokens.indexOf(eos);
  if (eosIdx < 0) throw new Error(`theorem ${thm.label} state has no section break`);
  const hypToks = thm.state.tokens.slice(0, eosIdx);
  const tokToVar = new Map<number, string>();
  for (const [v, t] of Object.entries(thm.renaming)) tokToVar.set(t, v);

  const spliced: number[] = [];
  for (const t of hypToks) {
    if (t === vocab.specials.EOH || vocab.kind(t) !== "dummy") {
      spliced.push(t);
      continue;
    }
    const v = tokToVar.get(t);
    const entry = v !== undefined ? subst.get(v) : undefined;
    if (entry === undefined) {
      throw new Error(`theorem ${thm.label} variable for token ${t} has no substitution`);
    }
    if (entry === "UV") spliced.push(vocab.specials.UV);
    else if (entry === "TARGET") spliced.push(vocab.specials.TARGET);
    else spliced.push(...entry);
  }
  const tokens = [...spliced, eos, ...ctxHyp.tokens];
  const features = [
    ...featuresFor(spliced, vocab),
    [0, 0, 0, 0],
    ...ctxHyp.features,
  ];
  return { tokens, features };
}

/** The hypothesis section of a proof state (everything before the EOS). */
export function stateHypSection(state: State, vocab: Vocab): { tokens: number[]; features: number[][] } {
  const idx = state.tokens.indexOf(vocab.specials.EOS);
  if (idx < 0) throw new Error("proof state has no section break");
  return { tokens: state.tokens.slice(0, idx), features: state.features.slice(0, idx) };
}

export class GenerativeModel {
  readonly cfg: ModelConfig;
  readonly store: ParamStore;
  readonly vocab: Vocab;
  private enc: Encoder;
  private bridges: Array<{ W: Param; b: Param }>;
  private dec: GruBank[];
  private attn: Param;
  private comb: { W: Param; b: Param };
  private out: { W: Param; b: Param };

  constructor(vocab: Vocab, cfg: ModelConfig, rng: Rng) {
    this.cfg = cfg;
    this.vocab = vocab;
    this.store = new ParamStore(rng);
    this.enc = new Encoder(this.store, vocab, cfg, "enc");
    const H = cfg.hidden;
    this.bridges = [];
    this.dec = [];
    for (let l = 0; l < cfg.layers; l++) {
      this.bridges.push({
        W: this.store.param(`bridge.l${l}.W`, H, 2 * H, "xavier"),
        b: this.store.param(`bridge.l${l}.b`, H, 1, "zero", false),
      });
      const inDim = l === 0 ? cfg.embDim + 4 : H;
      this.dec.push(gruBank(this.store, `dec.l${l}`, inDim, H));
    }
    this.attn = this.store.param("attn.W", H, 2 * H, "xavier");
    this.comb = {
      W: this.store.param("comb.W", H, 3 * H, "xavier"),
      b: this.store.param("comb.b", H, 1, "zero", false),
    };
    // zero-initialized head: an untrained model is uniform over the vocabulary
    this.out = {
      W: this.store.param("out.W", vocab.size, H, "zero"),
      b: this.store.param("out.b", vocab.size, 1, "zero", false),
    };
  }

  /** Encode conditioning and bridge each layer's finals to decoder inits. */
  init(tape: Tape, cond: State): { encOut: Node[]; hs: Node[] } {
    const enc = this.enc.encode(tape, cond.tokens, cond.features, this.vocab);
    const hs = enc.finals.map((f, l) =>
      tape.leaky(tape.addBias(
        tape.mv(this.bridges[l].W, tape.concat(f.fwd, f.bwd)),
        this.bridges[l].b,
      )),
    );
    return { encOut: enc.outputs, hs };
  }

  /**
   * One decoder step: consume the previous output token (START first) and
   * produce logits for the next one, attending over the encoder outputs.
   */
  step(tape: Tape, encOut: Node[], hs: Node[], tok: number, feat: number[]):
      { hs: Node[]; logits: Node } {
    let x = tape.concat(this.enc.emb(tape, tok), tape.leaf(feat));
    const next: Node[] = [];
    for (let l = 0; l < this.cfg.layers; l++) {
      x = gruStep(tape, this.dec[l], x, hs[l]);
      next.push(x);
    }
    const top = next[this.cfg.layers - 1];
    const query = tape.mvT(this.attn, top); // scores are top^T W enc_s
    const weights = tape.softmax(tape.attnScores(query, encOut));
    const context = tape.weightedSum(encOut, weights);
    const comb = tape.leaky(tape.addBias(
      tape.mv(this.comb.W, tape.concat(top, context)), this.comb.b));
    const logits = tape.addBias(tape.mv(this.out.W, comb), this.out.b);
    return { hs: next, logits };
  }

  /**
   * Teacher-forced cross entropy of one target tree given a conditioning
   * state.  Returns the summed per-token loss terms.
   */
  treeLoss(tape: Tape, cond: State, target: number[]): Node {
    const { encOut, hs } = this.init(tape, cond);
    const feats = featuresFor(target, this.vocab);
    let state = hs;
    const terms: Node[] = [];
    for (let i = 0; i < target.length; i++) {
      const tok = i === 0 ? this.vocab.specials.START : target[i - 1];
      const feat = i === 0 ? [0, 0, 0, 0] : feats[i - 1];
      const r = this.step(tape, encOut, state, tok, feat);
      state = r.hs;
      terms.push(tape.ceFromLogits(r.logits, target[i]));
    }
    return tape.sumScalars(terms);
  }

  /**
   * Loss over a full record: targets are generated one at a time in a
   * random order, earlier targets teacher-forced into the conditioning.
   * Returns the loss and the number of target tokens covered.
   */
  recordLoss(tape: Tape, rec: GenerativeRecord, remapped: {
    state: State;
    constrained: Record<string, number[]>;
    targets: number[][];
  }, thm: TheoremRecord, rng: Rng | null): { loss: Node; tokens: number } {
    const k = rec.unconstrained.length;
    const order = rng
      ? rng.sampleIndices(k, k)
      : Array.from({ length: k }, (_, i) => i);
    const ctxHyp = stateHypSection(remapped.state, this.vocab);
    const losses: Node[] = [];
    let tokens = 0;
    for (let s = 0; s < k; s++) {
      const subst = new Map<string, SubstEntry>();
      for (const [v, toks] of Object.entries(remapped.constrained)) subst.set(v, toks);
      for (let j = 0; j < k; j++) {
        const pos = order.indexOf(j);
        const v = rec.unconstrained[j].var;
        if (pos < s) subst.set(v, remapped.targets[j]);
        else if (pos === s) subst.set(v, "TARGET");
        else subst.set(v, "UV");
      }
      const cond = buildConditioning(thm, subst, ctxHyp, this.vocab);
      const target = remapped.targets[order[s]];
      losses.push(this.treeLoss(tape, cond, target));
      tokens += target.length;
    }
    return { loss: tape.sumScalars(losses), tokens };
  }
}

// ---------------------------------------------------------------------------
// Beam generation

export interface DvSpec {
  /** Theorem disjointness pairs over its variable names. */
  thmPairs: Array<[string, string]>;
  /** Context disjointness over dummy token ids, as "a,b" keys with a < b. */
  ctxPairs: Set<string>;
}

export interface GenerateRequest {
  state: State;
  theorem: string;
  constrained: Record<string, number[]>;
  unconstrained: Array<{ var: string; typecode: string }>;
  /** Context variable -> dummy token id. */
  renaming: Record<string, number>;
  /** Context database position; null disables the declaration filter. */
  position: number | null;
  limit: number;
  maxTokens: number;
}

export interface Candidate {
  trees: number[][];
  prob: number;
}

interface BeamState {
  targetIdx: number;
  done: number[][];
  cur: number[];
  /** LIFO of expected typecodes for the current tree's open slots. */
  expect: string[];
  /** Fresh set-typecode dummies already used by this candidate. */
  fresh: number[];
  usedTokens: number;
  logp: number;
  seq: number;
  hs: Node[];
  encOut: Node[];
  /** Structure features of the token just emitted (decoder input). */
  lastFeat: number[];
  /** Open-node stack for feature computation: [degree, nextPos] pairs. */
  featStack: Array<{ remaining: number; degree: number; nextPos: number }>;
}

const POPS_PER_WIDTH = 80;

function heapPush(heap: BeamState[], s: BeamState): void {
  heap.push(s);
  let i = heap.length - 1;
  while (i > 0) {
    const parent = (i - 1) >> 1;
    if (better(heap[i], heap[parent])) {
      const tmp = heap[i];
      heap[i] = heap[parent];
      heap[parent] = tmp;
      i = parent;
    } else break;
  }
}

function heapPop(heap: BeamState[]): BeamState {
  const top = heap[0];
  const last = heap.pop()!;
  if (heap.length > 0) {
    heap[0] = last;
    let i = 0;
    for (;;) {
      const l = 2 * i + 1;
      const r = l + 1;
      let best = i;
      if (l < heap.length && better(heap[l], heap[best])) best = l;
      if (r < heap.length && better(heap[r], heap[best])) best = r;
      if (best === i) break;
      const tmp = heap[i];
      heap[i] = heap[best];
      heap[best] = tmp;
      i = best;
    }
  }
  return top;
}

function better(a: BeamState, b: BeamState): boolean {
  return a.logp > b.logp || (a.logp === b.logp && a.seq < b.seq);
}

function logSoftmax(logits: Float64Array): Float64Array {
  let mx = -Infinity;
  for (const v of logits) mx = Math.max(mx, v);
  let z = 0;
  for (const v of logits) z += Math.exp(v - mx);
  const lse = mx + Math.log(z);
  const out = new Float64Array(logits.length);
  for (let i = 0; i < logits.length; i++) out[i] = logits[i] - lse;
  return out;
}

function dvKey(a: number, b: number): string {
  return a < b ? `${a},${b}` : `${b},${a}`;
}

/**
 * Width-bounded candidate generation as budgeted best-first search: states
 * are expanded in strictly decreasing probability order with a pop budget
 * proportional to the width, and the first `width` completed assignments
 * are the result.  Because the expansion order does not depend on the
 * width, the width-k result set is a prefix (hence subset) of the
 * width-(k+1) set.
 */
export function beamGenerate(model: GenerativeModel, req: GenerateRequest,
                             thm: TheoremRecord | undefined,
                             dv: DvSpec = { thmPairs: [], ctxPairs: new Set() }):
    Candidate[] {
  const vocab = model.vocab;
  const k = req.unconstrained.length;
  if (k === 0) return [{ trees: [], prob: 1 }];
  if (!thm) return [];
  const width = Math.max(1, req.limit);
  const tape = new Tape(false);
  const ctxHyp = stateHypSection(req.state, vocab);

  // context variables available per typecode (the renaming's images)
  const ctxDummies = new Set<number>(Object.values(req.renaming));

  // substitution images per theorem variable, by dummy token, for the
  // disjointness filter; unconstrained entries are read off the beam state
  const constrainedImages = new Map<string, Set<number>>();
  for (const [v, toks] of Object.entries(req.constrained)) {
    constrainedImages.set(v, new Set(toks.filter((t) => vocab.kind(t) === "dummy")));
  }
  const uvIndex = new Map<string, number>();
  req.unconstrained.forEach((u, i) => uvIndex.set(u.var, i));
  const dvAgainst = new Map<string, string[]>();
  for (const [a, b] of dv.thmPairs) {
    if (!dvAgainst.has(a)) dvAgainst.set(a, []);
    if (!dvAgainst.has(b)) dvAgainst.set(b, []);
    dvAgainst.get(a)!.push(b);
    dvAgainst.get(b)!.push(a);
  }

  const condFor = (done: number[][]): State => {
    const subst = new Map<string, SubstEntry>();
    for (const [v, toks] of Object.entries(req.constrained)) subst.set(v, toks);
    for (let j = 0; j < k; j++) {
      const v = req.unconstrained[j].var;
      if (j < done.length) subst.set(v, done[j]);
      else if (j === done.length) subst.set(v, "TARGET");
      else subst.set(v, "UV");
    }
    return buildConditioning(thm, subst, ctxHyp, vocab);
  };

  let seq = 0;
  const start = (done: number[][], logp: number, usedTokens: number,
                 fresh: number[]): BeamState => {
    const { encOut, hs } = model.init(tape, condFor(done));
    return {
      targetIdx: done.length,
      done,
      cur: [],
      expect: [req.unconstrained[done.length].typecode],
      fresh,
      usedTokens,
      logp,
      seq: seq++,
      hs,
      encOut,
      lastFeat: [0, 0, 0, 0],
      featStack: [],
    };
  };

  const allowedTokens = (s: BeamState, tc: string): number[] => {
    const out: number[] = [];
    const targetVar = req.unconstrained[s.targetIdx].var;
    const against = dvAgainst.get(targetVar) ?? [];
    for (let t = 0; t < vocab.size; t++) {
      const info = vocab.tokens[t];
      if (info.kind === "constructor") {
        if (info.typecode !== tc) continue;
        if (req.position !== null && info.position !== null &&
            info.position >= req.position) {
          continue;
        }
        out.push(t);
      } else if (info.kind === "dummy") {
        if (info.typecode !== tc) continue;
        if (ctxDummies.has(t) || s.fresh.includes(t)) {
          // present in the context or already introduced by this candidate
        } else if ((tc === "set" || tc === "setvar") && s.fresh.length === 0) {
          // at most one new set variable per candidate, and only its
          // lowest-id representative (the choices are interchangeable)
          let next = -1;
          for (const d of vocab.dummies.get(tc) ?? []) {
            if (!ctxDummies.has(d)) {
              next = d;
              break;
            }
          }
          if (t !== next) continue;
        } else {
          continue; // new variables of other typecodes never enter
        }
        // disjointness: the new variable must be disjoint, in the context,
        // from every variable already substituted for a paired theorem var
        let ok = true;
        for (const other of against) {
          let vars = constrainedImages.get(other);
          if (!vars) {
            const idx = uvIndex.get(other);
            if (idx === undefined || idx >= s.done.length) {
              continue; // not substituted yet; checked when it is
            }
            vars = new Set(s.done[idx].filter((d) => vocab.kind(d) === "dummy"));
          }
          for (const a of vars) {
            if (a === t || !dv.ctxPairs.has(dvKey(a, t))) {
              ok = false;
              break;
            }
          }
          if (!ok) break;
        }
        if (!ok) continue;
        out.push(t);
      }
    }
    return out;
  };

  const heap: BeamState[] = [];
  heapPush(heap, start([], 0, 0, []));
  const results: Candidate[] = [];
  const budget = width * POPS_PER_WIDTH;
  let pops = 0;

  while (heap.length > 0 && results.length < width && pops < budget) {
    const s = heapPop(heap);
    pops += 1;
    if (s.expect.length === 0) {
      // current target's tree is complete
      const done = [...s.done, s.cur];
      if (s.targetIdx === k - 1) {
        results.push({ trees: done, prob: Math.exp(s.logp) });
      } else {
        heapPush(heap, start(done, s.logp, s.usedTokens, s.fresh));
      }
      continue;
    }
    const tc = s.expect[s.expect.length - 1];
    const inputTok = s.cur.length > 0 ? s.cur[s.cur.length - 1] : vocab.specials.START;
    const r = model.step(tape, s.encOut, s.hs, inputTok, s.lastFeat);
    const logProbs = logSoftmax(r.logits.data);
    for (const t of allowedTokens(s, tc)) {
      if (s.usedTokens + 1 > req.maxTokens) break;
      const expect = s.expect.slice(0, -1);
      const slots = vocab.tokens[t].slots ?? [];
      for (let i = slots.length - 1; i >= 0; i--) expect.push(slots[i]);
      // structure features of the emitted token, from the walk state
      const featStack = s.featStack.map((f) => ({ ...f }));
      const degree = vocab.arity(t);
      const parent = featStack.length > 0 ? featStack[featStack.length - 1] : null;
      const lastFeat = [
        featStack.length,
        degree,
        parent ? parent.degree : 0,
        parent ? parent.nextPos : 0,
      ];
      if (degree > 0) {
        featStack.push({ remaining: degree, degree, nextPos: 0 });
      } else {
        while (featStack.length > 0) {
          const top = featStack[featStack.length - 1];
          top.remaining -= 1;
          top.nextPos += 1;
          if (top.remaining === 0) featStack.pop();
          else break;
        }
      }
      const fresh =
        vocab.kind(t) === "dummy" && !ctxDummies.has(t) && !s.fresh.includes(t)
          ? [...s.fresh, t]
          : s.fresh;
      heapPush(heap, {
        targetIdx: s.targetIdx,
        done: s.done,
        cur: [...s.cur, t],
        expect,
        fresh,
        usedTokens: s.usedTokens + 1,
        logp: s.logp + logProbs[t],
        seq: seq++,
        hs: r.hs,
        encOut: s.encOut,
        lastFeat,
        featStack,
      });
    }
  }
  return results;
}
