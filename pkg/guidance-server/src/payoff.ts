/**
 * Payoff network: encodes a goal expression with its hypotheses and
 * predicts the probability the goal is provable.  The top-layer final
 * states of both directions feed two leaky-rectified dense layers and a
 * sigmoid output.
 */

import { Encoder, summary } from "./encoder.js";
import { Node, Param, ParamStore, Tape, sigmoidScalar } from "./nn.js";
import { Rng } from "./rng.js";
import { State } from "./data.js";
import { Vocab } from "./vocab.js";
import { ModelConfig } from "./relevance.js";

export class PayoffModel {
  readonly cfg: ModelConfig;
  readonly store: ParamStore;
  readonly vocab: Vocab;
  private enc: Encoder;
  private fc1: { W: Param; b: Param };
  private fc2: { W: Param; b: Param };
  private out: { W: Param; b: Param };

  constructor(vocab: Vocab, cfg: ModelConfig, rng: Rng) {
    this.cfg = cfg;
    this.vocab = vocab;
    this.store = new ParamStore(rng);
    this.enc = new Encoder(this.store, vocab, cfg, "enc");
    const H = cfg.hidden;
    this.fc1 = {
      W: this.store.param("fc1.W", H, 2 * H, "xavier"),
      b: this.store.param("fc1.b", H, 1, "zero", false),
    };
    this.fc2 = {
      W: this.store.param("fc2.W", H, H, "xavier"),
      b: this.store.param("fc2.b", H, 1, "zero", false),
    };
    // zero-initialized head: an untrained model answers exactly 0.5
    this.out = {
      W: this.store.param("out.W", 1, H, "zero"),
      b: this.store.param("out.b", 1, 1, "zero", false),
    };
  }

  /** Pre-sigmoid score for one state. */
  logit(tape: Tape, state: State): Node {
    const enc = this.enc.encode(tape, state.tokens, state.features, this.vocab);
    let h = summary(tape, enc);
    h = tape.leaky(tape.addBias(tape.mv(this.fc1.W, h), this.fc1.b));
    h = tape.leaky(tape.addBias(tape.mv(this.fc2.W, h), this.fc2.b));
    return tape.addBias(tape.mv(this.out.W, h), this.out.b);
  }

  /** Cross-entropy loss against a 0/1 label. */
  recordLoss(tape: Tape, state: State, label: 0 | 1): Node {
    return tape.negLogSigmoid(this.logit(tape, state), label === 1 ? 1 : -1);
  }

  /** Provability probability, kept strictly inside (0, 1). */
  probability(state: State): number {
    const tape = new Tape(false);
    const x = this.logit(tape, state).data[0];
    const p = sigmoidScalar(x);
    return Math.min(Math.max(p, 1e-12), 1 - 1e-12);
  }
}
