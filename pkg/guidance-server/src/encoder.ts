/**
 * Shared sequence encoder: token embeddings plus the four structure
 * features feed two bidirectional GRU layers.  The recurrent weights vary
 * by input section (the EOS-separated groups of the token stream) while
 * the embedding table is shared across sections and branches.
 */

import { GruBank, Node, ParamStore, Tape, gruBank, gruStep } from "./nn.js";
import { Vocab, sectionOf } from "./vocab.js";

export interface EncoderConfig {
  hidden: number;
  /** Embedding width; structure features add 4 more input dimensions. */
  embDim: number;
  layers: number;
  /** Number of EOS-separated input sections with their own GRU weights. */
  sections: number;
}

export interface Encoded {
  /** Top-layer output per position, forward and backward concatenated (2H). */
  outputs: Node[];
  /** Per layer: final forward state and final backward state (H each). */
  finals: Array<{ fwd: Node; bwd: Node }>;
}

export class Encoder {
  readonly cfg: EncoderConfig;
  readonly emb: (tape: Tape, id: number) => Node;
  /** banks[layer][direction][section] */
  private banks: GruBank[][][];

  constructor(store: ParamStore, vocab: Vocab, cfg: EncoderConfig,
              prefix: string, embName = "emb") {
    this.cfg = cfg;
    const embTable = store.param(embName, vocab.size, cfg.embDim, "xavier");
    this.emb = (tape, id) => tape.embed(embTable, id);
    this.banks = [];
    for (let l = 0; l < cfg.layers; l++) {
      const inDim = l === 0 ? cfg.embDim + 4 : 2 * cfg.hidden;
      const dirs: GruBank[][] = [];
      for (const dir of ["f", "b"]) {
        const secs: GruBank[] = [];
        for (let s = 0; s < cfg.sections; s++) {
          secs.push(gruBank(store, `${prefix}.l${l}.${dir}.s${s}`, inDim, cfg.hidden));
        }
        dirs.push(secs);
      }
      this.banks.push(dirs);
    }
  }

  encode(tape: Tape, tokens: number[], features: number[][], vocab: Vocab): Encoded {
    const n = tokens.length;
    if (n === 0) throw new Error("cannot encode an empty token stream");
    const maxSec = this.cfg.sections - 1;
    const secs = sectionOf(tokens, vocab);
    let inputs: Node[] = [];
    for (let i = 0; i < n; i++) {
      inputs.push(tape.concat(this.emb(tape, tokens[i]), tape.leaf(features[i])));
    }
    const finals: Array<{ fwd: Node; bwd: Node }> = [];
    let outputs: Node[] = [];
    for (let l = 0; l < this.cfg.layers; l++) {
      const fwdBanks = this.banks[l][0];
      const bwdBanks = this.banks[l][1];
      const fwd: Node[] = new Array(n);
      const bwd: Node[] = new Array(n);
      let h = tape.zeros(this.cfg.hidden);
      for (let i = 0; i < n; i++) {
        h = gruStep(tape, fwdBanks[Math.min(secs[i], maxSec)], inputs[i], h);
        fwd[i] = h;
      }
      const fwdFinal = h;
      h = tape.zeros(this.cfg.hidden);
      for (let i = n - 1; i >= 0; i--) {
        h = gruStep(tape, bwdBanks[Math.min(secs[i], maxSec)], inputs[i], h);
        bwd[i] = h;
      }
      finals.push({ fwd: fwdFinal, bwd: h });
      outputs = [];
      for (let i = 0; i < n; i++) outputs.push(tape.concat(fwd[i], bwd[i]));
      inputs = outputs;
    }
    return { outputs, finals };
  }
}

/**
 * The branch summary used by the classification heads: final states of
 * both directions of the top layer, concatenated.
 */
export function summary(tape: Tape, enc: Encoded): Node {
  const top = enc.finals[enc.finals.length - 1];
  return tape.concat(top.fwd, top.bwd);
}
