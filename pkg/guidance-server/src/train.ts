/**
 * Training entry point for the three guidance networks.
 *
 *   node dist/train.js --model relevance --data data --out models/relevance
 *
 * Shared protocol: Adam with weight decay, validation after every epoch,
 * learning rate halved whenever validation fails to improve, stop after
 * three consecutive stalls, best-validation parameters checkpointed.
 */

import { parseArgs } from "node:util";
import { mkdirSync } from "node:fs";
import { dirname } from "node:path";
import {
  GenerativeRecord,
  PayoffRecord,
  RelevanceRecord,
  State,
  TheoremRecord,
  applyRemap,
  datasetFile,
  loadManifest,
  loadTheorems,
  redrawRemap,
} from "./data.js";
import { EpochMetrics, saveCheckpoint } from "./checkpoint.js";
import { Node, ParamStore, Tape } from "./nn.js";
import { Rng } from "./rng.js";
import { GenerativeModel } from "./generative.js";
import { ModelConfig, RelevanceModel, targetRank } from "./relevance.js";
import { PayoffModel } from "./payoff.js";
import { Vocab, loadVocab } from "./vocab.js";

interface TrainArgs {
  model: "relevance" | "generative" | "payoff";
  data: string;
  out: string;
  hidden: number;
  lr: number;
  l2: number;
  batch: number;
  epochs: number;
  seed: number;
  limit: number;
  valLimit: number;
}

function parse(argv: string[]): TrainArgs {
  const { values } = parseArgs({
    args: argv,
    options: {
      model: { type: "string" },
      data: { type: "string", default: "data" },
      out: { type: "string" },
      hidden: { type: "string", default: "64" },
      lr: { type: "string", default: "3e-3" },
      l2: { type: "string", default: "1e-4" },
      batch: { type: "string", default: "32" },
      epochs: { type: "string", default: "40" },
      seed: { type: "string", default: "1" },
      limit: { type: "string", default: "0" },
      "val-limit": { type: "string", default: "0" },
    },
  });
  const model = values.model;
  if (model !== "relevance" && model !== "generative" && model !== "payoff") {
    throw new Error("--model must be relevance, generative or payoff");
  }
  if (!values.out) throw new Error("--out is required");
  const num = (s: string, name: string): number => {
    const v = Number(s);
    if (!Number.isFinite(v)) throw new Error(`bad numeric value for --${name}`);
    return v;
  };
  return {
    model,
    data: values.data!,
    out: values.out,
    hidden: num(values.hidden!, "hidden"),
    lr: num(values.lr!, "lr"),
    l2: num(values.l2!, "l2"),
    batch: num(values.batch!, "batch"),
    epochs: num(values.epochs!, "epochs"),
    seed: num(values.seed!, "seed"),
    limit: num(values.limit!, "limit"),
    valLimit: num(values["val-limit"]!, "val-limit"),
  };
}

function snapshotParams(store: ParamStore): Map<string, Float64Array> {
  const out = new Map<string, Float64Array>();
  for (const p of store.params.values()) out.set(p.name, p.data.slice());
  return out;
}

function restoreParams(store: ParamStore, snap: Map<string, Float64Array>): void {
  for (const p of store.params.values()) {
    const data = snap.get(p.name);
    if (!data) throw new Error(`snapshot missing ${p.name}`);
    p.data.set(data);
  }
}

function batches<T>(items: T[], size: number): T[][] {
  const out: T[][] = [];
  for (let i = 0; i < items.length; i += size) out.push(items.slice(i, i + size));
  return out;
}

function cap<T>(items: T[], limit: number): T[] {
  return limit > 0 ? items.slice(0, limit) : items;
}

/**
 * The shared epoch driver.  `trainEpoch` runs one pass and returns the mean
 * training loss; `evalVal` returns the validation metrics, of which
 * `valLoss` drives the schedule.
 */
function run(args: TrainArgs, store: ParamStore, vocabHash: string,
             hyper: Record<string, number | string>,
             trainEpoch: (rng: Rng, lr: number) => number,
             evalVal: () => Record<string, number>): void {
  let lr = args.lr;
  let best = Infinity;
  let bestEpoch = -1;
  let stalls = 0;
  let snap: Map<string, Float64Array> | null = null;
  const epochs: EpochMetrics[] = [];
  for (let epoch = 1; epoch <= args.epochs; epoch++) {
    const t0 = Date.now();
    const epochRng = new Rng(args.seed * 1000003 + epoch);
    const trainLoss = trainEpoch(epochRng, lr);
    const metrics = evalVal();
    const row: EpochMetrics = { epoch, lr, trainLoss, valLoss: NaN, ...metrics };
    epochs.push(row);
    const secs = ((Date.now() - t0) / 1000).toFixed(1);
    const extra = Object.entries(metrics)
      .map(([k, v]) => `${k}=${v.toFixed(4)}`)
      .join(" ");
    console.log(`epoch ${epoch} lr=${lr.toExponential(2)} trainLoss=${trainLoss.toFixed(4)} ${extra} (${secs}s)`);
    if (row.valLoss < best - 1e-9) {
      best = row.valLoss;
      bestEpoch = epoch;
      stalls = 0;
      snap = snapshotParams(store);
      saveCheckpoint(args.out, args.model, vocabHash, hyper, epochs, bestEpoch, store);
    } else {
      stalls += 1;
      lr /= 2;
      console.log(`  no improvement (${stalls} stall${stalls > 1 ? "s" : ""}), lr -> ${lr.toExponential(2)}`);
      if (stalls >= 3) break;
    }
  }
  if (!snap) throw new Error("validation never improved; nothing to save");
  restoreParams(store, snap);
  saveCheckpoint(args.out, args.model, vocabHash, hyper, epochs, bestEpoch, store);
  console.log(`saved ${args.out}.json (best epoch ${bestEpoch}, valLoss ${best.toFixed(4)})`);
}

function remapState(state: State, remap: Map<number, number>): State {
  return { tokens: applyRemap(state.tokens, remap), features: state.features };
}

// ---------------------------------------------------------------------------

function trainRelevance(args: TrainArgs, vocab: Vocab, cfg: ModelConfig): void {
  const train = cap(datasetFile<RelevanceRecord>(args.data, "relevance", "train"), args.limit);
  const val = cap(datasetFile<RelevanceRecord>(args.data, "relevance", "validation"), args.valLimit);
  const theorems = loadTheorems(args.data);
  const model = new RelevanceModel(vocab, cfg, new Rng(args.seed));
  console.log(`relevance: ${train.length} train / ${val.length} val records, ${model.store.totalSize()} parameters`);

  const trainEpoch = (rng: Rng, lr: number): number => {
    model.cacheEnabled = false;
    const order = [...train];
    rng.shuffle(order);
    let total = 0;
    let count = 0;
    for (const batch of batches(order, args.batch)) {
      const tape = new Tape(true);
      const vecs = new Map<string, Node>();
      const getVec = (label: string): Node => {
        let w = vecs.get(label);
        if (!w) {
          const thm = theorems.get(label);
          if (!thm) throw new Error(`candidate ${label} has no theorem record`);
          w = model.thmVec(tape, thm.state);
          vecs.set(label, w);
        }
        return w;
      };
      const losses: Node[] = [];
      for (const rec of batch) {
        const remap = redrawRemap(rec.renaming, rec.typecodes, vocab, rng);
        const loss = model.recordLoss(tape, rec, remapState(rec.state, remap), getVec, rng);
        if (loss) losses.push(loss);
      }
      if (losses.length === 0) continue;
      const batchLoss = tape.meanScalars(losses);
      model.store.zeroGrads();
      tape.backward(batchLoss);
      model.store.adamStep(lr, args.l2);
      total += batchLoss.data[0];
      count += 1;
    }
    return total / Math.max(count, 1);
  };

  const evalVal = (): Record<string, number> => {
    model.cacheEnabled = true;
    model.invalidateCache();
    const rng = new Rng(9999);
    const tape = new Tape(false);
    const vecs = new Map<string, Node>();
    const getVec = (label: string): Node => {
      let w = vecs.get(label);
      if (!w) {
        const data = model.thmVecData(label, theorems);
        if (!data) throw new Error(`candidate ${label} has no theorem record`);
        w = { data, grad: new Float64Array(0) };
        vecs.set(label, w);
      }
      return w;
    };
    let lossTotal = 0;
    let lossCount = 0;
    let top1 = 0;
    let top5 = 0;
    let top20 = 0;
    for (const rec of val) {
      const loss = model.recordLoss(tape, rec, rec.state, getVec, rng);
      if (loss) {
        lossTotal += loss.data[0];
        lossCount += 1;
      }
      const logits = model.logits(rec.state, rec.candidates, theorems);
      const rank = targetRank(logits, rec.target_index);
      if (rank < 1) top1 += 1;
      if (rank < 5) top5 += 1;
      if (rank < 20) top20 += 1;
    }
    return {
      valLoss: lossTotal / Math.max(lossCount, 1),
      valTop1: top1 / val.length,
      valTop5: top5 / val.length,
      valTop20: top20 / val.length,
    };
  };

  run(args, model.store, vocab.hash, hyper(args, cfg), trainEpoch, evalVal);
}

function remapGenerative(rec: GenerativeRecord, remap: Map<number, number>): {
  state: State;
  constrained: Record<string, number[]>;
  targets: number[][];
} {
  const constrained: Record<string, number[]> = {};
  for (const [v, toks] of Object.entries(rec.constrained)) {
    constrained[v] = applyRemap(toks, remap);
  }
  return {
    state: remapState(rec.state, remap),
    constrained,
    targets: rec.targets.map((t) => applyRemap(t, remap)),
  };
}

const IDENTITY_REMAP = new Map<number, number>();

function trainGenerative(args: TrainArgs, vocab: Vocab, cfg: ModelConfig): void {
  const train = cap(datasetFile<GenerativeRecord>(args.data, "generative", "train"), args.limit);
  const val = cap(datasetFile<GenerativeRecord>(args.data, "generative", "validation"), args.valLimit);
  const theorems = loadTheorems(args.data);
  const model = new GenerativeModel(vocab, cfg, new Rng(args.seed));
  console.log(`generative: ${train.length} train / ${val.length} val records, ${model.store.totalSize()} parameters`);

  const thmOf = (rec: GenerativeRecord): TheoremRecord => {
    const thm = theorems.get(rec.theorem);
    if (!thm) throw new Error(`record theorem ${rec.theorem} has no theorem record`);
    return thm;
  };

  const trainEpoch = (rng: Rng, lr: number): number => {
    const order = [...train];
    rng.shuffle(order);
    let total = 0;
    let count = 0;
    for (const batch of batches(order, args.batch)) {
      const tape = new Tape(true);
      const losses: Node[] = [];
      for (const rec of batch) {
        const remap = redrawRemap(rec.renaming, rec.typecodes, vocab, rng);
        const { loss } = model.recordLoss(tape, rec, remapGenerative(rec, remap), thmOf(rec), rng);
        losses.push(loss);
      }
      const batchLoss = tape.meanScalars(losses);
      model.store.zeroGrads();
      tape.backward(batchLoss);
      model.store.adamStep(lr, args.l2);
      total += batchLoss.data[0];
      count += 1;
    }
    return total / Math.max(count, 1);
  };

  const evalVal = (): Record<string, number> => {
    const tape = new Tape(false);
    let ce = 0;
    let tokens = 0;
    for (const rec of val) {
      const { loss, tokens: n } = model.recordLoss(
        tape, rec, remapGenerative(rec, IDENTITY_REMAP), thmOf(rec), null);
      ce += loss.data[0];
      tokens += n;
    }
    const perToken = ce / Math.max(tokens, 1);
    return { valLoss: perToken, valPpl: Math.exp(perToken) };
  };

  run(args, model.store, vocab.hash, hyper(args, cfg), trainEpoch, evalVal);
}

function trainPayoff(args: TrainArgs, vocab: Vocab, cfg: ModelConfig): void {
  const train = cap(datasetFile<PayoffRecord>(args.data, "payoff", "train"), args.limit);
  const val = cap(datasetFile<PayoffRecord>(args.data, "payoff", "validation"), args.valLimit);
  const model = new PayoffModel(vocab, cfg, new Rng(args.seed));
  console.log(`payoff: ${train.length} train / ${val.length} val records, ${model.store.totalSize()} parameters`);

  const trainEpoch = (rng: Rng, lr: number): number => {
    const order = [...train];
    rng.shuffle(order);
    let total = 0;
    let count = 0;
    for (const batch of batches(order, args.batch)) {
      const tape = new Tape(true);
      const losses: Node[] = [];
      for (const rec of batch) {
        const remap = redrawRemap(rec.renaming, rec.typecodes, vocab, rng);
        losses.push(model.recordLoss(tape, remapState(rec.state, remap), rec.label));
      }
      const batchLoss = tape.meanScalars(losses);
      model.store.zeroGrads();
      tape.backward(batchLoss);
      model.store.adamStep(lr, args.l2);
      total += batchLoss.data[0];
      count += 1;
    }
    return total / Math.max(count, 1);
  };

  const evalVal = (): Record<string, number> => {
    const tape = new Tape(false);
    let lossTotal = 0;
    let correct = 0;
    for (const rec of val) {
      lossTotal += model.recordLoss(tape, rec.state, rec.label).data[0];
      const p = model.probability(rec.state);
      const pred = p >= 0.5 ? 1 : 0;
      if (pred === rec.label) correct += 1;
    }
    return { valLoss: lossTotal / val.length, valAcc: correct / val.length };
  };

  run(args, model.store, vocab.hash, hyper(args, cfg), trainEpoch, evalVal);
}

function hyper(args: TrainArgs, cfg: ModelConfig): Record<string, number | string> {
  return {
    hidden: cfg.hidden,
    embDim: cfg.embDim,
    layers: cfg.layers,
    sections: cfg.sections,
    lr: args.lr,
    l2: args.l2,
    batch: args.batch,
    seed: args.seed,
  };
}

export function main(argv: string[]): void {
  const args = parse(argv);
  const vocab = loadVocab(args.data);
  const manifest = loadManifest(args.data);
  if (manifest.vocabulary_sha256 !== vocab.hash) {
    throw new Error(
      `dataset manifest hash ${manifest.vocabulary_sha256} does not match vocabulary ${vocab.hash}`,
    );
  }
  mkdirSync(dirname(args.out), { recursive: true });
  const cfg: ModelConfig = { hidden: args.hidden, embDim: args.hidden, layers: 2, sections: 2 };
  if (args.model === "relevance") trainRelevance(args, vocab, cfg);
  else if (args.model === "generative") trainGenerative(args, vocab, cfg);
  else trainPayoff(args, vocab, cfg);
}

main(process.argv.slice(2));
