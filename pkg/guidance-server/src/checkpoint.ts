/**
 * Checkpoints are a JSON manifest plus a flat little-endian float32 blob.
 * Parameters load back into float64; the storage rounding is far below the
 * tolerances that matter anywhere in serving.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { ParamStore } from "./nn.js";

export interface EpochMetrics {
  epoch: number;
  lr: number;
  trainLoss: number;
  valLoss: number;
  [extra: string]: number;
}

export interface CheckpointManifest {
  format: "guidance-ckpt-v1";
  model: string;
  vocabHash: string;
  hyperparams: Record<string, number | string>;
  epochs: EpochMetrics[];
  bestEpoch: number;
  params: Array<{ name: string; rows: number; cols: number; offset: number }>;
}

export function saveCheckpoint(base: string, model: string, vocabHash: string,
                               hyperparams: Record<string, number | string>,
                               epochs: EpochMetrics[], bestEpoch: number,
                               store: ParamStore): void {
  const entries: CheckpointManifest["params"] = [];
  let offset = 0;
  for (const p of store.params.values()) {
    entries.push({ name: p.name, rows: p.rows, cols: p.cols, offset });
    offset += p.size;
  }
  const blob = new Float32Array(offset);
  for (const [i, p] of [...store.params.values()].entries()) {
    blob.set(p.data, entries[i].offset);
  }
  const manifest: CheckpointManifest = {
    format: "guidance-ckpt-v1",
    model,
    vocabHash,
    hyperparams,
    epochs,
    bestEpoch,
    params: entries,
  };
  writeFileSync(`${base}.json`, JSON.stringify(manifest, null, 1) + "\n");
  writeFileSync(`${base}.bin`, Buffer.from(blob.buffer, 0, blob.byteLength));
}

export function loadCheckpoint(base: string, store: ParamStore): CheckpointManifest {
  const manifest = JSON.parse(readFileSync(`${base}.json`, "utf-8")) as CheckpointManifest;
  if (manifest.format !== "guidance-ckpt-v1") {
    throw new Error(`unknown checkpoint format in ${base}.json`);
  }
  const buf = readFileSync(`${base}.bin`);
  const blob = new Float32Array(buf.buffer, buf.byteOffset, buf.byteLength / 4);
  for (const e of manifest.params) {
    const p = store.params.get(e.name);
    if (!p) throw new Error(`checkpoint param ${e.name} not in model`);
    if (p.rows !== e.rows || p.cols !== e.cols) {
      throw new Error(`checkpoint param ${e.name} shape mismatch`);
    }
    p.data.set(blob.subarray(e.offset, e.offset + p.size));
  }
  const names = new Set(manifest.params.map((e) => e.name));
  for (const name of store.params.keys()) {
    if (!names.has(name)) throw new Error(`model param ${name} missing from checkpoint`);
  }
  return manifest;
}
