/**
 * Guidance service: newline-delimited JSON over TCP.
 *
 * Requests are {"id": ..., "method": ..., "payload": {...}}; every request
 * gets exactly one response, either {"id", "result"} or {"id", "error"}.
 * Unparseable lines get an error response with a null id.  Methods:
 *
 *   hello      {"vocab_hash"}          -> {"ok": true}
 *   relevance  {"state", "theorems"}   -> {"scores": [...]}
 *   generate   {"state", "theorem", "constrained", "unconstrained",
 *               "renaming", "position", "limit", "max_tokens"}
 *                                      -> {"candidates": [{"trees","prob"}]}
 *   payoff     {"state"}               -> {"score": p}
 *
 * The server refuses to start if any checkpoint was trained against a
 * different vocabulary than the one on disk.
 */

import { createServer, Server, Socket } from "node:net";
import { readFileSync } from "node:fs";
import { loadTheorems, State, TheoremRecord } from "./data.js";
import { loadCheckpoint } from "./checkpoint.js";
import { Rng } from "./rng.js";
import { GenerativeModel, beamGenerate } from "./generative.js";
import { ModelConfig, RelevanceModel } from "./relevance.js";
import { PayoffModel } from "./payoff.js";
import { Vocab, loadVocab } from "./vocab.js";

export interface ServerOptions {
  dataDir: string;
  /** Checkpoint base paths (no extension), e.g. models/relevance. */
  relevance: string;
  generative: string;
  payoff: string;
  host?: string;
  port?: number;
}

export interface RunningServer {
  port: number;
  close(): Promise<void>;
}

interface Request {
  id: unknown;
  method: string;
  payload: Record<string, unknown>;
}

export class GuidanceService {
  readonly vocab: Vocab;
  readonly theorems: Map<string, TheoremRecord>;
  readonly relevance: RelevanceModel;
  readonly generative: GenerativeModel;
  readonly payoff: PayoffModel;

  constructor(opts: ServerOptions) {
    this.vocab = loadVocab(opts.dataDir);
    this.theorems = loadTheorems(opts.dataDir);
    const load = <M extends { store: import("./nn.js").ParamStore }>(
        kind: string, base: string, make: (cfg: ModelConfig) => M): M => {
      // read hyperparameters first so the model is built at the right size
      const probe = JSON.parse(readFileSync(`${base}.json`, "utf-8"));
      const cfg: ModelConfig = {
        hidden: Number(probe.hyperparams.hidden),
        embDim: Number(probe.hyperparams.embDim),
        layers: Number(probe.hyperparams.layers),
        sections: Number(probe.hyperparams.sections),
      };
      const model = make(cfg);
      const manifest = loadCheckpoint(base, model.store);
      if (manifest.model !== kind) {
        throw new Error(`${base} is a ${manifest.model} checkpoint, expected ${kind}`);
      }
      if (manifest.vocabHash !== this.vocab.hash) {
        throw new Error(
          `${kind} checkpoint was trained against vocabulary ${manifest.vocabHash}, ` +
          `but the dataset vocabulary is ${this.vocab.hash}`,
        );
      }
      return model;
    };
    this.relevance = load("relevance", opts.relevance,
      (cfg) => new RelevanceModel(this.vocab, cfg, new Rng(0)));
    this.generative = load("generative", opts.generative,
      (cfg) => new GenerativeModel(this.vocab, cfg, new Rng(0)));
    this.payoff = load("payoff", opts.payoff,
      (cfg) => new PayoffModel(this.vocab, cfg, new Rng(0)));
  }

  handle(req: Request): unknown {
    switch (req.method) {
      case "hello": {
        const hash = req.payload.vocab_hash;
        if (hash !== this.vocab.hash) {
          throw new Error(
            `vocabulary hash mismatch: client has ${String(hash)}, server has ${this.vocab.hash}`,
          );
        }
        return { ok: true };
      }
      case "relevance": {
        const state = this.checkState(req.payload.state);
        const labels = req.payload.theorems;
        if (!Array.isArray(labels) || labels.some((l) => typeof l !== "string")) {
          throw new Error("relevance needs a list of theorem labels");
        }
        const scores = this.relevance.probabilities(state, labels as string[], this.theorems);
        return { scores: Array.from(scores) };
      }
      case "generate": {
        const p = req.payload;
        const state = this.checkState(p.state);
        if (typeof p.theorem !== "string") throw new Error("generate needs a theorem label");
        if (typeof p.limit !== "number" || typeof p.max_tokens !== "number") {
          throw new Error("generate needs numeric limit and max_tokens");
        }
        const unconstrained = p.unconstrained;
        if (!Array.isArray(unconstrained)) throw new Error("generate needs unconstrained variables");
        const thm = this.theorems.get(p.theorem);
        const candidates = beamGenerate(this.generative, {
          state,
          theorem: p.theorem,
          constrained: (p.constrained ?? {}) as Record<string, number[]>,
          unconstrained: unconstrained as Array<{ var: string; typecode: string }>,
          renaming: (p.renaming ?? {}) as Record<string, number>,
          position: typeof p.position === "number" ? p.position : null,
          limit: p.limit,
          maxTokens: p.max_tokens,
        }, thm);
        return { candidates };
      }
      case "payoff": {
        const state = this.checkState(req.payload.state);
        return { score: this.payoff.probability(state) };
      }
      default:
        throw new Error(`unknown method ${JSON.stringify(req.method)}`);
    }
  }

  private checkState(raw: unknown): State {
    const s = raw as State;
    if (!s || !Array.isArray(s.tokens) || !Array.isArray(s.features) ||
        s.tokens.length !== s.features.length || s.tokens.length === 0) {
      throw new Error("state needs equal-length, non-empty tokens and features");
    }
    for (const t of s.tokens) {
      if (!Number.isInteger(t) || t < 0 || t >= this.vocab.size) {
        throw new Error(`token id ${t} outside vocabulary`);
      }
    }
    for (const f of s.features) {
      if (!Array.isArray(f) || f.length !== 4) {
        throw new Error("each feature row needs four entries");
      }
    }
    return s;
  }
}

function respond(sock: Socket, obj: unknown): void {
  sock.write(JSON.stringify(obj) + "\n");
}

export function startServer(opts: ServerOptions): Promise<RunningServer> {
  const service = new GuidanceService(opts);
  const server: Server = createServer((sock) => {
    let buf = "";
    sock.on("data", (chunk) => {
      buf += chunk.toString("utf-8");
      for (;;) {
        const nl = buf.indexOf("\n");
        if (nl < 0) break;
        const line = buf.slice(0, nl);
        buf = buf.slice(nl + 1);
        if (line.trim().length === 0) continue;
        let req: Request | null = null;
        try {
          const parsed = JSON.parse(line);
          if (typeof parsed !== "object" || parsed === null ||
              typeof parsed.method !== "string") {
            throw new Error("request needs an id and a method");
          }
          req = {
            id: parsed.id,
            method: parsed.method,
            payload: (parsed.payload ?? {}) as Record<string, unknown>,
          };
        } catch (e) {
          respond(sock, { id: null, error: `bad request: ${(e as Error).message}` });
          continue;
        }
        try {
          respond(sock, { id: req.id, result: service.handle(req) });
        } catch (e) {
          respond(sock, { id: req.id, error: (e as Error).message });
        }
      }
    });
    sock.on("error", () => sock.destroy());
  });
  return new Promise((resolve, reject) => {
    server.once("error", reject);
    server.listen(opts.port ?? 0, opts.host ?? "127.0.0.1", () => {
      const addr = server.address();
      const port = typeof addr === "object" && addr ? addr.port : 0;
      resolve({
        port,
        close: () =>
          new Promise<void>((res, rej) =>
            server.close((err) => (err ? rej(err) : res()))),
      });
    });
  });
}
