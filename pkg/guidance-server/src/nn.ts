/**
 * Minimal reverse-mode autodiff over Float64Array vectors.
 *
 * Everything is double precision end to end so analytic gradients can be
 * certified against central finite differences at tight tolerances.  The
 * networks here are small enough that plain JS loops beat the overhead of
 * a tensor library, and the training losses and recurrent cells are
 * nonstandard enough that we would be writing custom kernels anyway.
 */

import { Rng } from "./rng.js";

export interface Node {
  data: Float64Array;
  grad: Float64Array;
}

const NO_GRAD = new Float64Array(0);

export class Param {
  readonly name: string;
  readonly rows: number;
  readonly cols: number;
  readonly data: Float64Array;
  readonly grad: Float64Array;
  /** Adam first/second moment state. */
  readonly m: Float64Array;
  readonly v: Float64Array;
  /** Whether weight decay applies (biases are exempt). */
  readonly regularize: boolean;

  constructor(name: string, rows: number, cols: number, regularize: boolean) {
    this.name = name;
    this.rows = rows;
    this.cols = cols;
    this.data = new Float64Array(rows * cols);
    this.grad = new Float64Array(rows * cols);
    this.m = new Float64Array(rows * cols);
    this.v = new Float64Array(rows * cols);
    this.regularize = regularize;
  }

  get size(): number {
    return this.rows * this.cols;
  }
}

export type Init = "zero" | "xavier";

export class ParamStore {
  readonly params = new Map<string, Param>();
  private rng: Rng;
  private step = 0;

  constructor(rng: Rng) {
    this.rng = rng;
  }

  /** Get or create a parameter; init runs only on creation. */
  param(name: string, rows: number, cols: number, init: Init,
        regularize = true): Param {
    let p = this.params.get(name);
    if (p) {
      if (p.rows !== rows || p.cols !== cols) {
        throw new Error(`param ${name} shape conflict`);
      }
      return p;
    }
    p = new Param(name, rows, cols, regularize);
    if (init === "xavier") {
      const scale = Math.sqrt(6 / (rows + cols));
      for (let i = 0; i < p.data.length; i++) {
        p.data[i] = (this.rng.next() * 2 - 1) * scale;
      }
    }
    this.params.set(name, p);
    return p;
  }

  zeroGrads(): void {
    for (const p of this.params.values()) p.grad.fill(0);
  }

  /** One Adam update; weight decay is added to the gradient here. */
  adamStep(lr: number, l2: number, beta1 = 0.9, beta2 = 0.999,
           eps = 1e-8): void {
    this.step += 1;
    const c1 = 1 - Math.pow(beta1, this.step);
    const c2 = 1 - Math.pow(beta2, this.step);
    for (const p of this.params.values()) {
      const { data, grad, m, v } = p;
      const decay = p.regularize ? l2 : 0;
      for (let i = 0; i < data.length; i++) {
        const g = grad[i] + decay * data[i];
        m[i] = beta1 * m[i] + (1 - beta1) * g;
        v[i] = beta2 * v[i] + (1 - beta2) * g * g;
        data[i] -= (lr * (m[i] / c1)) / (Math.sqrt(v[i] / c2) + eps);
      }
    }
  }

  totalSize(): number {
    let n = 0;
    for (const p of this.params.values()) n += p.size;
    return n;
  }
}

const LEAKY_SLOPE = 0.01;

function softplus(t: number): number {
  return Math.max(t, 0) + Math.log1p(Math.exp(-Math.abs(t)));
}

export function sigmoidScalar(x: number): number {
  return x >= 0 ? 1 / (1 + Math.exp(-x)) : Math.exp(x) / (1 + Math.exp(x));
}

/**
 * One forward pass.  In training mode every op records a backward closure;
 * `backward(loss)` replays them in reverse.  In inference mode the closures
 * and gradient buffers are skipped entirely.
 */
export class Tape {
  private backs: Array<() => void> = [];
  readonly training: boolean;

  constructor(training = true) {
    this.training = training;
  }

  private alloc(n: number): Node {
    return {
      data: new Float64Array(n),
      grad: this.training ? new Float64Array(n) : NO_GRAD,
    };
  }

  leaf(values: ArrayLike<number>): Node {
    const out = this.alloc(values.length);
    out.data.set(values);
    return out;
  }

  zeros(n: number): Node {
    return this.alloc(n);
  }

  backward(loss: Node): void {
    if (!this.training) throw new Error("backward on an inference tape");
    if (loss.data.length !== 1) throw new Error("loss must be scalar");
    loss.grad[0] = 1;
    for (let i = this.backs.length - 1; i >= 0; i--) this.backs[i]();
  }

  /** y = W x  (W is rows x cols, x has length cols). */
  mv(W: Param, x: Node): Node {
    const { rows, cols } = W;
    if (x.data.length !== cols) throw new Error(`mv dim ${x.data.length} != ${cols}`);
    const out = this.alloc(rows);
    const w = W.data;
    const xd = x.data;
    const yd = out.data;
    for (let i = 0; i < rows; i++) {
      let s = 0;
      const off = i * cols;
      for (let j = 0; j < cols; j++) s += w[off + j] * xd[j];
      yd[i] = s;
    }
    if (this.training) {
      this.backs.push(() => {
        const gy = out.grad;
        const gw = W.grad;
        const gx = x.grad;
        for (let i = 0; i < rows; i++) {
          const g = gy[i];
          if (g === 0) continue;
          const off = i * cols;
          for (let j = 0; j < cols; j++) {
            gw[off + j] += g * xd[j];
            gx[j] += g * w[off + j];
          }
        }
      });
    }
    return out;
  }

  /** y = W^T x  (x has length rows, y has length cols). */
  mvT(W: Param, x: Node): Node {
    const { rows, cols } = W;
    if (x.data.length !== rows) throw new Error(`mvT dim ${x.data.length} != ${rows}`);
    const out = this.alloc(cols);
    const w = W.data;
    const xd = x.data;
    const yd = out.data;
    for (let i = 0; i < rows; i++) {
      const g = xd[i];
      if (g === 0) continue;
      const off = i * cols;
      for (let j = 0; j < cols; j++) yd[j] += g * w[off + j];
    }
    if (this.training) {
      this.backs.push(() => {
        const gy = out.grad;
        const gw = W.grad;
        const gx = x.grad;
        for (let i = 0; i < rows; i++) {
          const off = i * cols;
          let s = 0;
          for (let j = 0; j < cols; j++) {
            gw[off + j] += xd[i] * gy[j];
            s += w[off + j] * gy[j];
          }
          gx[i] += s;
        }
      });
    }
    return out;
  }

  /** Row `id` of an embedding table (rows x cols). */
  embed(E: Param, id: number): Node {
    const { cols } = E;
    const out = this.alloc(cols);
    out.data.set(E.data.subarray(id * cols, (id + 1) * cols));
    if (this.training) {
      this.backs.push(() => {
        const ge = E.grad;
        const off = id * cols;
        for (let j = 0; j < cols; j++) ge[off + j] += out.grad[j];
      });
    }
    return out;
  }

  add(...xs: Node[]): Node {
    const n = xs[0].data.length;
    const out = this.alloc(n);
    for (const x of xs) {
      if (x.data.length !== n) throw new Error("add dim mismatch");
      for (let i = 0; i < n; i++) out.data[i] += x.data[i];
    }
    if (this.training) {
      this.backs.push(() => {
        for (const x of xs) {
          for (let i = 0; i < n; i++) x.grad[i] += out.grad[i];
        }
      });
    }
    return out;
  }

  /** x + b where b is a bias parameter (rows x 1). */
  addBias(x: Node, b: Param): Node {
    const n = x.data.length;
    if (b.size !== n) throw new Error("bias dim mismatch");
    const out = this.alloc(n);
    for (let i = 0; i < n; i++) out.data[i] = x.data[i] + b.data[i];
    if (this.training) {
      this.backs.push(() => {
        for (let i = 0; i < n; i++) {
          x.grad[i] += out.grad[i];
          b.grad[i] += out.grad[i];
        }
      });
    }
    return out;
  }

  mul(a: Node, b: Node): Node {
    const n = a.data.length;
    if (b.data.length !== n) throw new Error("mul dim mismatch");
    const out = this.alloc(n);
    for (let i = 0; i < n; i++) out.data[i] = a.data[i] * b.data[i];
    if (this.training) {
      this.backs.push(() => {
        for (let i = 0; i < n; i++) {
          a.grad[i] += out.grad[i] * b.data[i];
          b.grad[i] += out.grad[i] * a.data[i];
        }
      });
    }
    return out;
  }

  sigmoid(x: Node): Node {
    const n = x.data.length;
    const out = this.alloc(n);
    for (let i = 0; i < n; i++) out.data[i] = sigmoidScalar(x.data[i]);
    if (this.training) {
      this.backs.push(() => {
        for (let i = 0; i < n; i++) {
          const y = out.data[i];
          x.grad[i] += out.grad[i] * y * (1 - y);
        }
      });
    }
    return out;
  }

  tanh(x: Node): Node {
    const n = x.data.length;
    const out = this.alloc(n);
    for (let i = 0; i < n; i++) out.data[i] = Math.tanh(x.data[i]);
    if (this.training) {
      this.backs.push(() => {
        for (let i = 0; i < n; i++) {
          const y = out.data[i];
          x.grad[i] += out.grad[i] * (1 - y * y);
        }
      });
    }
    return out;
  }

  leaky(x: Node): Node {
    const n = x.data.length;
    const out = this.alloc(n);
    for (let i = 0; i < n; i++) {
      const v = x.data[i];
      out.data[i] = v > 0 ? v : LEAKY_SLOPE * v;
    }
    if (this.training) {
      this.backs.push(() => {
        for (let i = 0; i < n; i++) {
          x.grad[i] += out.grad[i] * (x.data[i] > 0 ? 1 : LEAKY_SLOPE);
        }
      });
    }
    return out;
  }

  concat(...xs: Node[]): Node {
    let n = 0;
    for (const x of xs) n += x.data.length;
    const out = this.alloc(n);
    let off = 0;
    for (const x of xs) {
      out.data.set(x.data, off);
      off += x.data.length;
    }
    if (this.training) {
      this.backs.push(() => {
        let o = 0;
        for (const x of xs) {
          for (let i = 0; i < x.data.length; i++) x.grad[i] += out.grad[o + i];
          o += x.data.length;
        }
      });
    }
    return out;
  }

  dot(a: Node, b: Node): Node {
    const n = a.data.length;
    if (b.data.length !== n) throw new Error("dot dim mismatch");
    const out = this.alloc(1);
    let s = 0;
    for (let i = 0; i < n; i++) s += a.data[i] * b.data[i];
    out.data[0] = s;
    if (this.training) {
      this.backs.push(() => {
        const g = out.grad[0];
        if (g === 0) return;
        for (let i = 0; i < n; i++) {
          a.grad[i] += g * b.data[i];
          b.grad[i] += g * a.data[i];
        }
      });
    }
    return out;
  }

  /** GRU state blend: z*h + (1-z)*n. */
  gruBlend(z: Node, h: Node, nn: Node): Node {
    const n = z.data.length;
    const out = this.alloc(n);
    for (let i = 0; i < n; i++) {
      out.data[i] = z.data[i] * h.data[i] + (1 - z.data[i]) * nn.data[i];
    }
    if (this.training) {
      this.backs.push(() => {
        for (let i = 0; i < n; i++) {
          const g = out.grad[i];
          z.grad[i] += g * (h.data[i] - nn.data[i]);
          h.grad[i] += g * z.data[i];
          nn.grad[i] += g * (1 - z.data[i]);
        }
      });
    }
    return out;
  }

  softmax(x: Node): Node {
    const n = x.data.length;
    const out = this.alloc(n);
    let mx = -Infinity;
    for (let i = 0; i < n; i++) mx = Math.max(mx, x.data[i]);
    let z = 0;
    for (let i = 0; i < n; i++) {
      out.data[i] = Math.exp(x.data[i] - mx);
      z += out.data[i];
    }
    for (let i = 0; i < n; i++) out.data[i] /= z;
    if (this.training) {
      this.backs.push(() => {
        let inner = 0;
        for (let i = 0; i < n; i++) inner += out.grad[i] * out.data[i];
        for (let i = 0; i < n; i++) {
          x.grad[i] += out.data[i] * (out.grad[i] - inner);
        }
      });
    }
    return out;
  }

  /** scores[s] = q . keys[s] (all keys same length as q). */
  attnScores(q: Node, keys: Node[]): Node {
    const n = keys.length;
    const d = q.data.length;
    const out = this.alloc(n);
    for (let s = 0; s < n; s++) {
      const k = keys[s].data;
      let acc = 0;
      for (let i = 0; i < d; i++) acc += q.data[i] * k[i];
      out.data[s] = acc;
    }
    if (this.training) {
      this.backs.push(() => {
        for (let s = 0; s < n; s++) {
          const g = out.grad[s];
          if (g === 0) continue;
          const k = keys[s];
          for (let i = 0; i < d; i++) {
            q.grad[i] += g * k.data[i];
            k.grad[i] += g * q.data[i];
          }
        }
      });
    }
    return out;
  }

  /** sum_s w[s] * vs[s]. */
  weightedSum(vs: Node[], w: Node): Node {
    const n = vs.length;
    if (w.data.length !== n) throw new Error("weightedSum dim mismatch");
    const d = vs[0].data.length;
    const out = this.alloc(d);
    for (let s = 0; s < n; s++) {
      const c = w.data[s];
      const v = vs[s].data;
      for (let i = 0; i < d; i++) out.data[i] += c * v[i];
    }
    if (this.training) {
      this.backs.push(() => {
        for (let s = 0; s < n; s++) {
          const v = vs[s];
          let gw = 0;
          for (let i = 0; i < d; i++) {
            gw += out.grad[i] * v.data[i];
            v.grad[i] += out.grad[i] * w.data[s];
          }
          w.grad[s] += gw;
        }
      });
    }
    return out;
  }

  /** Cross entropy -log softmax(logits)[target], numerically stable. */
  ceFromLogits(logits: Node, target: number): Node {
    const n = logits.data.length;
    const out = this.alloc(1);
    let mx = -Infinity;
    for (let i = 0; i < n; i++) mx = Math.max(mx, logits.data[i]);
    let z = 0;
    for (let i = 0; i < n; i++) z += Math.exp(logits.data[i] - mx);
    const lse = mx + Math.log(z);
    out.data[0] = lse - logits.data[target];
    if (this.training) {
      this.backs.push(() => {
        const g = out.grad[0];
        if (g === 0) return;
        for (let i = 0; i < n; i++) {
          const p = Math.exp(logits.data[i] - lse);
          logits.grad[i] += g * (p - (i === target ? 1 : 0));
        }
      });
    }
    return out;
  }

  /**
   * -log sigmoid(sign * x) for scalar x, the negative-sampling loss term
   * (sign +1 for the positive example, -1 for negatives).
   */
  negLogSigmoid(x: Node, sign: 1 | -1): Node {
    if (x.data.length !== 1) throw new Error("negLogSigmoid needs a scalar");
    const out = this.alloc(1);
    out.data[0] = softplus(-sign * x.data[0]);
    if (this.training) {
      this.backs.push(() => {
        // d/dx softplus(-s*x) = -s * sigmoid(-s*x)
        x.grad[0] += out.grad[0] * -sign * sigmoidScalar(-sign * x.data[0]);
      });
    }
    return out;
  }

  /** Mean of scalar nodes. */
  meanScalars(xs: Node[]): Node {
    const out = this.alloc(1);
    let s = 0;
    for (const x of xs) s += x.data[0];
    out.data[0] = s / xs.length;
    if (this.training) {
      this.backs.push(() => {
        const g = out.grad[0] / xs.length;
        for (const x of xs) x.grad[0] += g;
      });
    }
    return out;
  }

  /** Sum of scalar nodes. */
  sumScalars(xs: Node[]): Node {
    const out = this.alloc(1);
    let s = 0;
    for (const x of xs) s += x.data[0];
    out.data[0] = s;
    if (this.training) {
      this.backs.push(() => {
        for (const x of xs) x.grad[0] += out.grad[0];
      });
    }
    return out;
  }
}

/** Weight bundle for one GRU direction/section/layer. */
export interface GruBank {
  Wz: Param; Uz: Param; bz: Param;
  Wr: Param; Ur: Param; br: Param;
  Wn: Param; bn: Param; Un: Param; bhn: Param;
}

export function gruBank(store: ParamStore, prefix: string, inDim: number,
                        hidden: number): GruBank {
  return {
    Wz: store.param(`${prefix}.Wz`, hidden, inDim, "xavier"),
    Uz: store.param(`${prefix}.Uz`, hidden, hidden, "xavier"),
    bz: store.param(`${prefix}.bz`, hidden, 1, "zero", false),
    Wr: store.param(`${prefix}.Wr`, hidden, inDim, "xavier"),
    Ur: store.param(`${prefix}.Ur`, hidden, hidden, "xavier"),
    br: store.param(`${prefix}.br`, hidden, 1, "zero", false),
    Wn: store.param(`${prefix}.Wn`, hidden, inDim, "xavier"),
    bn: store.param(`${prefix}.bn`, hidden, 1, "zero", false),
    Un: store.param(`${prefix}.Un`, hidden, hidden, "xavier"),
    bhn: store.param(`${prefix}.bhn`, hidden, 1, "zero", false),
  };
}

/**
 * One GRU step with biases inside the gates; the reset gate multiplies the
 * already-biased recurrent term, as in h' = z*h + (1-z)*tanh(Wx + b +
 * r*(Uh + b')).
 */
export function gruStep(tape: Tape, g: GruBank, x: Node, h: Node): Node {
  const z = tape.sigmoid(tape.addBias(tape.add(tape.mv(g.Wz, x), tape.mv(g.Uz, h)), g.bz));
  const r = tape.sigmoid(tape.addBias(tape.add(tape.mv(g.Wr, x), tape.mv(g.Ur, h)), g.br));
  const rec = tape.mul(r, tape.addBias(tape.mv(g.Un, h), g.bhn));
  const n = tape.tanh(tape.addBias(tape.add(tape.mv(g.Wn, x), rec), g.bn));
  return tape.gruBlend(z, h, n);
}
