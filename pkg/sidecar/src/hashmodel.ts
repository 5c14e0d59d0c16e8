// Deterministic stand-in for a pretrained encoder: per-token vectors come
// from a counter-based splitmix64 generator keyed by (seed, token id,
// component), normalized to unit length. [CLS] and document vectors are the
// mean of the token vectors. Identical inputs give identical outputs across
// restarts, which is what the cache population workflow relies on.

const MASK = (1n << 64n) - 1n;
const GOLDEN = 0x9e3779b97f4a7c15n;

function splitmix64(x: bigint): bigint {
  let z = (x + GOLDEN) & MASK;
  z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK;
  z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK;
  return (z ^ (z >> 31n)) & MASK;
}

export function deriveSeed(master: bigint, label: string): bigint {
  let h = master & MASK;
  for (const byte of Buffer.from(label, "utf-8")) {
    h = splitmix64(h ^ BigInt(byte));
  }
  return h;
}

export function hashVector(tokenId: number, seed: bigint, dim: number): Float64Array {
  const key = splitmix64(
    ((seed * 0xd1b54a32d192ed03n) & MASK) ^ ((BigInt(tokenId) * GOLDEN) & MASK)
  );
  const vec = new Float64Array(dim);
  let sq = 0;
  for (let i = 0; i < dim; i++) {
    const state = splitmix64((key + BigInt(i)) & MASK);
    const uniform = Number(state >> 11n) * 2 ** -53; // [0, 1)
    vec[i] = 2 * uniform - 1;
    sq += vec[i] * vec[i];
  }
  const norm = Math.sqrt(sq);
  if (norm === 0) {
    vec[0] = 1;
    return vec;
  }
  for (let i = 0; i < dim; i++) {
    vec[i] /= norm;
  }
  return vec;
}

export interface ModelPreset {
  name: string;
  dim: number;
  maxLen: number;
  lowercase: boolean;
  granularities: string[];
}

export const MODEL_PRESETS: Record<string, ModelPreset> = {
  "base-uncased": {
    name: "base-uncased",
    dim: 768,
    maxLen: 512,
    lowercase: true,
    granularities: ["token", "cls", "document"],
  },
  "base-cased": {
    name: "base-cased",
    dim: 768,
    maxLen: 512,
    lowercase: false,
    granularities: ["token", "cls", "document"],
  },
  longdoc: {
    name: "longdoc",
    dim: 768,
    maxLen: 4096,
    lowercase: true,
    granularities: ["document"],
  },
};

export class HashModel {
  readonly preset: ModelPreset;
  private readonly seed: bigint;
  private readonly table = new Map<number, Float64Array>();

  constructor(preset: ModelPreset) {
    this.preset = preset;
    this.seed = deriveSeed(0n, `model:${preset.name}`);
  }

  private vector(tokenId: number): Float64Array {
    let vec = this.table.get(tokenId);
    if (vec === undefined) {
      vec = hashVector(tokenId, this.seed, this.preset.dim);
      this.table.set(tokenId, vec);
    }
    return vec;
  }

  embedTokens(tokenIds: number[]): Float64Array[] {
    return tokenIds.map((t) => this.vector(t));
  }

  meanVector(tokenIds: number[]): Float64Array {
    const out = new Float64Array(this.preset.dim);
    for (const t of tokenIds) {
      const vec = this.vector(t);
      for (let i = 0; i < out.length; i++) {
        out[i] += vec[i];
      }
    }
    for (let i = 0; i < out.length; i++) {
      out[i] /= tokenIds.length;
    }
    return out;
  }
}
