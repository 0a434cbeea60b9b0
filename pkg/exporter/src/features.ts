/**
 * Deterministic per-unit feature network.
 *
 * Each unit of `unitLen` consecutive frames is spatially average-pooled to
 * a fixed GRID x GRID raster and passed through a fixed-weight 3D
 * convolution (one kernel per output channel, spanning the whole unit)
 * followed by tanh and a spatial/temporal mean — one D-vector per unit.
 * Weights come from a named PRNG seeded only by the model identifier, so
 * the same input and model id always produce identical bytes.
 */

import type { RawVideo } from "./rawvideo.js";

export const GRID = 8;

/** splitmix64-style 32-bit mixer; enough entropy for fixed conv weights. */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function fnv1a(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193);
  }
  return h >>> 0;
}

export interface FeatureModel {
  id: string;
  dim: number;
  unitLen: number;
  /** dim kernels, each unitLen * GRID * GRID, time-major */
  kernels: Float64Array[];
}

export function buildModel(modelId: string, dim: number, unitLen: number): FeatureModel {
  if (dim < 1 || unitLen < 1) {
    throw new RangeError(`invalid model shape: dim=${dim} unitLen=${unitLen}`);
  }
  const rand = mulberry32(fnv1a(`${modelId}:${dim}:${unitLen}`));
  const scale = 1 / Math.sqrt(unitLen * GRID * GRID);
  const kernels: Float64Array[] = [];
  for (let d = 0; d < dim; d++) {
    const k = new Float64Array(unitLen * GRID * GRID);
    for (let i = 0; i < k.length; i++) {
      k[i] = (2 * rand() - 1) * scale;
    }
    kernels.push(k);
  }
  return { id: modelId, dim, unitLen, kernels };
}

/** Average-pool one frame to a GRID x GRID raster of values in [0, 1]. */
export function poolFrame(
  frame: Uint8Array,
  width: number,
  height: number,
): Float64Array {
  const out = new Float64Array(GRID * GRID);
  for (let gy = 0; gy < GRID; gy++) {
    const y0 = Math.floor((gy * height) / GRID);
    const y1 = Math.max(y0 + 1, Math.floor(((gy + 1) * height) / GRID));
    for (let gx = 0; gx < GRID; gx++) {
      const x0 = Math.floor((gx * width) / GRID);
      const x1 = Math.max(x0 + 1, Math.floor(((gx + 1) * width) / GRID));
      let sum = 0;
      for (let y = y0; y < y1; y++) {
        for (let x = x0; x < x1; x++) {
          sum += frame[y * width + x];
        }
      }
      out[gy * GRID + gx] = sum / ((y1 - y0) * (x1 - x0) * 255);
    }
  }
  return out;
}

/** One feature row per unit; the last (possibly short) unit repeats its
 * final frame so every kernel sees a full temporal extent. */
export function extractFeatures(video: RawVideo, model: FeatureModel): Float32Array {
  const n = video.frames.length;
  const numUnits = Math.ceil(n / model.unitLen);
  const pooled = video.frames.map((f) => poolFrame(f, video.width, video.height));
  const out = new Float32Array(numUnits * model.dim);
  for (let u = 0; u < numUnits; u++) {
    for (let d = 0; d < model.dim; d++) {
      const kernel = model.kernels[d];
      let acc = 0;
      for (let t = 0; t < model.unitLen; t++) {
        const frame = pooled[Math.min(u * model.unitLen + t, n - 1)];
        const base = t * GRID * GRID;
        for (let i = 0; i < frame.length; i++) {
          acc += kernel[base + i] * frame[i];
        }
      }
      out[u * model.dim + d] = Math.tanh(acc);
    }
  }
  return out;
}
