/**
 * Plugin registry for segmentation models and place-descriptor extractors.
 *
 * Identifiers are free strings so a new network is just another
 * registration; nothing downstream changes. The bundled plugins are
 * deliberately tiny deterministic heuristics: they exist so the export
 * pipeline (tensors, manifest, validation) can run and be tested without
 * shipping real network weights. Swap in real inference by registering
 * an object with the same shape.
 */

import type { DecodedImage } from './image.js';

export type LogitTensor = {
  height: number;
  width: number;
  numClasses: number;
  /** C-order (H, W, N_c), pre-softmax */
  data: Float32Array;
};

export type SegModel = {
  id: string;
  classNames: string[];
  roadClass: string;
  infer(image: DecodedImage): LogitTensor;
};

export type FeatureExtractor = {
  id: string;
  extract(image: DecodedImage): Float32Array;
};

const models = new Map<string, SegModel>();
const extractors = new Map<string, FeatureExtractor>();

export function registerModel(model: SegModel): void {
  models.set(model.id, model);
}

export function registerExtractor(extractor: FeatureExtractor): void {
  extractors.set(extractor.id, extractor);
}

export function resolveModel(id: string): SegModel {
  const model = models.get(id);
  if (!model) {
    throw new Error(`unknown model '${id}'; registered: ${[...models.keys()].join(', ')}`);
  }
  return model;
}

export function resolveExtractor(id: string): FeatureExtractor {
  const extractor = extractors.get(id);
  if (!extractor) {
    throw new Error(
      `unknown vpr layer '${id}'; registered: ${[...extractors.keys()].join(', ')}`,
    );
  }
  return extractor;
}

export function listModels(): string[] {
  return [...models.keys()].sort();
}

export function listExtractors(): string[] {
  return [...extractors.keys()].sort();
}

// ---------------------------------------------------------------- bundled

/**
 * Three-class scorer (road, structure, sky) from pixel color and image
 * row. Road likes dark low-saturation pixels near the bottom, sky likes
 * blue near the top. Scores are raw margins, never softmaxed.
 */
const luma3: SegModel = {
  id: 'luma3',
  classNames: ['road', 'structure', 'sky'],
  roadClass: 'road',
  infer(image) {
    const { width: w, height: h, pixels } = image;
    const data = new Float32Array(h * w * 3);
    for (let i = 0; i < h; i++) {
      const rowFrac = h > 1 ? i / (h - 1) : 0.5;
      for (let j = 0; j < w; j++) {
        const p = (i * w + j) * 4;
        const r = pixels[p] / 255;
        const g = pixels[p + 1] / 255;
        const b = pixels[p + 2] / 255;
        const sat = Math.max(r, g, b) - Math.min(r, g, b);
        const out = (i * w + j) * 3;
        data[out] = 4 * (1.5 * rowFrac - 0.5 - sat);
        data[out + 1] = 4 * (0.4 + 0.5 * sat - Math.abs(rowFrac - 0.5));
        data[out + 2] = 4 * (1.2 * (1 - rowFrac) - 0.6 + (b - (r + g) / 2));
      }
    }
    return { height: h, width: w, numClasses: 3, data };
  },
};

/** Global 4x4x4 RGB histogram, normalized by pixel count. 64 dims. */
const hist64: FeatureExtractor = {
  id: 'hist64',
  extract(image) {
    const counts = new Float32Array(64);
    const { width, height, pixels } = image;
    const total = width * height;
    for (let p = 0; p < total; p++) {
      const r = pixels[p * 4] >> 6;
      const g = pixels[p * 4 + 1] >> 6;
      const b = pixels[p * 4 + 2] >> 6;
      counts[r * 16 + g * 4 + b] += 1;
    }
    for (let i = 0; i < 64; i++) counts[i] /= total;
    return counts;
  },
};

/** Mean RGB over a 4x4 spatial grid, flattened. 48 dims. */
const pool48: FeatureExtractor = {
  id: 'pool48',
  extract(image) {
    const { width, height, pixels } = image;
    const sums = new Float64Array(48);
    const hits = new Float64Array(16);
    for (let i = 0; i < height; i++) {
      const gi = Math.min(3, Math.floor((i * 4) / height));
      for (let j = 0; j < width; j++) {
        const gj = Math.min(3, Math.floor((j * 4) / width));
        const cell = gi * 4 + gj;
        const p = (i * width + j) * 4;
        sums[cell * 3] += pixels[p] / 255;
        sums[cell * 3 + 1] += pixels[p + 1] / 255;
        sums[cell * 3 + 2] += pixels[p + 2] / 255;
        hits[cell] += 1;
      }
    }
    const out = new Float32Array(48);
    for (let cell = 0; cell < 16; cell++) {
      const n = hits[cell] || 1;
      out[cell * 3] = sums[cell * 3] / n;
      out[cell * 3 + 1] = sums[cell * 3 + 1] / n;
      out[cell * 3 + 2] = sums[cell * 3 + 2] / n;
    }
    return out;
  },
};

registerModel(luma3);
registerExtractor(hist64);
registerExtractor(pool48);
