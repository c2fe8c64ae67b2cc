import fs from 'fs';
import path from 'path';
import { readPng, type DecodedImage } from './image.js';
import { encodeNpy, decodeNpy, type NpyArray } from './npy.js';
import {
  assignSplit,
  renderManifest,
  type ManifestFragment,
  type SplitRule,
} from './manifest.js';
import { resolveExtractor, resolveModel, type FeatureExtractor, type SegModel } from './registry.js';

export type ExportJob = {
  imagesDir: string;
  modelId: string;
  vprLayerId: string;
  outDir: string;
  rules: SplitRule[];
  /** warning sink, defaults to console.warn */
  warn?: (message: string) => void;
};

export type ExportResult = {
  written: ManifestFragment[];
  skipped: { file: string; reason: string }[];
  manifestPath: string;
  /** true when at least one image had to be skipped */
  partial: boolean;
};

/**
 * Write through a temp file in the same directory, then rename. A crash
 * mid-write leaves no half-written tensor behind under the final name.
 */
export function atomicWrite(filePath: string, payload: Buffer | string): void {
  fs.mkdirSync(path.dirname(filePath), { recursive: true });
  const tmp = `${filePath}.tmp-${process.pid}`;
  try {
    fs.writeFileSync(tmp, payload);
    fs.renameSync(tmp, filePath);
  } catch (err) {
    fs.rmSync(tmp, { force: true });
    throw err;
  }
}

/** Raw model output as a (H, W, N_c) float32 tensor. Never softmaxed. */
export function logitsArray(model: SegModel, image: DecodedImage): NpyArray {
  const out = model.infer(image);
  return {
    dtype: 'float32',
    shape: [out.height, out.width, out.numClasses],
    data: out.data,
  };
}

/** Descriptor flattened to 1-D, whatever spatial form the layer had. */
export function descriptorArray(extractor: FeatureExtractor, image: DecodedImage): NpyArray {
  const values = extractor.extract(image);
  return { dtype: 'float32', shape: [values.length], data: values };
}

export function listImages(imagesDir: string): string[] {
  const entries = fs.readdirSync(imagesDir);
  return entries.filter(name => name.toLowerCase().endsWith('.png')).sort();
}

/**
 * Re-read every written tensor and hold it to the loader rules the
 * engine applies: float32 logits of rank 3 with at least two classes,
 * float32 rank-1 descriptors, everything finite, descriptor length
 * constant across the job. Runs before the manifest is written so a bad
 * tensor can never be published.
 */
export function validateOutputs(
  outDir: string,
  fragments: ManifestFragment[],
  numClasses: number,
): void {
  let dims: number | null = null;
  for (const frag of fragments) {
    const logits = decodeNpy(fs.readFileSync(path.join(outDir, frag.logitsRel)));
    if (logits.dtype !== 'float32' || logits.shape.length !== 3) {
      throw new Error(`${frag.logitsRel}: want rank-3 float32, got ${logits.dtype} rank ${logits.shape.length}`);
    }
    const [h, w, c] = logits.shape;
    if (h < 1 || w < 1 || c < 2) throw new Error(`${frag.logitsRel}: bad shape (${logits.shape})`);
    if (c !== numClasses) {
      throw new Error(`${frag.logitsRel}: ${c} classes, model has ${numClasses}`);
    }
    if (!everyFinite(logits.data)) throw new Error(`${frag.logitsRel}: non-finite values`);

    const desc = decodeNpy(fs.readFileSync(path.join(outDir, frag.descriptorRel)));
    if (desc.dtype !== 'float32' || desc.shape.length !== 1 || desc.shape[0] < 1) {
      throw new Error(`${frag.descriptorRel}: want non-empty rank-1 float32`);
    }
    if (!everyFinite(desc.data)) throw new Error(`${frag.descriptorRel}: non-finite values`);
    if (dims === null) dims = desc.shape[0];
    else if (desc.shape[0] !== dims) {
      throw new Error(
        `descriptor dims drift: ${frag.descriptorRel} has ${desc.shape[0]}, job fixed ${dims}`,
      );
    }
  }
}

function everyFinite(data: Float32Array | Uint8Array): boolean {
  for (let i = 0; i < data.length; i++) {
    if (!Number.isFinite(data[i])) return false;
  }
  return true;
}

export function runExport(job: ExportJob): ExportResult {
  const warn = job.warn ?? ((message: string) => console.warn(message));
  const model = resolveModel(job.modelId);
  const extractor = resolveExtractor(job.vprLayerId);

  const files = listImages(job.imagesDir);
  if (files.length === 0) {
    throw new Error(`no PNG images in ${job.imagesDir}`);
  }

  const fragments: ManifestFragment[] = [];
  const skipped: ExportResult['skipped'] = [];
  let dims: number | null = null;

  for (const file of files) {
    let image: DecodedImage;
    try {
      image = readPng(path.join(job.imagesDir, file));
    } catch (err) {
      const reason = err instanceof Error ? err.message : String(err);
      warn(`skipping ${file}: ${reason}`);
      skipped.push({ file, reason });
      continue;
    }

    const imageId = file.replace(/\.png$/i, '');
    const descriptor = descriptorArray(extractor, image);
    if (dims === null) dims = descriptor.shape[0];
    else if (descriptor.shape[0] !== dims) {
      throw new Error(
        `descriptor dims drift on ${file}: got ${descriptor.shape[0]}, job fixed ${dims}`,
      );
    }

    const logitsRel = path.join('logits', `${imageId}.npy`);
    const descriptorRel = path.join('descriptors', `${imageId}.npy`);
    atomicWrite(path.join(job.outDir, logitsRel), encodeNpy(logitsArray(model, image)));
    atomicWrite(path.join(job.outDir, descriptorRel), encodeNpy(descriptor));

    const { condition, split } = assignSplit(file, job.rules);
    fragments.push({ imageId, condition, split, logitsRel, descriptorRel });
  }

  if (fragments.length === 0) {
    throw new Error(`no image in ${job.imagesDir} could be decoded`);
  }

  validateOutputs(job.outDir, fragments, model.classNames.length);

  const manifestPath = path.join(job.outDir, 'manifest.txt');
  const schema = { classNames: model.classNames, roadClass: model.roadClass };
  atomicWrite(manifestPath, renderManifest(schema, fragments));

  return { written: fragments, skipped, manifestPath, partial: skipped.length > 0 };
}
