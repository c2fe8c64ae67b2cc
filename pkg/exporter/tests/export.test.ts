import fs from 'fs';
import os from 'os';
import path from 'path';
import { afterEach, describe, expect, it } from 'vitest';
import { atomicWrite, listImages, runExport, validateOutputs } from '../src/export.js';
import { writePng } from '../src/image.js';
import { DEFAULT_RULES } from '../src/manifest.js';
import { decodeNpy, encodeNpy } from '../src/npy.js';
import { registerExtractor } from '../src/registry.js';

const tmp: string[] = [];

function tmpDir(): string {
  const dir = fs.mkdtempSync(path.join(os.tmpdir(), 'export-test-'));
  tmp.push(dir);
  return dir;
}

afterEach(() => {
  while (tmp.length) fs.rmSync(tmp.pop()!, { recursive: true, force: true });
});

/** Deterministic little street-ish scene: sky gradient over a dark base. */
function scenePng(file: string, width: number, height: number, tint: number): void {
  const pixels = new Uint8Array(width * height * 4);
  for (let i = 0; i < height; i++) {
    for (let j = 0; j < width; j++) {
      const p = (i * width + j) * 4;
      const skyness = 1 - i / Math.max(1, height - 1);
      pixels[p] = Math.round(40 + 30 * skyness + ((j * 7 + tint) % 23));
      pixels[p + 1] = Math.round(45 + 40 * skyness + ((i * 5 + tint) % 19));
      pixels[p + 2] = Math.round(60 + 120 * skyness + (tint % 31));
      pixels[p + 3] = 255;
    }
  }
  writePng(file, { width, height, pixels });
}

function makeImages(dir: string, names: string[], size = 12): void {
  names.forEach((name, i) => scenePng(path.join(dir, name), size, size, i * 13));
}

function job(imagesDir: string, outDir: string, extra: object = {}) {
  return {
    imagesDir,
    outDir,
    modelId: 'luma3',
    vprLayerId: 'hist64',
    rules: DEFAULT_RULES,
    warn: () => {},
    ...extra,
  };
}

describe('runExport', () => {
  it('writes logits, descriptor and manifest entries per image', () => {
    const images = tmpDir();
    const out = tmpDir();
    makeImages(images, ['day_a.png', 'day_b.png', 'night_c.png']);

    const result = runExport(job(images, out));
    expect(result.partial).toBe(false);
    expect(result.written.map(f => f.imageId)).toEqual(['day_a', 'day_b', 'night_c']);
    expect(result.written.map(f => f.split)).toEqual(['reference', 'reference', 'query']);

    for (const frag of result.written) {
      const logits = decodeNpy(fs.readFileSync(path.join(out, frag.logitsRel)));
      expect(logits.dtype).toBe('float32');
      expect(logits.shape).toEqual([12, 12, 3]);
      const desc = decodeNpy(fs.readFileSync(path.join(out, frag.descriptorRel)));
      expect(desc.shape).toEqual([64]);
    }
    const manifest = fs.readFileSync(result.manifestPath, 'utf8');
    expect(manifest).toContain('classes: road, structure, sky');
    expect(manifest).toContain('[image night_c]');
    expect(manifest).toContain('split: query');
  });

  it('re-exports byte-identically', () => {
    const images = tmpDir();
    makeImages(images, ['day_a.png', 'night_b.png', 'snow_c.png']);
    const outA = tmpDir();
    const outB = tmpDir();
    runExport(job(images, outA));
    runExport(job(images, outB));

    const walk = (root: string): string[] =>
      fs
        .readdirSync(root, { recursive: true, encoding: 'utf8' })
        .filter(p => fs.statSync(path.join(root, p)).isFile())
        .sort();
    const filesA = walk(outA);
    expect(filesA).toEqual(walk(outB));
    expect(filesA.length).toBe(3 * 2 + 1);
    for (const rel of filesA) {
      const a = fs.readFileSync(path.join(outA, rel));
      const b = fs.readFileSync(path.join(outB, rel));
      expect(a.equals(b), rel).toBe(true);
    }
  });

  it('skips corrupt images with a warning and flags partial', () => {
    const images = tmpDir();
    const out = tmpDir();
    makeImages(images, ['day_a.png', 'night_b.png']);
    fs.writeFileSync(path.join(images, 'day_broken.png'), 'not a png');

    const warnings: string[] = [];
    const result = runExport(job(images, out, { warn: (m: string) => warnings.push(m) }));
    expect(result.partial).toBe(true);
    expect(result.skipped).toHaveLength(1);
    expect(result.skipped[0].file).toBe('day_broken.png');
    expect(warnings.join(' ')).toContain('day_broken.png');
    expect(result.written.map(f => f.imageId)).toEqual(['day_a', 'night_b']);
    expect(fs.readFileSync(result.manifestPath, 'utf8')).not.toContain('day_broken');
  });

  it('fails when nothing can be decoded', () => {
    const images = tmpDir();
    fs.writeFileSync(path.join(images, 'a.png'), 'junk');
    expect(() => runExport(job(images, tmpDir()))).toThrow(/could be decoded/);
  });

  it('fails on an imageless directory', () => {
    const images = tmpDir();
    fs.writeFileSync(path.join(images, 'notes.txt'), 'not imagery');
    expect(() => runExport(job(images, tmpDir()))).toThrow(/no PNG images/);
  });

  it('rejects descriptor dims drift across the job', () => {
    const images = tmpDir();
    scenePng(path.join(images, 'day_small.png'), 6, 6, 1);
    scenePng(path.join(images, 'day_large.png'), 10, 10, 2);
    registerExtractor({
      id: 'flat-rgba',
      extract: image => Float32Array.from(image.pixels, v => v / 255),
    });
    expect(() => runExport(job(images, tmpDir(), { vprLayerId: 'flat-rgba' }))).toThrow(
      /dims drift/,
    );
  });

  it('leaves no temp files behind', () => {
    const images = tmpDir();
    const out = tmpDir();
    makeImages(images, ['day_a.png']);
    runExport(job(images, out));
    const leftovers = fs
      .readdirSync(out, { recursive: true, encoding: 'utf8' })
      .filter(p => p.includes('.tmp-'));
    expect(leftovers).toEqual([]);
  });
});

describe('listImages', () => {
  it('returns only png files, sorted', () => {
    const dir = tmpDir();
    for (const name of ['b.png', 'a.PNG', 'c.jpg', 'readme.md']) {
      fs.writeFileSync(path.join(dir, name), 'x');
    }
    expect(listImages(dir)).toEqual(['a.PNG', 'b.png']);
  });
});

describe('atomicWrite', () => {
  it('creates parents and installs the final name only', () => {
    const dir = tmpDir();
    const target = path.join(dir, 'deep', 'nested', 'file.bin');
    atomicWrite(target, Buffer.from([1, 2, 3]));
    expect(fs.readFileSync(target)).toEqual(Buffer.from([1, 2, 3]));
    expect(fs.readdirSync(path.dirname(target))).toEqual(['file.bin']);
  });
});

describe('validateOutputs', () => {
  function writtenPair(out: string, id: string) {
    atomicWrite(
      path.join(out, 'logits', `${id}.npy`),
      encodeNpy({ dtype: 'float32', shape: [2, 2, 3], data: new Float32Array(12) }),
    );
    atomicWrite(
      path.join(out, 'descriptors', `${id}.npy`),
      encodeNpy({ dtype: 'float32', shape: [8], data: new Float32Array(8).fill(0.5) }),
    );
    return {
      imageId: id,
      condition: 'day',
      split: 'reference' as const,
      logitsRel: path.join('logits', `${id}.npy`),
      descriptorRel: path.join('descriptors', `${id}.npy`),
    };
  }

  it('passes clean outputs', () => {
    const out = tmpDir();
    const frags = [writtenPair(out, 'a'), writtenPair(out, 'b')];
    expect(() => validateOutputs(out, frags, 3)).not.toThrow();
  });

  it('catches non-finite logits', () => {
    const out = tmpDir();
    const frag = writtenPair(out, 'a');
    const bad = new Float32Array(12);
    bad[5] = NaN;
    atomicWrite(
      path.join(out, frag.logitsRel),
      encodeNpy({ dtype: 'float32', shape: [2, 2, 3], data: bad }),
    );
    expect(() => validateOutputs(out, [frag], 3)).toThrow(/non-finite/);
  });

  it('catches a class-count mismatch with the model', () => {
    const out = tmpDir();
    const frag = writtenPair(out, 'a');
    expect(() => validateOutputs(out, [frag], 19)).toThrow(/19/);
  });

  it('catches a rank-2 descriptor', () => {
    const out = tmpDir();
    const frag = writtenPair(out, 'a');
    atomicWrite(
      path.join(out, frag.descriptorRel),
      encodeNpy({ dtype: 'float32', shape: [2, 4], data: new Float32Array(8) }),
    );
    expect(() => validateOutputs(out, [frag], 3)).toThrow(/rank-1/);
  });

  it('catches dims drift between files', () => {
    const out = tmpDir();
    const a = writtenPair(out, 'a');
    const b = writtenPair(out, 'b');
    atomicWrite(
      path.join(out, b.descriptorRel),
      encodeNpy({ dtype: 'float32', shape: [9], data: new Float32Array(9) }),
    );
    expect(() => validateOutputs(out, [a, b], 3)).toThrow(/drift/);
  });
});
