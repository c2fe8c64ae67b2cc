#!/usr/bin/env node
/**
 * Export CLI.
 *
 *   roadfusion-export --images DIR --out DIR [--model ID] [--vpr-layer ID]
 *                     [--split-rules token=split,...]
 *
 * Exit codes match the engine's convention: 0 ok, 2 bad flags or
 * unknown plugin ids, 3 unreadable input, 4 export finished but some
 * images were skipped.
 */

import { parseArgs } from 'util';
import { parseSplitRules, DEFAULT_RULES } from './manifest.js';
import { listExtractors, listModels, resolveExtractor, resolveModel } from './registry.js';
import { runExport } from './export.js';

export const EXIT_OK = 0;
export const EXIT_CONFIG = 2;
export const EXIT_DATA = 3;
export const EXIT_PARTIAL = 4;

const USAGE = `usage: roadfusion-export --images DIR --out DIR
           [--model ID] [--vpr-layer ID] [--split-rules token=split,...]

models: ${listModels().join(', ')}
vpr layers: ${listExtractors().join(', ')}
default split rules: daytime/day -> reference; night/snow/rain -> query
`;

export function main(argv: string[]): number {
  let parsed;
  try {
    parsed = parseArgs({
      args: argv,
      options: {
        images: { type: 'string' },
        out: { type: 'string' },
        model: { type: 'string', default: 'luma3' },
        'vpr-layer': { type: 'string', default: 'hist64' },
        'split-rules': { type: 'string', default: '' },
        help: { type: 'boolean', default: false },
      },
      allowPositionals: false,
    });
  } catch (err) {
    console.error(err instanceof Error ? err.message : String(err));
    console.error(USAGE);
    return EXIT_CONFIG;
  }
  const opts = parsed.values;
  if (opts.help) {
    console.log(USAGE);
    return EXIT_OK;
  }
  if (!opts.images || !opts.out) {
    console.error('--images and --out are required');
    console.error(USAGE);
    return EXIT_CONFIG;
  }

  let rules;
  try {
    rules = [...parseSplitRules(opts['split-rules'] as string), ...DEFAULT_RULES];
    resolveModel(opts.model as string);
    resolveExtractor(opts['vpr-layer'] as string);
  } catch (err) {
    console.error(err instanceof Error ? err.message : String(err));
    return EXIT_CONFIG;
  }

  try {
    const result = runExport({
      imagesDir: opts.images as string,
      modelId: opts.model as string,
      vprLayerId: opts['vpr-layer'] as string,
      outDir: opts.out as string,
      rules,
    });
    const refs = result.written.filter(f => f.split === 'reference').length;
    const queries = result.written.length - refs;
    console.log(
      `exported ${result.written.length} images (${refs} reference, ${queries} query) ` +
        `-> ${result.manifestPath}` +
        (result.skipped.length ? `; skipped ${result.skipped.length}` : ''),
    );
    return result.partial ? EXIT_PARTIAL : EXIT_OK;
  } catch (err) {
    console.error(err instanceof Error ? err.message : String(err));
    return EXIT_DATA;
  }
}

import { fileURLToPath } from 'url';
if (process.argv[1] && fileURLToPath(import.meta.url) === process.argv[1]) {
  process.exit(main(process.argv.slice(2)));
}
