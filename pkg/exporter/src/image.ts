import fs from 'fs';
import { PNG } from 'pngjs';

export type DecodedImage = {
  width: number;
  height: number;
  /** RGBA, 4 bytes per pixel, row-major */
  pixels: Uint8Array;
};

/** Decode one PNG. Throws on anything unreadable; callers decide policy. */
export function readPng(path: string): DecodedImage {
  const raw = fs.readFileSync(path);
  const png = PNG.sync.read(raw);
  if (png.width < 1 || png.height < 1) {
    throw new Error(`${path}: empty image`);
  }
  return { width: png.width, height: png.height, pixels: new Uint8Array(png.data) };
}

export function writePng(path: string, image: DecodedImage): void {
  const png = new PNG({ width: image.width, height: image.height });
  Buffer.from(image.pixels).copy(png.data);
  fs.writeFileSync(path, PNG.sync.write(png));
}
