import { mkdirSync, writeFileSync } from 'node:fs';
import path from 'node:path';

/** Binary PGM (P5) with deterministic pseudo-random pixels. */
export function makePgm(width: number, height: number, seed: number): Buffer {
  const header = Buffer.from(`P5\n${width} ${height}\n255\n`, 'ascii');
  const pixels = Buffer.alloc(width * height);
  let state = (seed * 2654435761) >>> 0;
  for (let i = 0; i < pixels.length; i++) {
    state = (state * 1664525 + 1013904223) >>> 0;
    pixels[i] = state >>> 24;
  }
  return Buffer.concat([header, pixels]);
}

/** Binary PPM (P6), constant color. */
export function makePpm(width: number, height: number, rgb: [number, number, number]): Buffer {
  const header = Buffer.from(`P6\n${width} ${height}\n255\n`, 'ascii');
  const pixels = Buffer.alloc(width * height * 3);
  for (let i = 0; i < width * height; i++) {
    pixels[3 * i] = rgb[0];
    pixels[3 * i + 1] = rgb[1];
    pixels[3 * i + 2] = rgb[2];
  }
  return Buffer.concat([header, pixels]);
}

export function writeTree(root: string, files: Record<string, Buffer>): void {
  for (const [rel, data] of Object.entries(files)) {
    const abs = path.join(root, rel);
    mkdirSync(path.dirname(abs), { recursive: true });
    writeFileSync(abs, data);
  }
}
