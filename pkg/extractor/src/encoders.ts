/**
 * Encoder registry.
 *
 * Encoders are addressed by name. "pgm-moments" is built in and fully
 * offline: it parses binary PGM/PPM images and emits an 8-D intensity
 * moment signature, which is enough to exercise the whole extraction
 * pipeline deterministically. The CLIP encoders load transformers.js on
 * first use with the model revision pinned in models.lock.json; they need
 * the optional @huggingface/transformers install and a model cache.
 */
import { readFileSync } from 'node:fs';
import path from 'node:path';
import { fileURLToPath } from 'node:url';

export interface Encoder {
  name: string;
  dim: number;
  /** Decode one image file and embed it. Throws on undecodable input. */
  encode(data: Buffer): Promise<Float32Array>;
}

export class DecodeError extends Error {}

interface GrayImage {
  width: number;
  height: number;
  pixels: Uint8Array; // grayscale, row-major
}

function parsePnm(data: Buffer): GrayImage {
  const magic = data.toString('ascii', 0, 2);
  if (magic !== 'P5' && magic !== 'P6') {
    throw new DecodeError(`not a binary PGM/PPM file (magic ${JSON.stringify(magic)})`);
  }
  // header: magic, width, height, maxval as whitespace-separated ASCII
  // tokens with optional '#' comment lines
  let pos = 2;
  const tokens: number[] = [];
  while (tokens.length < 3 && pos < data.length) {
    const ch = String.fromCharCode(data[pos]);
    if (ch === '#') {
      while (pos < data.length && data[pos] !== 0x0a) pos++;
      pos++;
    } else if (/\s/.test(ch)) {
      pos++;
    } else {
      let tok = '';
      while (pos < data.length && !/\s/.test(String.fromCharCode(data[pos]))) {
        tok += String.fromCharCode(data[pos]);
        pos++;
      }
      const value = Number(tok);
      if (!Number.isInteger(value) || value <= 0) {
        throw new DecodeError(`bad header token ${JSON.stringify(tok)}`);
      }
      tokens.push(value);
    }
  }
  if (tokens.length < 3) throw new DecodeError('truncated header');
  const [width, height, maxval] = tokens;
  if (maxval > 255) throw new DecodeError('only 8-bit samples supported');
  pos++; // single whitespace after maxval
  const channels = magic === 'P6' ? 3 : 1;
  const expected = width * height * channels;
  if (data.length - pos < expected) throw new DecodeError('truncated pixel data');
  const pixels = new Uint8Array(width * height);
  if (channels === 1) {
    pixels.set(data.subarray(pos, pos + expected));
  } else {
    for (let i = 0; i < width * height; i++) {
      const o = pos + 3 * i;
      pixels[i] = Math.round(0.299 * data[o] + 0.587 * data[o + 1] + 0.114 * data[o + 2]);
    }
  }
  return { width, height, pixels };
}

/** 8-D signature: mean, spread, aspect, centroid row/col, quartiles. */
function momentSignature(img: GrayImage): Float32Array {
  const { width, height, pixels } = img;
  const n = pixels.length;
  let sum = 0;
  for (const p of pixels) sum += p;
  const mean = sum / n;
  let varSum = 0;
  let rowMoment = 0;
  let colMoment = 0;
  let mass = 0;
  for (let i = 0; i < n; i++) {
    const p = pixels[i];
    varSum += (p - mean) * (p - mean);
    const r = Math.floor(i / width);
    const c = i % width;
    rowMoment += p * r;
    colMoment += p * c;
    mass += p;
  }
  const std = Math.sqrt(varSum / n);
  const sorted = Uint8Array.from(pixels).sort();
  const q = (f: number) => sorted[Math.min(n - 1, Math.floor(f * n))] / 255;
  return Float32Array.from([
    mean / 255,
    std / 255,
    width / (width + height),
    mass > 0 ? rowMoment / mass / Math.max(1, height - 1) : 0.5,
    mass > 0 ? colMoment / mass / Math.max(1, width - 1) : 0.5,
    q(0.25),
    q(0.5),
    q(0.75),
  ]);
}

const pgmMoments: Encoder = {
  name: 'pgm-moments',
  dim: 8,
  async encode(data: Buffer): Promise<Float32Array> {
    return momentSignature(parsePnm(data));
  },
};

function modelLock(): Record<string, { model: string; revision: string; dim: number }> {
  const here = path.dirname(fileURLToPath(import.meta.url));
  // dist/src -> package root
  const lockPath = path.resolve(here, '..', '..', 'models.lock.json');
  return JSON.parse(readFileSync(lockPath, 'utf-8'));
}

function clipEncoder(name: string): Encoder {
  const lock = modelLock()[name];
  let modelPromise: Promise<{ model: any; processor: any; RawImage: any }> | null = null;

  async function load() {
    if (!modelPromise) {
      modelPromise = (async () => {
        let transformers: any;
        try {
          // non-literal specifier: the dependency is optional and untyped
          const specifier = '@huggingface/transformers';
          transformers = await import(specifier);
        } catch {
          throw new Error(
            `encoder "${name}" needs the optional @huggingface/transformers install`,
          );
        }
        const { AutoProcessor, CLIPVisionModelWithProjection, RawImage } = transformers;
        const opts = { revision: lock.revision };
        const processor = await AutoProcessor.from_pretrained(lock.model, opts);
        const model = await CLIPVisionModelWithProjection.from_pretrained(lock.model, opts);
        return { model, processor, RawImage };
      })();
    }
    return modelPromise;
  }

  return {
    name,
    dim: lock.dim,
    async encode(data: Buffer): Promise<Float32Array> {
      const { model, processor, RawImage } = await load();
      let image;
      try {
        image = await RawImage.fromBlob(new Blob([data]));
      } catch (err) {
        throw new DecodeError(`image decode failed: ${err}`);
      }
      const inputs = await processor(image);
      const { image_embeds } = await model(inputs);
      return Float32Array.from(image_embeds.data as Iterable<number>);
    },
  };
}

export function getEncoder(name: string): Encoder {
  if (name === pgmMoments.name) return pgmMoments;
  if (name in modelLock()) return clipEncoder(name);
  const known = [pgmMoments.name, ...Object.keys(modelLock())].join(', ');
  throw new Error(`unknown encoder name "${name}" (known: ${known})`);
}
