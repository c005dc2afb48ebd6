#!/usr/bin/env node
/**
 * gemb-extract --images <root> --encoder <name> --out <file.gemb> --manifest <file.json>
 *
 * Runs the named encoder over the split folders under the image root and
 * writes the embeddings plus a split manifest. Warnings go to stderr, a
 * JSON summary to stdout.
 */
import { statSync } from 'node:fs';
import process from 'node:process';

import { getEncoder } from './encoders.js';
import { extract } from './extract.js';

function parseArgs(argv: string[]): Record<string, string> {
  const args: Record<string, string> = {};
  for (let i = 0; i < argv.length; i += 2) {
    const flag = argv[i];
    if (!flag.startsWith('--') || i + 1 >= argv.length) {
      throw new Error(`malformed arguments near ${JSON.stringify(flag)}`);
    }
    args[flag.slice(2)] = argv[i + 1];
  }
  return args;
}

async function main(): Promise<number> {
  let args: Record<string, string>;
  try {
    args = parseArgs(process.argv.slice(2));
  } catch (err) {
    console.error(String(err));
    return 2;
  }
  for (const required of ['images', 'encoder', 'out', 'manifest']) {
    if (!args[required]) {
      console.error(
        'usage: gemb-extract --images <root> --encoder <name> --out <file.gemb> ' +
          '--manifest <file.json> [--batch-size N] [--name label]',
      );
      return 2;
    }
  }
  try {
    statSync(args.images);
  } catch {
    console.error(`image root not found: ${args.images}`);
    return 2;
  }
  try {
    const encoder = getEncoder(args.encoder);
    const result = await extract({
      imageRoot: args.images,
      encoder,
      outputPath: args.out,
      manifestPath: args.manifest,
      batchSize: args['batch-size'] ? Number(args['batch-size']) : undefined,
      name: args.name,
    });
    console.log(
      JSON.stringify(
        {
          out: args.out,
          manifest: args.manifest,
          encoder: encoder.name,
          dim: result.dim,
          written: result.written,
          skipped: result.skipped,
        },
        null,
        2,
      ),
    );
    return 0;
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    return 1;
  }
}

main().then(
  (code) => process.exit(code),
  (err) => {
    console.error(err);
    process.exit(1);
  },
);
