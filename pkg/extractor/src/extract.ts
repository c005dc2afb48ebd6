/**
 * Extraction pipeline: image tree -> GEMB file + split manifest.
 */
import { readFileSync, writeFileSync } from 'node:fs';

import { Encoder, DecodeError } from './encoders.js';
import { EmbeddingRecord, OOD_LABEL, encodeGemb } from './gemb.js';
import { SplitManifest, manifestJson } from './manifest.js';
import { ScanEntry, buildClassMap, scanImageRoot } from './scan.js';

export interface ExtractionJob {
  imageRoot: string;
  encoder: Encoder;
  outputPath: string;
  manifestPath: string;
  classMap?: Record<string, number>;
  batchSize?: number;
  name?: string;
  warn?: (message: string) => void;
}

export interface ExtractionResult {
  written: number;
  skipped: number;
  dim: number;
  manifest: SplitManifest;
}

export async function extract(job: ExtractionJob): Promise<ExtractionResult> {
  const batchSize = job.batchSize ?? 16;
  if (batchSize < 1) throw new Error('batch_size must be >= 1');
  const warn = job.warn ?? ((m: string) => console.error(m));

  const entries = scanImageRoot(job.imageRoot);
  const classMap = buildClassMap(entries, job.classMap);

  const records: EmbeddingRecord[] = [];
  const splits: Record<'id_train' | 'id_test' | 'ood_test', number[]> = {
    id_train: [],
    id_test: [],
    ood_test: [],
  };
  let skipped = 0;

  for (let start = 0; start < entries.length; start += batchSize) {
    const batch = entries.slice(start, start + batchSize);
    const encoded = await Promise.all(batch.map((entry) => encodeOne(entry)));
    for (const item of encoded) {
      if (item === null) {
        skipped++;
        continue;
      }
      const index = records.length;
      records.push(item.record);
      splits[item.entry.split].push(index);
    }
  }

  async function encodeOne(
    entry: ScanEntry,
  ): Promise<{ entry: ScanEntry; record: EmbeddingRecord } | null> {
    let vector: Float32Array;
    try {
      vector = await job.encoder.encode(readFileSync(entry.absPath));
    } catch (err) {
      if (err instanceof DecodeError) {
        warn(`skipping undecodable image ${entry.relPath}: ${err.message}`);
        return null;
      }
      throw err;
    }
    if (vector.length !== job.encoder.dim) {
      throw new Error(
        `encoder returned dim ${vector.length}, declared ${job.encoder.dim}`,
      );
    }
    const label =
      entry.classFolder !== null && classMap.has(entry.classFolder)
        ? classMap.get(entry.classFolder)!
        : OOD_LABEL;
    return { entry, record: { label, vector } };
  }

  if (records.length === 0) {
    throw new Error(`no decodable images under ${job.imageRoot}`);
  }

  const classNames: Record<string, string> = {};
  for (const [folder, index] of classMap) {
    classNames[String(index)] = folder;
  }
  const manifest: SplitManifest = {
    name: job.name ?? `extracted:${job.encoder.name}`,
    id_train: splits.id_train,
    id_test: splits.id_test,
    ood_test: splits.ood_test,
    class_names: classNames,
  };

  writeFileSync(job.outputPath, encodeGemb(records, job.encoder.dim));
  writeFileSync(job.manifestPath, manifestJson(manifest));
  if (skipped > 0) {
    warn(`skipped ${skipped} undecodable image(s)`);
  }
  return { written: records.length, skipped, dim: job.encoder.dim, manifest };
}
