/**
 * Image tree scanning.
 *
 * Expected layout under the image root:
 *
 *   <root>/id_train/<class folder>/image files
 *   <root>/id_test/<class folder>/image files
 *   <root>/ood_test/[<folder>/]image files
 *
 * Records are emitted in sorted relative-path order, which fixes both the
 * file order of the output and the indices in the manifest.
 */
import { readdirSync, statSync } from 'node:fs';
import path from 'node:path';

export const SPLITS = ['id_train', 'id_test', 'ood_test'] as const;
export type SplitName = (typeof SPLITS)[number];

export interface ScanEntry {
  absPath: string;
  relPath: string;
  split: SplitName;
  classFolder: string | null;
}

function walkFiles(dir: string, rel: string, out: Array<{ abs: string; rel: string }>): void {
  for (const name of readdirSync(dir)) {
    const abs = path.join(dir, name);
    const relChild = rel ? `${rel}/${name}` : name;
    if (statSync(abs).isDirectory()) {
      walkFiles(abs, relChild, out);
    } else {
      out.push({ abs, rel: relChild });
    }
  }
}

export function scanImageRoot(root: string): ScanEntry[] {
  let anySplit = false;
  const entries: ScanEntry[] = [];
  for (const split of SPLITS) {
    const dir = path.join(root, split);
    let stat;
    try {
      stat = statSync(dir);
    } catch {
      continue;
    }
    if (!stat.isDirectory()) continue;
    anySplit = true;
    const files: Array<{ abs: string; rel: string }> = [];
    walkFiles(dir, '', files);
    for (const f of files) {
      const parts = f.rel.split('/');
      entries.push({
        absPath: f.abs,
        relPath: `${split}/${f.rel}`,
        split,
        classFolder: parts.length > 1 ? parts[0] : null,
      });
    }
  }
  if (!anySplit) {
    throw new Error(
      `${root} has none of the split folders ${SPLITS.join(', ')}`,
    );
  }
  entries.sort((a, b) => (a.relPath < b.relPath ? -1 : a.relPath > b.relPath ? 1 : 0));
  return entries;
}

/** Class map from sorted ID class-folder names, unless one is supplied. */
export function buildClassMap(
  entries: ScanEntry[],
  explicit?: Record<string, number>,
): Map<string, number> {
  if (explicit) {
    return new Map(Object.entries(explicit));
  }
  const folders = new Set<string>();
  for (const e of entries) {
    if (e.split !== 'ood_test' && e.classFolder !== null) {
      folders.add(e.classFolder);
    }
  }
  const map = new Map<string, number>();
  [...folders].sort().forEach((name, index) => map.set(name, index));
  return map;
}
