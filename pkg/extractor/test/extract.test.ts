import assert from 'node:assert/strict';
import { mkdtempSync, readFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import path from 'node:path';
import { test } from 'node:test';

import { getEncoder } from '../src/encoders.js';
import { extract } from '../src/extract.js';
import { decodeGemb } from '../src/gemb.js';
import { makePgm, makePpm, writeTree } from './helpers.js';

function fixtureTree(root: string): void {
  writeTree(root, {
    'id_train/cat/a.pgm': makePgm(8, 6, 1),
    'id_train/cat/b.pgm': makePgm(8, 6, 2),
    'id_train/dog/a.pgm': makePgm(8, 6, 3),
    'id_train/dog/b.pgm': makePgm(8, 6, 4),
    'id_test/cat/c.pgm': makePgm(8, 6, 5),
    'id_test/dog/c.pgm': makePgm(8, 6, 6),
    'ood_test/u1.ppm': makePpm(4, 4, [200, 10, 10]),
    'ood_test/u2.ppm': makePpm(4, 4, [10, 200, 10]),
  });
}

function tempRoot(): string {
  return mkdtempSync(path.join(tmpdir(), 'gemb-extract-'));
}

async function runExtract(root: string, warnings: string[] = []) {
  return extract({
    imageRoot: path.join(root, 'images'),
    encoder: getEncoder('pgm-moments'),
    outputPath: path.join(root, 'out.gemb'),
    manifestPath: path.join(root, 'manifest.json'),
    warn: (m) => warnings.push(m),
  });
}

test('writes one record per image in sorted path order with folder labels', async () => {
  const root = tempRoot();
  fixtureTree(path.join(root, 'images'));
  const result = await runExtract(root);
  assert.equal(result.written, 8);
  assert.equal(result.skipped, 0);

  const decoded = decodeGemb(readFileSync(path.join(root, 'out.gemb')));
  assert.equal(decoded.dim, 8);
  assert.equal(decoded.records.length, 8);
  // sorted relative paths: id_test/cat, id_test/dog, train cat a/b, dog a/b, ood u1/u2
  assert.deepEqual(
    decoded.records.map((r) => r.label),
    [0, 1, 0, 0, 1, 1, -1, -1],
  );

  const manifest = JSON.parse(readFileSync(path.join(root, 'manifest.json'), 'utf-8'));
  assert.deepEqual(manifest.id_test, [0, 1]);
  assert.deepEqual(manifest.id_train, [2, 3, 4, 5]);
  assert.deepEqual(manifest.ood_test, [6, 7]);
  assert.deepEqual(manifest.class_names, { '0': 'cat', '1': 'dog' });

  const all = [...manifest.id_train, ...manifest.id_test, ...manifest.ood_test].sort(
    (a: number, b: number) => a - b,
  );
  assert.deepEqual(all, [0, 1, 2, 3, 4, 5, 6, 7]);
});

test('identical inputs produce identical bytes', async () => {
  const rootA = tempRoot();
  const rootB = tempRoot();
  fixtureTree(path.join(rootA, 'images'));
  fixtureTree(path.join(rootB, 'images'));
  await runExtract(rootA);
  await runExtract(rootB);
  assert.deepEqual(
    readFileSync(path.join(rootA, 'out.gemb')),
    readFileSync(path.join(rootB, 'out.gemb')),
  );
  assert.equal(
    readFileSync(path.join(rootA, 'manifest.json'), 'utf-8'),
    readFileSync(path.join(rootB, 'manifest.json'), 'utf-8'),
  );
});

test('undecodable images are skipped with a warning', async () => {
  const root = tempRoot();
  fixtureTree(path.join(root, 'images'));
  writeTree(path.join(root, 'images'), {
    'id_train/cat/broken.pgm': Buffer.from('JPEGnot really'),
  });
  const warnings: string[] = [];
  const result = await runExtract(root, warnings);
  assert.equal(result.written, 8);
  assert.equal(result.skipped, 1);
  assert.ok(warnings.some((w) => w.includes('broken.pgm')));
  const decoded = decodeGemb(readFileSync(path.join(root, 'out.gemb')));
  assert.equal(decoded.records.length, 8);
});

test('explicit class map overrides folder numbering', async () => {
  const root = tempRoot();
  fixtureTree(path.join(root, 'images'));
  const result = await extract({
    imageRoot: path.join(root, 'images'),
    encoder: getEncoder('pgm-moments'),
    outputPath: path.join(root, 'out.gemb'),
    manifestPath: path.join(root, 'manifest.json'),
    classMap: { dog: 0, cat: 1 },
    warn: () => {},
  });
  assert.equal(result.written, 8);
  const decoded = decodeGemb(readFileSync(path.join(root, 'out.gemb')));
  assert.deepEqual(
    decoded.records.map((r) => r.label),
    [1, 0, 1, 1, 0, 0, -1, -1],
  );
});

test('unknown encoder names are rejected', () => {
  assert.throws(() => getEncoder('resnet-9000'), /unknown encoder name/);
});

test('missing split folders are rejected', async () => {
  const root = tempRoot();
  writeTree(path.join(root, 'images'), { 'loose.pgm': makePgm(4, 4, 9) });
  await assert.rejects(runExtract(root), /split folders/);
});

test('pgm-moments encoder is deterministic and in range', async () => {
  const enc = getEncoder('pgm-moments');
  const img = makePgm(16, 12, 42);
  const a = await enc.encode(img);
  const b = await enc.encode(img);
  assert.deepEqual([...a], [...b]);
  assert.equal(a.length, enc.dim);
  for (const v of a) {
    assert.ok(v >= 0 && v <= 1 && Number.isFinite(v));
  }
});
