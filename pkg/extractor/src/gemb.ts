/**
 * GEMB binary embedding files (little-endian).
 *
 * Layout: magic "GEMB", u32 version (1), u32 dim, u64 count, u32 flags
 * (bit 0: labels present), then per record an i32 label (omitted when the
 * flag bit is clear, implying -1) followed by dim float32 values.
 */

export const GEMB_MAGIC = 'GEMB';
export const GEMB_VERSION = 1;
export const FLAG_LABELS = 0x1;
export const OOD_LABEL = -1;

const HEADER_BYTES = 24;

export interface EmbeddingRecord {
  label: number;
  vector: Float32Array;
}

export function encodeGemb(records: EmbeddingRecord[], dim: number, withLabels = true): Buffer {
  if (dim <= 0) throw new Error(`dim must be positive, got ${dim}`);
  if (records.length === 0) throw new Error('refusing to write an empty set');
  for (const [i, rec] of records.entries()) {
    if (rec.vector.length !== dim) {
      throw new Error(`record ${i} has dim ${rec.vector.length}, expected ${dim}`);
    }
    for (const v of rec.vector) {
      if (!Number.isFinite(v)) throw new Error(`non-finite value at record ${i}`);
    }
  }
  const recordBytes = (withLabels ? 4 : 0) + 4 * dim;
  const buf = Buffer.alloc(HEADER_BYTES + records.length * recordBytes);
  buf.write(GEMB_MAGIC, 0, 'ascii');
  buf.writeUInt32LE(GEMB_VERSION, 4);
  buf.writeUInt32LE(dim, 8);
  buf.writeBigUInt64LE(BigInt(records.length), 12);
  buf.writeUInt32LE(withLabels ? FLAG_LABELS : 0, 20);
  let offset = HEADER_BYTES;
  for (const rec of records) {
    if (withLabels) {
      buf.writeInt32LE(rec.label, offset);
      offset += 4;
    }
    for (const v of rec.vector) {
      buf.writeFloatLE(v, offset);
      offset += 4;
    }
  }
  return buf;
}

/** Minimal reader, used by the tests to check what was written. */
export function decodeGemb(buf: Buffer): { dim: number; records: EmbeddingRecord[] } {
  if (buf.length < HEADER_BYTES) throw new Error('file shorter than header');
  if (buf.toString('ascii', 0, 4) !== GEMB_MAGIC) throw new Error('bad magic');
  const version = buf.readUInt32LE(4);
  if (version !== GEMB_VERSION) throw new Error(`unsupported version ${version}`);
  const dim = buf.readUInt32LE(8);
  const count = Number(buf.readBigUInt64LE(12));
  const withLabels = (buf.readUInt32LE(20) & FLAG_LABELS) !== 0;
  const recordBytes = (withLabels ? 4 : 0) + 4 * dim;
  if (buf.length !== HEADER_BYTES + count * recordBytes) {
    throw new Error('payload size mismatch');
  }
  const records: EmbeddingRecord[] = [];
  let offset = HEADER_BYTES;
  for (let i = 0; i < count; i++) {
    let label = OOD_LABEL;
    if (withLabels) {
      label = buf.readInt32LE(offset);
      offset += 4;
    }
    const vector = new Float32Array(dim);
    for (let d = 0; d < dim; d++) {
      vector[d] = buf.readFloatLE(offset);
      offset += 4;
    }
    records.push({ label, vector });
  }
  return { dim, records };
}
