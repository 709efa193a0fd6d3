/**
 * Binary embedding container, bit-exact:
 *
 *   bytes 0-3   ASCII "APTE"
 *   uint32 LE   format version (1)
 *   uint32 LE   vector dimension d
 *   uint32 LE   record count
 *   records     uint16 LE key byte length, UTF-8 key, d float32 LE values
 */

import * as fs from "fs";

export const MAGIC = "APTE";
export const FORMAT_VERSION = 1;

export interface EmbeddingRecord {
  key: string;
  values: Float32Array;
}

export function encodeRecords(dim: number, records: EmbeddingRecord[]): Buffer {
  if (!Number.isInteger(dim) || dim <= 0) {
    throw new Error(`dim must be a positive integer, got ${dim}`);
  }
  const seen = new Set<string>();
  const chunks: Buffer[] = [];
  const header = Buffer.alloc(16);
  header.write(MAGIC, 0, "ascii");
  header.writeUInt32LE(FORMAT_VERSION, 4);
  header.writeUInt32LE(dim, 8);
  header.writeUInt32LE(records.length, 12);
  chunks.push(header);

  for (const record of records) {
    if (seen.has(record.key)) {
      throw new Error(`duplicate key ${JSON.stringify(record.key)}`);
    }
    seen.add(record.key);
    if (record.values.length !== dim) {
      throw new Error(
        `record ${JSON.stringify(record.key)} has ${record.values.length} values, expected ${dim}`,
      );
    }
    for (const v of record.values) {
      if (!Number.isFinite(v)) {
        throw new Error(`record ${JSON.stringify(record.key)} contains a non-finite value`);
      }
    }
    const keyBytes = Buffer.from(record.key, "utf-8");
    if (keyBytes.length > 0xffff) {
      throw new Error(`key too long (${keyBytes.length} bytes)`);
    }
    const head = Buffer.alloc(2);
    head.writeUInt16LE(keyBytes.length, 0);
    const body = Buffer.alloc(4 * dim);
    record.values.forEach((v, i) => body.writeFloatLE(v, 4 * i));
    chunks.push(head, keyBytes, body);
  }
  return Buffer.concat(chunks);
}

export function writeRecords(path: string, dim: number, records: EmbeddingRecord[]): void {
  fs.writeFileSync(path, encodeRecords(dim, records));
}

export function readRecords(path: string): { dim: number; records: EmbeddingRecord[] } {
  const data = fs.readFileSync(path);
  if (data.length < 16) {
    throw new Error(`${path}: truncated header (${data.length} bytes)`);
  }
  if (data.toString("ascii", 0, 4) !== MAGIC) {
    throw new Error(`${path}: bad magic`);
  }
  const version = data.readUInt32LE(4);
  if (version !== FORMAT_VERSION) {
    throw new Error(`${path}: version mismatch (got ${version})`);
  }
  const dim = data.readUInt32LE(8);
  const count = data.readUInt32LE(12);
  const records: EmbeddingRecord[] = [];
  const seen = new Set<string>();
  let offset = 16;
  for (let i = 0; i < count; i++) {
    if (offset + 2 > data.length) {
      throw new Error(`${path}: truncated record ${i}`);
    }
    const keyLen = data.readUInt16LE(offset);
    offset += 2;
    if (offset + keyLen + 4 * dim > data.length) {
      throw new Error(`${path}: truncated record ${i}`);
    }
    const key = data.toString("utf-8", offset, offset + keyLen);
    offset += keyLen;
    const values = new Float32Array(dim);
    for (let k = 0; k < dim; k++) {
      values[k] = data.readFloatLE(offset + 4 * k);
    }
    offset += 4 * dim;
    if (seen.has(key)) {
      throw new Error(`${path}: duplicate key ${JSON.stringify(key)}`);
    }
    seen.add(key);
    records.push({ key, values });
  }
  if (offset !== data.length) {
    throw new Error(`${path}: ${data.length - offset} trailing bytes`);
  }
  return { dim, records };
}
