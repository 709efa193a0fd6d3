#!/usr/bin/env node
/**
 * Embedding exporter.
 *
 *   export-text  --input strings.txt --out file.apte
 *                [--template "a photo of {}"] [--kind prompt|ocr]
 *                [--dim 512] [--encoder hash]
 *   export-crops --annotations screens.jsonl --images dir --out file.apte
 *                [--dim 512] [--encoder hash]
 *
 * Both commands always include the reserved empty-string record so the
 * produced store resolves elements that have no linked text.
 */

import * as fs from "fs";
import * as path from "path";
import { PNG } from "pngjs";

import { parseAnnotations } from "./annotations";
import { DEFAULT_DIM, EncoderBackend, loadEncoder, normalizeText } from "./encoder";
import { EmbeddingRecord, writeRecords } from "./format";

interface Flags {
  [key: string]: string;
}

function parseFlags(argv: string[]): Flags {
  const flags: Flags = {};
  for (let i = 0; i < argv.length; i += 2) {
    const name = argv[i];
    if (!name.startsWith("--") || i + 1 >= argv.length) {
      throw new Error(`malformed flag ${name}`);
    }
    flags[name.slice(2)] = argv[i + 1];
  }
  return flags;
}

function requireFlag(flags: Flags, name: string): string {
  const value = flags[name];
  if (value === undefined) {
    throw new Error(`missing required flag --${name}`);
  }
  return value;
}

function backend(flags: Flags): EncoderBackend {
  const dim = flags.dim !== undefined ? Number(flags.dim) : DEFAULT_DIM;
  return loadEncoder(flags.encoder ?? "hash", dim);
}

function ensureParent(filePath: string): void {
  fs.mkdirSync(path.dirname(path.resolve(filePath)), { recursive: true });
}

export function exportText(flags: Flags): number {
  const enc = backend(flags);
  const template = flags.template ?? "{}";
  const kind = flags.kind ?? "prompt";
  if (kind !== "prompt" && kind !== "ocr") {
    throw new Error(`--kind must be prompt or ocr, got ${kind}`);
  }
  const input = requireFlag(flags, "input");
  const out = requireFlag(flags, "out");

  const records: EmbeddingRecord[] = [
    { key: "", values: enc.text("") },
  ];
  const seen = new Set<string>([""]);
  const lines = fs.readFileSync(input, "utf-8").split("\n");
  for (const raw of lines) {
    const name = normalizeText(raw);
    if (!name) continue;
    const key = kind === "prompt" ? `prompt:${name}` : `ocr:${name}`;
    if (seen.has(key)) {
      throw new Error(`duplicate key ${JSON.stringify(key)}`);
    }
    seen.add(key);
    const text = kind === "prompt" ? template.replace("{}", name) : name;
    records.push({ key, values: enc.text(text) });
  }
  ensureParent(out);
  writeRecords(out, enc.dim, records);
  console.log(`wrote ${records.length} records (dim ${enc.dim}, encoder ${enc.name}) to ${out}`);
  return 0;
}

export function exportCrops(flags: Flags): number {
  const enc = backend(flags);
  const annotationsPath = requireFlag(flags, "annotations");
  const imageDir = requireFlag(flags, "images");
  const out = requireFlag(flags, "out");

  const screens = parseAnnotations(fs.readFileSync(annotationsPath, "utf-8"), annotationsPath);
  const records: EmbeddingRecord[] = [{ key: "", values: enc.text("") }];
  const missing: string[] = [];
  let encoded = 0;
  for (const screen of screens) {
    const imagePath = path.join(imageDir, `${screen.imageId}.png`);
    if (!fs.existsSync(imagePath)) {
      missing.push(imagePath);
      continue;
    }
    const png = PNG.sync.read(fs.readFileSync(imagePath));
    const image = { width: png.width, height: png.height, data: png.data };
    screen.boxes.forEach((box, index) => {
      records.push({
        key: `img:${screen.imageId}:${index}`,
        values: enc.crop(image, box),
      });
      encoded += 1;
    });
  }
  if (missing.length > 0) {
    for (const m of missing) {
      console.error(`missing image: ${m}`);
    }
  }
  ensureParent(out);
  writeRecords(out, enc.dim, records);
  console.log(
    `wrote ${encoded} crop embeddings from ${screens.length - missing.length}/${screens.length} ` +
    `images (dim ${enc.dim}) to ${out}`,
  );
  return 0;
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    if (command === "export-text") {
      return exportText(parseFlags(rest));
    }
    if (command === "export-crops") {
      return exportCrops(parseFlags(rest));
    }
    console.error("usage: apte-exporter <export-text|export-crops> [flags]");
    return 2;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
