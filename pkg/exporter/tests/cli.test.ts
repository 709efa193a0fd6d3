import { spawnSync } from "child_process";
import * as fs from "fs";
import * as os from "os";
import * as path from "path";
import { PNG } from "pngjs";
import { afterAll, describe, expect, test } from "vitest";

import { encodeText } from "../src/encoder";
import { main } from "../src/cli";
import { readRecords } from "../src/format";

const tmp = fs.mkdtempSync(path.join(os.tmpdir(), "apte-cli-"));
afterAll(() => fs.rmSync(tmp, { recursive: true, force: true }));

function cosine(a: Float32Array, b: Float32Array): number {
  let dot = 0;
  let na = 0;
  let nb = 0;
  for (let i = 0; i < a.length; i++) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / Math.sqrt(na * nb);
}

function writePng(filePath: string, width: number, height: number, paint: (x: number, y: number) => [number, number, number]) {
  const png = new PNG({ width, height });
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const o = 4 * (y * width + x);
      const [r, g, b] = paint(x, y);
      png.data[o] = r;
      png.data[o + 1] = g;
      png.data[o + 2] = b;
      png.data[o + 3] = 255;
    }
  }
  fs.writeFileSync(filePath, PNG.sync.write(png));
}

describe("export-text", () => {
  const out = path.join(tmp, "text.apte");

  test("writes prompts with the template applied, plus the empty record", () => {
    const input = path.join(tmp, "categories.txt");
    fs.writeFileSync(input, "button\nicon\nproduct card\n");
    const code = main([
      "export-text", "--input", input, "--template", "a photo of {}",
      "--kind", "prompt", "--out", out, "--dim", "128",
    ]);
    expect(code).toBe(0);
    const { dim, records } = readRecords(out);
    expect(dim).toBe(128);
    const keys = records.map((r) => r.key);
    expect(keys).toEqual(["", "prompt:button", "prompt:icon", "prompt:product card"]);
    const stored = records.find((r) => r.key === "prompt:icon")!;
    expect(cosine(stored.values, encodeText("a photo of icon", 128))).toBeCloseTo(1.0, 9);
  });

  test("re-encoding any stored string reproduces its vector exactly", () => {
    const { records } = readRecords(out);
    const empty = records.find((r) => r.key === "")!;
    expect(cosine(empty.values, encodeText("", 128))).toBeCloseTo(1.0, 12);
  });

  test("the primary core parses the produced file", () => {
    const probe = spawnSync("python3", ["-m", "aptkit.cli", "inspect", out], {
      encoding: "utf-8",
      cwd: path.join(__dirname, "..", ".."),
    });
    expect(probe.status).toBe(0);
    expect(probe.stdout).toContain("kind: embedding-store");
    expect(probe.stdout).toContain("dim: 128");
  });

  test("duplicate keys are rejected", () => {
    const input = path.join(tmp, "dups.txt");
    fs.writeFileSync(input, "button\n button \n");
    const code = main(["export-text", "--input", input, "--out", path.join(tmp, "d.apte")]);
    expect(code).toBe(1);
  });

  test("ocr kind uses normalized ocr keys", () => {
    const input = path.join(tmp, "ocr.txt");
    fs.writeFileSync(input, "  confirm payment \n");
    const ocrOut = path.join(tmp, "ocr.apte");
    expect(main(["export-text", "--input", input, "--kind", "ocr", "--out", ocrOut])).toBe(0);
    const { records } = readRecords(ocrOut);
    expect(records.map((r) => r.key)).toContain("ocr:confirm payment");
  });

  test("writes the shared sample the primary acceptance test consumes", () => {
    const input = path.join(tmp, "sample-categories.txt");
    fs.writeFileSync(input, "button\nicon\ncard\n");
    const sampleOut = path.join(__dirname, "..", "out", "sample-text.apte");
    expect(main([
      "export-text", "--input", input, "--template", "a photo of {}",
      "--out", sampleOut,
    ])).toBe(0);
    expect(fs.existsSync(sampleOut)).toBe(true);
  });
});

describe("export-crops", () => {
  const imageDir = path.join(tmp, "images");
  fs.mkdirSync(imageDir, { recursive: true });

  const annotations = path.join(tmp, "screens.jsonl");
  const screen = {
    image_id: "shot-1",
    width: 64,
    height: 64,
    elements: [
      { bbox: [0, 0, 20, 20], category: "button" },
      { bbox: [30, 5, 60, 25], category: "icon" },
      { bbox: [8, 40, 56, 60], category: "card" },
    ],
    ocr: [],
  };

  test("one image with three elements yields three vision records", () => {
    fs.writeFileSync(annotations, JSON.stringify(screen) + "\n");
    writePng(path.join(imageDir, "shot-1.png"), 64, 64,
             (x, y) => [(x * 4) % 256, (y * 4) % 256, (x ^ y) % 256]);
    const out = path.join(tmp, "crops.apte");
    expect(main(["export-crops", "--annotations", annotations, "--images", imageDir,
                 "--out", out, "--dim", "128"])).toBe(0);
    const { dim, records } = readRecords(out);
    expect(dim).toBe(128);
    expect(records.map((r) => r.key)).toEqual(
      ["", "img:shot-1:0", "img:shot-1:1", "img:shot-1:2"]);
    const probe = spawnSync("python3", ["-m", "aptkit.cli", "inspect", out],
                            { encoding: "utf-8" });
    expect(probe.status).toBe(0);
  });

  test("a degenerate box is rejected by shared validation", () => {
    const bad = { ...screen, image_id: "shot-2",
                  elements: [{ bbox: [5, 5, 5, 20], category: "button" }] };
    const badPath = path.join(tmp, "bad.jsonl");
    fs.writeFileSync(badPath, JSON.stringify(bad) + "\n");
    expect(main(["export-crops", "--annotations", badPath, "--images", imageDir,
                 "--out", path.join(tmp, "bad.apte")])).toBe(1);
  });

  test("missing images are listed and processing continues", () => {
    const two = [
      JSON.stringify(screen),
      JSON.stringify({ ...screen, image_id: "absent" }),
    ].join("\n");
    const twoPath = path.join(tmp, "two.jsonl");
    fs.writeFileSync(twoPath, two + "\n");
    const out = path.join(tmp, "partial.apte");
    expect(main(["export-crops", "--annotations", twoPath, "--images", imageDir,
                 "--out", out])).toBe(0);
    const { records } = readRecords(out);
    expect(records.filter((r) => r.key.startsWith("img:shot-1:"))).toHaveLength(3);
    expect(records.some((r) => r.key.startsWith("img:absent"))).toBe(false);
  });
});
