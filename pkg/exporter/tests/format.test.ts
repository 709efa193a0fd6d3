import * as fs from "fs";
import * as os from "os";
import * as path from "path";
import { afterAll, describe, expect, test } from "vitest";

import { encodeRecords, readRecords, writeRecords } from "../src/format";

const tmp = fs.mkdtempSync(path.join(os.tmpdir(), "apte-format-"));
afterAll(() => fs.rmSync(tmp, { recursive: true, force: true }));

function sampleRecords() {
  return [
    { key: "", values: new Float32Array([0, 0, 0]) },
    { key: "prompt:button", values: new Float32Array([0.25, -1.5, 3.75]) },
    { key: "ocr:текст", values: new Float32Array([1e-8, 42.5, -0.1]) },
  ];
}

describe("container round trip", () => {
  test("write then read is bit exact", () => {
    const file = path.join(tmp, "rt.apte");
    writeRecords(file, 3, sampleRecords());
    const { dim, records } = readRecords(file);
    expect(dim).toBe(3);
    expect(records.map((r) => r.key)).toEqual(["", "prompt:button", "ocr:текст"]);
    for (const [i, rec] of records.entries()) {
      expect(Buffer.from(rec.values.buffer)).toEqual(
        Buffer.from(sampleRecords()[i].values.buffer),
      );
    }
  });

  test("file size follows the layout formula", () => {
    const blob = encodeRecords(3, sampleRecords());
    const expected =
      16 +
      sampleRecords()
        .map((r) => 2 + Buffer.from(r.key, "utf-8").length + 4 * 3)
        .reduce((a, b) => a + b, 0);
    expect(blob.length).toBe(expected);
  });
});

describe("container validation", () => {
  test("rejects duplicate keys", () => {
    const rec = { key: "k", values: new Float32Array([1]) };
    expect(() => encodeRecords(1, [rec, rec])).toThrow(/duplicate key/);
  });

  test("rejects wrong-length and non-finite vectors", () => {
    expect(() => encodeRecords(2, [{ key: "k", values: new Float32Array([1]) }]))
      .toThrow(/expected 2/);
    expect(() => encodeRecords(1, [{ key: "k", values: new Float32Array([NaN]) }]))
      .toThrow(/non-finite/);
  });

  test("detects bad magic and truncation on read", () => {
    const file = path.join(tmp, "bad.apte");
    writeRecords(file, 3, sampleRecords());
    const data = fs.readFileSync(file);
    fs.writeFileSync(file, Buffer.concat([Buffer.from("XXXX"), data.subarray(4)]));
    expect(() => readRecords(file)).toThrow(/bad magic/);
    fs.writeFileSync(file, data.subarray(0, data.length - 2));
    expect(() => readRecords(file)).toThrow(/truncated/);
  });
});
