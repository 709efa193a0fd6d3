import { describe, expect, test } from "vitest";

import { encodeCrop, encodeText, loadEncoder } from "../src/encoder";

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

describe("text encoder", () => {
  test("identical strings produce identical vectors", () => {
    const a = encodeText("confirm payment");
    const b = encodeText("confirm payment");
    expect(Buffer.from(a.buffer)).toEqual(Buffer.from(b.buffer));
    expect(cosine(a, b)).toBeCloseTo(1.0, 12);
  });

  test("vectors are unit norm", () => {
    for (const text of ["", "icon", "确认支付", "a much longer ui caption"]) {
      const v = encodeText(text);
      let norm = 0;
      for (const x of v) norm += x * x;
      expect(Math.sqrt(norm)).toBeCloseTo(1.0, 6);
    }
  });

  test("the empty string has a well-defined non-zero vector", () => {
    const empty = encodeText("");
    const blank = encodeText("   ");
    expect(Buffer.from(empty.buffer)).toEqual(Buffer.from(blank.buffer));
    expect(cosine(empty, empty)).toBeCloseTo(1.0, 12);
  });

  test("normalization matches the store key convention", () => {
    const composed = encodeText("café");
    const decomposed = encodeText("café");
    expect(Buffer.from(composed.buffer)).toEqual(Buffer.from(decomposed.buffer));
  });

  test("different strings separate", () => {
    expect(cosine(encodeText("login button"), encodeText("product card"))).toBeLessThan(0.9);
  });

  test("dim is configurable", () => {
    expect(encodeText("x", 64).length).toBe(64);
  });
});

describe("crop encoder", () => {
  function gradientImage(width = 32, height = 32) {
    const data = new Uint8Array(4 * width * height);
    for (let y = 0; y < height; y++) {
      for (let x = 0; x < width; x++) {
        const o = 4 * (y * width + x);
        data[o] = (x * 8) % 256;
        data[o + 1] = (y * 8) % 256;
        data[o + 2] = (x + y) % 256;
        data[o + 3] = 255;
      }
    }
    return { width, height, data };
  }

  test("identical crops produce identical vectors", () => {
    const image = gradientImage();
    const box = { x1: 4, y1: 4, x2: 20, y2: 16 };
    const a = encodeCrop(image, box);
    const b = encodeCrop(image, box);
    expect(Buffer.from(a.buffer)).toEqual(Buffer.from(b.buffer));
  });

  test("different crops separate", () => {
    const image = gradientImage();
    const a = encodeCrop(image, { x1: 0, y1: 0, x2: 8, y2: 8 });
    const b = encodeCrop(image, { x1: 20, y1: 20, x2: 32, y2: 32 });
    expect(cosine(a, b)).toBeLessThan(0.999);
  });
});

describe("backend loading", () => {
  test("unknown backends report a load failure", () => {
    expect(() => loadEncoder("clip-vit")).toThrow(/encoder load failure/);
  });
});
