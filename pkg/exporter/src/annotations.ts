/** Minimal reader for the JSONL screen-annotation format. */

export interface BoxRect {
  x1: number;
  y1: number;
  x2: number;
  y2: number;
}

export interface ScreenElements {
  imageId: string;
  width: number;
  height: number;
  boxes: BoxRect[];
}

function parseBox(raw: unknown, where: string): BoxRect {
  if (!Array.isArray(raw) || raw.length !== 4 || !raw.every((v) => typeof v === "number")) {
    throw new Error(`${where}: bbox must be [x1,y1,x2,y2]`);
  }
  const [x1, y1, x2, y2] = raw as number[];
  if (![x1, y1, x2, y2].every(Number.isFinite)) {
    throw new Error(`${where}: non-finite box coordinate`);
  }
  if (x2 <= x1 || y2 <= y1) {
    throw new Error(`${where}: zero-area box [${x1},${y1},${x2},${y2}]`);
  }
  return { x1, y1, x2, y2 };
}

export function parseAnnotations(text: string, path: string): ScreenElements[] {
  const screens: ScreenElements[] = [];
  const seen = new Set<string>();
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line) continue;
    const where = `${path}:${i + 1}`;
    let obj: any;
    try {
      obj = JSON.parse(line);
    } catch (err) {
      throw new Error(`${where}: invalid JSON`);
    }
    const imageId = obj.image_id;
    if (typeof imageId !== "string" || !imageId) {
      throw new Error(`${where}: image_id must be a non-empty string`);
    }
    if (seen.has(imageId)) {
      throw new Error(`${where}: duplicate image_id ${JSON.stringify(imageId)}`);
    }
    seen.add(imageId);
    const width = obj.width;
    const height = obj.height;
    if (!Number.isInteger(width) || width <= 0 || !Number.isInteger(height) || height <= 0) {
      throw new Error(`${where}: width/height must be positive integers`);
    }
    if (!Array.isArray(obj.elements)) {
      throw new Error(`${where}: elements must be a list`);
    }
    const boxes = obj.elements.map((e: any, k: number) => {
      const box = parseBox(e?.bbox, `${where}: elements[${k}]`);
      if (box.x1 < 0 || box.y1 < 0 || box.x2 > width || box.y2 > height) {
        throw new Error(`${where}: elements[${k}]: box outside image bounds`);
      }
      return box;
    });
    screens.push({ imageId, width, height, boxes });
  }
  return screens;
}
