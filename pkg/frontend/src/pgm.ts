/** Binary PGM (P5) parser for ultrasound frames received over the socket. */

export interface PgmImage {
  width: number;
  height: number;
  maxval: number;
  /** Row-major grayscale samples, one byte per pixel. */
  pixels: Uint8Array;
}

const WHITESPACE = new Set([0x20, 0x09, 0x0a, 0x0d, 0x0b, 0x0c]);

export function parsePgm(data: Uint8Array): PgmImage {
  const fields: string[] = [];
  let pos = 0;
  while (fields.length < 4) {
    while (pos < data.length && WHITESPACE.has(data[pos])) pos++;
    if (pos >= data.length) throw new Error("truncated PGM header");
    if (data[pos] === 0x23) {
      // comment runs to end of line
      while (pos < data.length && data[pos] !== 0x0a) pos++;
      continue;
    }
    const start = pos;
    while (pos < data.length && !WHITESPACE.has(data[pos])) pos++;
    fields.push(String.fromCharCode(...data.subarray(start, pos)));
  }
  if (fields[0] !== "P5") throw new Error(`not a binary PGM: ${fields[0]}`);
  const width = parseInt(fields[1], 10);
  const height = parseInt(fields[2], 10);
  const maxval = parseInt(fields[3], 10);
  if (!(width > 0 && height > 0 && maxval > 0 && maxval < 256)) {
    throw new Error("bad PGM dimensions");
  }
  pos += 1; // single whitespace byte after maxval
  const n = width * height;
  if (data.length < pos + n) throw new Error("truncated PGM body");
  return { width, height, maxval, pixels: data.subarray(pos, pos + n) };
}

/** Expand grayscale samples into RGBA for a canvas ImageData buffer. */
export function toRgba(img: PgmImage): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(new ArrayBuffer(img.width * img.height * 4));
  const scale = 255 / img.maxval;
  for (let i = 0; i < img.pixels.length; i++) {
    const g = Math.round(img.pixels[i] * scale);
    out[4 * i] = g;
    out[4 * i + 1] = g;
    out[4 * i + 2] = g;
    out[4 * i + 3] = 255;
  }
  return out;
}
