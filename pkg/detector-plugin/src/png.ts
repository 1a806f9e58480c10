import { PNG } from "pngjs";

export interface RgbImage {
  width: number;
  height: number;
  /** Row-major RGB triples, 3 bytes per pixel. */
  data: Uint8Array;
}

/** Decode a PNG buffer to packed RGB, dropping any alpha channel. */
export function decodePng(buffer: Buffer): RgbImage {
  const png = PNG.sync.read(buffer);
  const { width, height } = png;
  const rgb = new Uint8Array(width * height * 3);
  for (let i = 0; i < width * height; i++) {
    rgb[i * 3] = png.data[i * 4];
    rgb[i * 3 + 1] = png.data[i * 4 + 1];
    rgb[i * 3 + 2] = png.data[i * 4 + 2];
  }
  return { width, height, data: rgb };
}
