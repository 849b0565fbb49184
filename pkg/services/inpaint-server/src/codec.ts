import { PNG } from "pngjs";

export interface DecodedImage {
  width: number;
  height: number;
  /** RGB, row-major, values in [0, 255]. */
  rgb: Uint8Array;
}

export function decodePngBase64(b64: string): DecodedImage {
  const buf = Buffer.from(b64, "base64");
  const png = PNG.sync.read(buf);
  const n = png.width * png.height;
  const rgb = new Uint8Array(n * 3);
  for (let i = 0; i < n; i++) {
    rgb[i * 3] = png.data[i * 4];
    rgb[i * 3 + 1] = png.data[i * 4 + 1];
    rgb[i * 3 + 2] = png.data[i * 4 + 2];
  }
  return { width: png.width, height: png.height, rgb };
}

export function encodePngBase64(img: DecodedImage): string {
  const png = new PNG({ width: img.width, height: img.height });
  const n = img.width * img.height;
  for (let i = 0; i < n; i++) {
    png.data[i * 4] = img.rgb[i * 3];
    png.data[i * 4 + 1] = img.rgb[i * 3 + 1];
    png.data[i * 4 + 2] = img.rgb[i * 3 + 2];
    png.data[i * 4 + 3] = 255;
  }
  return PNG.sync.write(png).toString("base64");
}

/** A mask pixel is "fill" when any channel is nonzero. */
export function toMask(img: DecodedImage): Uint8Array {
  const n = img.width * img.height;
  const mask = new Uint8Array(n);
  for (let i = 0; i < n; i++) {
    mask[i] =
      img.rgb[i * 3] || img.rgb[i * 3 + 1] || img.rgb[i * 3 + 2] ? 1 : 0;
  }
  return mask;
}
