/** Minimal PNG reader for the mapping images (L8 / RGB8 / RGB16, no interlace). */

import { crc32, inflate } from "./bytes.js";

export class PngError extends Error {}

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

export interface PngImage {
  width: number;
  height: number;
  channels: 1 | 3;
  bitDepth: 8 | 16;
  /** Row-major, channel-interleaved samples (16-bit already widened). */
  pixels: Uint16Array;
}

function unfilter(
  scanlines: Uint8Array,
  h: number,
  w: number,
  channels: number,
  bytesPerSample: number,
): Uint8Array {
  const bpp = channels * bytesPerSample;
  const stride = w * bpp;
  if (scanlines.length !== h * (stride + 1)) {
    throw new PngError("decompressed size does not match dimensions");
  }
  const out = new Uint8Array(h * stride);
  let pos = 0;
  let prevStart = -1;
  for (let r = 0; r < h; r++) {
    const ftype = scanlines[pos++];
    const start = r * stride;
    out.set(scanlines.subarray(pos, pos + stride), start);
    pos += stride;
    switch (ftype) {
      case 0:
        break;
      case 1: // Sub
        for (let i = bpp; i < stride; i++) {
          out[start + i] = (out[start + i] + out[start + i - bpp]) & 0xff;
        }
        break;
      case 2: // Up
        if (prevStart >= 0) {
          for (let i = 0; i < stride; i++) {
            out[start + i] = (out[start + i] + out[prevStart + i]) & 0xff;
          }
        }
        break;
      case 3: // Average
        for (let i = 0; i < stride; i++) {
          const left = i >= bpp ? out[start + i - bpp] : 0;
          const up = prevStart >= 0 ? out[prevStart + i] : 0;
          out[start + i] = (out[start + i] + ((left + up) >> 1)) & 0xff;
        }
        break;
      case 4: // Paeth
        for (let i = 0; i < stride; i++) {
          const a = i >= bpp ? out[start + i - bpp] : 0;
          const b = prevStart >= 0 ? out[prevStart + i] : 0;
          const c = prevStart >= 0 && i >= bpp ? out[prevStart + i - bpp] : 0;
          const p = a + b - c;
          const pa = Math.abs(p - a);
          const pb = Math.abs(p - b);
          const pc = Math.abs(p - c);
          const pred = pa <= pb && pa <= pc ? a : pb <= pc ? b : c;
          out[start + i] = (out[start + i] + pred) & 0xff;
        }
        break;
      default:
        throw new PngError(`unknown filter type ${ftype}`);
    }
    prevStart = start;
  }
  return out;
}

export async function decodePng(data: Uint8Array): Promise<PngImage> {
  if (data.length < 8 || SIGNATURE.some((b, i) => data[i] !== b)) {
    throw new PngError("not a PNG file");
  }
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  let pos = 8;
  let width = 0;
  let height = 0;
  let bitDepth = 0;
  let colorType = -1;
  let sawIhdr = false;
  const idatParts: Uint8Array[] = [];
  while (pos < data.length) {
    if (pos + 12 > data.length) {
      throw new PngError("truncated chunk header");
    }
    const length = view.getUint32(pos, false);
    if (pos + 12 + length > data.length) {
      throw new PngError("truncated chunk payload");
    }
    const tagAndPayload = data.subarray(pos + 4, pos + 8 + length);
    const tag = String.fromCharCode(...data.subarray(pos + 4, pos + 8));
    const storedCrc = view.getUint32(pos + 8 + length, false);
    if (crc32(tagAndPayload) !== storedCrc) {
      throw new PngError(`chunk ${tag} checksum mismatch`);
    }
    const payload = data.subarray(pos + 8, pos + 8 + length);
    pos += 12 + length;
    if (tag === "IHDR") {
      const pv = new DataView(payload.buffer, payload.byteOffset, payload.byteLength);
      width = pv.getUint32(0, false);
      height = pv.getUint32(4, false);
      bitDepth = payload[8];
      colorType = payload[9];
      if (payload[12] !== 0) {
        throw new PngError("interlaced PNG not supported");
      }
      sawIhdr = true;
    } else if (tag === "IDAT") {
      idatParts.push(payload);
    } else if (tag === "IEND") {
      break;
    }
  }
  if (!sawIhdr) {
    throw new PngError("missing IHDR");
  }
  let channels: 1 | 3;
  if (colorType === 0 && bitDepth === 8) {
    channels = 1;
  } else if (colorType === 2 && (bitDepth === 8 || bitDepth === 16)) {
    channels = 3;
  } else {
    throw new PngError(`unsupported color type ${colorType} / depth ${bitDepth}`);
  }
  const idat = new Uint8Array(idatParts.reduce((n, p) => n + p.length, 0));
  let off = 0;
  for (const part of idatParts) {
    idat.set(part, off);
    off += part.length;
  }
  const raw = unfilter(await inflate(idat), height, width, channels, bitDepth / 8);
  const count = width * height * channels;
  const pixels = new Uint16Array(count);
  if (bitDepth === 16) {
    for (let i = 0; i < count; i++) {
      pixels[i] = (raw[2 * i] << 8) | raw[2 * i + 1]; // network byte order
    }
  } else {
    pixels.set(raw);
  }
  return { width, height, channels, bitDepth: bitDepth as 8 | 16, pixels };
}
