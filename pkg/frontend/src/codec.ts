/** Group-of-frames feature-video chunks and the sequence stream container.
 *
 * A "GOFC" chunk holds one group: a lossy path (per-channel 8x8 block DCT of
 * the uint8 plane, zigzag run-length tokens, range-coded) with the inter
 * frames coding residuals against the previous reconstruction, or a lossless
 * path (raw key plane, mod-256 deltas after).  A "VRFS" stream file holds
 * one or more chunks behind a seekable index.
 */

import { ByteReader, crc32 } from "./bytes.js";
import { decompress, readVarint } from "./rangecoder.js";

export const BLOCK = 8;

// Classic 8x8 luminance quantization steps; the quantizer scales them.
// Row-major, matching the encoder.
const BASE_QUANT = [
  16, 11, 10, 16, 24, 40, 51, 61,
  12, 12, 14, 19, 26, 58, 60, 55,
  14, 13, 16, 24, 40, 57, 69, 56,
  14, 17, 22, 29, 51, 87, 80, 62,
  18, 22, 37, 56, 68, 109, 103, 77,
  24, 35, 55, 64, 81, 104, 113, 92,
  49, 64, 78, 87, 103, 121, 120, 101,
  72, 92, 95, 98, 112, 100, 103, 99,
];

function zigzagOrder(): Int32Array {
  const order: Array<[number, number]> = [];
  for (let s = 0; s < 2 * BLOCK - 1; s++) {
    const diag: Array<[number, number]> = [];
    for (let i = Math.min(s, BLOCK - 1); i >= 0; i--) {
      if (s - i < BLOCK) diag.push([i, s - i]);
    }
    if (s % 2) diag.reverse();
    order.push(...diag);
  }
  return Int32Array.from(order.map(([i, j]) => i * BLOCK + j));
}

const ZIGZAG = zigzagOrder();

export class CodecError extends Error {}

// Orthonormal inverse DCT-II basis: rec[n] = sum_k basis[k][n] * coef[k].
const IDCT_BASIS = (() => {
  const b = new Float64Array(BLOCK * BLOCK);
  for (let k = 0; k < BLOCK; k++) {
    const scale = k === 0 ? Math.sqrt(1 / BLOCK) : Math.sqrt(2 / BLOCK);
    for (let n = 0; n < BLOCK; n++) {
      b[k * BLOCK + n] = scale * Math.cos((Math.PI * (2 * n + 1) * k) / (2 * BLOCK));
    }
  }
  return b;
})();

/** In-place 2D inverse DCT of one 8x8 block (coefficients row-major). */
function idct8x8(block: Float64Array): void {
  const tmp = new Float64Array(BLOCK * BLOCK);
  // columns first: tmp[n][j] = sum_k basis[k][n] * block[k][j]
  for (let j = 0; j < BLOCK; j++) {
    for (let n = 0; n < BLOCK; n++) {
      let acc = 0;
      for (let k = 0; k < BLOCK; k++) {
        acc += IDCT_BASIS[k * BLOCK + n] * block[k * BLOCK + j];
      }
      tmp[n * BLOCK + j] = acc;
    }
  }
  // then rows: out[i][n] = sum_k basis[k][n] * tmp[i][k]
  for (let i = 0; i < BLOCK; i++) {
    for (let n = 0; n < BLOCK; n++) {
      let acc = 0;
      for (let k = 0; k < BLOCK; k++) {
        acc += IDCT_BASIS[k * BLOCK + n] * tmp[i * BLOCK + k];
      }
      block[i * BLOCK + n] = acc;
    }
  }
}

function unzigzagInt(u: number): number {
  return (u % 2 === 1 ? -((u + 1) / 2) : u / 2);
}

/** Run-length zigzag tokens for `numBlocks` blocks -> coefficient rows. */
function decodeTokens(
  data: Uint8Array,
  pos: number,
  numBlocks: number,
): [Float64Array[], number] {
  const blocks: Float64Array[] = [];
  for (let b = 0; b < numBlocks; b++) {
    const coef = new Float64Array(BLOCK * BLOCK);
    let cur = 0;
    while (cur < BLOCK * BLOCK) {
      if (pos >= data.length) {
        throw new CodecError("truncated token stream");
      }
      const tok = data[pos++];
      if (tok === 0) break;
      cur += tok - 1;
      if (cur >= BLOCK * BLOCK) {
        throw new CodecError("token run past block end");
      }
      const [level, next] = readVarint(data, pos);
      pos = next;
      coef[ZIGZAG[cur]] = unzigzagInt(level);
      cur += 1;
    }
    blocks.push(coef);
  }
  return [blocks, pos];
}

/** One plane from its token stream: dequantize, inverse DCT, reassemble. */
function reconstructPlane(
  blocks: Float64Array[],
  quantizer: number,
  h: number,
  w: number,
): Float64Array {
  const out = new Float64Array(h * w);
  const blocksPerRow = w / BLOCK;
  for (let b = 0; b < blocks.length; b++) {
    const coef = blocks[b];
    for (let i = 0; i < BLOCK * BLOCK; i++) {
      coef[i] *= BASE_QUANT[i] * quantizer;
    }
    idct8x8(coef);
    const by = Math.floor(b / blocksPerRow) * BLOCK;
    const bx = (b % blocksPerRow) * BLOCK;
    for (let i = 0; i < BLOCK; i++) {
      for (let j = 0; j < BLOCK; j++) {
        out[(by + i) * w + bx + j] = coef[i * BLOCK + j];
      }
    }
  }
  return out;
}

function clampU8(v: number): number {
  const r = Math.floor(v + 0.5);
  return r < 0 ? 0 : r > 255 ? 255 : r;
}

/** Lossy frame: per channel, IDCT(tokens) + (128 or previous plane). */
function decodeLossyFrame(
  tokens: Uint8Array,
  h: number,
  w: number,
  c: number,
  quantizer: number,
  prev: Uint8Array | null,
): Uint8Array {
  const nb = (h / BLOCK) * (w / BLOCK);
  const out = new Uint8Array(h * w * c);
  let pos = 0;
  for (let ch = 0; ch < c; ch++) {
    const [blocks, next] = decodeTokens(tokens, pos, nb);
    pos = next;
    const rec = reconstructPlane(blocks, quantizer, h, w);
    for (let p = 0; p < h * w; p++) {
      const base = prev === null ? 128.0 : prev[p * c + ch];
      out[p * c + ch] = clampU8(rec[p] + base);
    }
  }
  if (pos !== tokens.length) {
    throw new CodecError("trailing bytes after plane tokens");
  }
  return out;
}

/** Lossless frame: plane-major raw bytes, mod-256 delta for inter frames. */
function decodeLosslessFrame(
  data: Uint8Array,
  h: number,
  w: number,
  c: number,
  prev: Uint8Array | null,
): Uint8Array {
  if (data.length !== h * w * c) {
    throw new CodecError("lossless frame has wrong size");
  }
  const out = new Uint8Array(h * w * c);
  for (let ch = 0; ch < c; ch++) {
    for (let p = 0; p < h * w; p++) {
      const v = data[ch * h * w + p];
      out[p * c + ch] =
        prev === null ? v : (prev[p * c + ch] + v) & 0xff;
    }
  }
  return out;
}

export interface DecodedGof {
  groupId: number;
  frameStart: number;
  quantizer: number;
  lossless: boolean;
  width: number;
  height: number;
  channels: number;
  /** Per frame, (h*w*c) uint8s in pixel-major channel-interleaved order. */
  frames: Uint8Array[];
}

export function decodeGof(payload: Uint8Array): DecodedGof {
  try {
    return decodeGofInner(payload);
  } catch (err) {
    if (err instanceof CodecError) throw err;
    // Reader/varint underflows are malformed-chunk errors too.
    throw new CodecError(err instanceof Error ? err.message : String(err));
  }
}

function decodeGofInner(payload: Uint8Array): DecodedGof {
  const r = new ByteReader(payload);
  try {
    r.magic("GOFC");
  } catch {
    throw new CodecError("not a group chunk");
  }
  const version = r.u16();
  const mode = r.u8();
  r.u8(); // pad
  const quantizer = r.u16();
  const groupId = r.i32();
  const frameStart = r.i32();
  const frameCount = r.u16();
  const width = r.u32();
  const height = r.u32();
  const channels = r.u16();
  if (version !== 1) {
    throw new CodecError(`unsupported chunk version ${version}`);
  }
  const sizes: number[] = [];
  for (let i = 0; i < frameCount; i++) sizes.push(r.u32());
  const frames: Uint8Array[] = [];
  let prev: Uint8Array | null = null;
  for (const size of sizes) {
    const raw = decompress(r.bytes(size));
    const frame: Uint8Array =
      mode === 1
        ? decodeLosslessFrame(raw, height, width, channels, prev)
        : decodeLossyFrame(raw, height, width, channels, quantizer, prev);
    frames.push(frame);
    prev = frame;
  }
  if (r.remaining !== 0) {
    throw new CodecError("chunk has trailing bytes");
  }
  return {
    groupId,
    frameStart,
    quantizer,
    lossless: mode === 1,
    width,
    height,
    channels,
    frames,
  };
}

export interface QuantProfile {
  mins: Float64Array;
  maxs: Float64Array;
}

export function profileFromJson(d: {
  bit_depth?: number;
  mins: number[];
  maxs: number[];
}): QuantProfile {
  if ((d.bit_depth ?? 8) !== 8) {
    throw new CodecError("only 8-bit profiles supported");
  }
  if (d.mins.length !== d.maxs.length) {
    throw new CodecError("profile mins/maxs length mismatch");
  }
  return { mins: Float64Array.from(d.mins), maxs: Float64Array.from(d.maxs) };
}

/** uint8 -> float32 value for one channel. */
export function dequantize(q: number, profile: QuantProfile, ch: number): number {
  const t = q / 255.0;
  return Math.fround(profile.mins[ch] + t * (profile.maxs[ch] - profile.mins[ch]));
}

export interface StreamChunkEntry {
  groupId: number;
  frameStart: number;
  frameCount: number;
  offset: number;
  size: number;
  crc32: number;
}

export interface StreamInfo {
  width: number;
  height: number;
  channels: number;
  lossless: boolean;
  quantizer: number;
  profile: QuantProfile;
  chunks: StreamChunkEntry[];
}

/** Parse the header + chunk index of a VRFS stream file. */
export function readStreamInfo(data: Uint8Array): StreamInfo {
  const r = new ByteReader(data);
  try {
    r.magic("VRFS");
  } catch {
    throw new CodecError("not a feature stream");
  }
  const version = r.u16();
  const channels = r.u16();
  const width = r.u32();
  const height = r.u32();
  const mode = r.u8();
  r.u8(); // pad
  const quantizer = r.u16();
  const count = r.u32();
  if (version !== 1) {
    throw new CodecError(`unsupported stream version ${version}`);
  }
  const mins = new Float64Array(channels);
  const maxs = new Float64Array(channels);
  for (let i = 0; i < channels; i++) mins[i] = r.f32();
  for (let i = 0; i < channels; i++) maxs[i] = r.f32();
  const chunks: StreamChunkEntry[] = [];
  for (let i = 0; i < count; i++) {
    const groupId = r.i32();
    const frameStart = r.i32();
    const frameCount = r.u16();
    r.u16(); // pad
    const offset = r.u64();
    const size = r.u64();
    const crc = r.u32();
    chunks.push({ groupId, frameStart, frameCount, offset, size, crc32: crc });
  }
  return {
    width,
    height,
    channels,
    lossless: mode === 1,
    quantizer,
    profile: { mins, maxs },
    chunks,
  };
}

/** Integrity check for a group chunk fetched by byte range. */
export function verifyChunk(payload: Uint8Array, expectedCrc: number): void {
  if (crc32(payload) !== (expectedCrc >>> 0)) {
    throw new CodecError("group chunk checksum mismatch");
  }
}
