/** Decoder for the adaptive binary range coder used by group chunks.
 *
 * Each byte is coded MSB-first through a 255-node probability tree with
 * 11-bit probabilities adapting by exponential shift; the compressed blob
 * is a varint symbol count followed by the coded stream.
 */

const PROB_BITS = 11;
const PROB_INIT = 1 << (PROB_BITS - 1);
const ADAPT_SHIFT = 5;
const TOP = 1 << 24;

export function readVarint(data: Uint8Array, pos: number): [number, number] {
  let value = 0;
  let shift = 0;
  for (;;) {
    if (pos >= data.length) {
      throw new Error("truncated varint");
    }
    const b = data[pos++];
    value += (b & 0x7f) * 2 ** shift;
    if ((b & 0x80) === 0) {
      if (!Number.isSafeInteger(value)) {
        throw new Error("varint exceeds safe integer range");
      }
      return [value, pos];
    }
    shift += 7;
    if (shift > 63) {
      throw new Error("varint too long");
    }
  }
}

class RangeDecoder {
  private range = 0xffffffff;
  private code = 0;
  private pos = 0;

  constructor(private readonly data: Uint8Array) {
    for (let i = 0; i < 4; i++) {
      this.code = ((this.code << 8) | this.next()) >>> 0;
    }
  }

  private next(): number {
    return this.pos < this.data.length ? this.data[this.pos++] : 0;
  }

  decodeBit(probs: Uint16Array, ctx: number): number {
    const p = probs[ctx];
    // range * p / 2^11 without overflowing 32-bit intermediates
    const bound = (this.range >>> PROB_BITS) * p;
    let bit: number;
    if (this.code >>> 0 < bound) {
      bit = 0;
      this.range = bound;
      probs[ctx] = p + (((1 << PROB_BITS) - p) >> ADAPT_SHIFT);
    } else {
      bit = 1;
      this.code = (this.code - bound) >>> 0;
      this.range = this.range - bound;
      probs[ctx] = p - (p >> ADAPT_SHIFT);
    }
    while (this.range >>> 0 < TOP) {
      this.code = ((this.code << 8) | this.next()) >>> 0;
      this.range = (this.range << 8) >>> 0;
    }
    return bit;
  }
}

function newByteModel(): Uint16Array {
  return new Uint16Array(256).fill(PROB_INIT);
}

export function decompress(blob: Uint8Array): Uint8Array {
  const [length, pos] = readVarint(blob, 0);
  const dec = new RangeDecoder(blob.subarray(pos));
  const probs = newByteModel();
  const out = new Uint8Array(length);
  for (let i = 0; i < length; i++) {
    let ctx = 1;
    for (let b = 0; b < 8; b++) {
      ctx = (ctx << 1) | dec.decodeBit(probs, ctx);
    }
    out[i] = ctx & 0xff;
  }
  return out;
}
