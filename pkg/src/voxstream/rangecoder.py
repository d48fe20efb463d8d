"""Adaptive binary range coder (carry-counting byte renormalization).

Order-0 byte model: each byte is coded MSB-first through a 255-node
probability tree; probabilities adapt by exponential shift.  The coded
stream is self-terminating given the symbol count, which compress()
stores as a varint prefix.
"""

from __future__ import annotations

PROB_BITS = 11
PROB_INIT = 1 << (PROB_BITS - 1)
ADAPT_SHIFT = 5
TOP = 1 << 24
MASK32 = 0xFFFFFFFF


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK32
        self.cache = 0
        self.pending = 0
        self.started = False
        self.out = bytearray()

    def encode_bit(self, probs, ctx: int, bit: int) -> None:
        p = probs[ctx]
        bound = (self.range >> PROB_BITS) * p
        if bit:
            self.low += bound
            self.range -= bound
            probs[ctx] = p - (p >> ADAPT_SHIFT)
        else:
            self.range = bound
            probs[ctx] = p + (((1 << PROB_BITS) - p) >> ADAPT_SHIFT)
        while self.range < TOP:
            self._shift_low()
            self.range = (self.range << 8) & MASK32

    def _shift_low(self) -> None:
        if self.low < 0xFF000000 or self.low > MASK32:
            carry = self.low >> 32
            if self.started:
                self.out.append((self.cache + carry) & 0xFF)
            self.started = True
            while self.pending:
                self.out.append((0xFF + carry) & 0xFF)
                self.pending -= 1
            self.cache = (self.low >> 24) & 0xFF
        else:
            self.pending += 1
        self.low = (self.low << 8) & MASK32

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.range = MASK32
        self.code = 0
        for _ in range(4):
            self.code = ((self.code << 8) | self._next()) & MASK32

    def _next(self) -> int:
        b = self.data[self.pos] if self.pos < len(self.data) else 0
        self.pos += 1
        return b

    def decode_bit(self, probs, ctx: int) -> int:
        p = probs[ctx]
        bound = (self.range >> PROB_BITS) * p
        if self.code < bound:
            bit = 0
            self.range = bound
            probs[ctx] = p + (((1 << PROB_BITS) - p) >> ADAPT_SHIFT)
        else:
            bit = 1
            self.code -= bound
            self.range -= bound
            probs[ctx] = p - (p >> ADAPT_SHIFT)
        while self.range < TOP:
            self.code = ((self.code << 8) | self._next()) & MASK32
            self.range = (self.range << 8) & MASK32
        return bit


def _new_byte_model() -> list[int]:
    return [PROB_INIT] * 256


def _encode_byte(enc: RangeEncoder, probs, byte: int) -> None:
    ctx = 1
    for i in range(7, -1, -1):
        bit = (byte >> i) & 1
        enc.encode_bit(probs, ctx, bit)
        ctx = (ctx << 1) | bit


def _decode_byte(dec: RangeDecoder, probs) -> int:
    ctx = 1
    for _ in range(8):
        ctx = (ctx << 1) | dec.decode_bit(probs, ctx)
    return ctx & 0xFF


def write_varint(out: bytearray, value: int) -> None:
    if value < 0:
        raise ValueError("varint must be nonnegative")
    while True:
        b = value & 0x7F
        value >>= 7
        if value:
            out.append(b | 0x80)
        else:
            out.append(b)
            return


def read_varint(data, pos: int) -> tuple[int, int]:
    value = shift = 0
    while True:
        if pos >= len(data):
            raise ValueError("truncated varint")
        b = data[pos]
        pos += 1
        value |= (b & 0x7F) << shift
        if not (b & 0x80):
            return value, pos
        shift += 7
        if shift > 63:
            raise ValueError("varint too long")


def compress(data: bytes) -> bytes:
    header = bytearray()
    write_varint(header, len(data))
    enc = RangeEncoder()
    probs = _new_byte_model()
    encode_byte = _encode_byte
    for byte in data:
        encode_byte(enc, probs, byte)
    return bytes(header) + enc.finish()


def decompress(blob: bytes) -> bytes:
    length, pos = read_varint(blob, 0)
    dec = RangeDecoder(blob[pos:])
    probs = _new_byte_model()
    decode_byte = _decode_byte
    return bytes(decode_byte(dec, probs) for _ in range(length))
