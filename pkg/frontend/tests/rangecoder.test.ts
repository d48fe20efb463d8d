import { expect, test } from "vitest";

import { decompress, readVarint } from "../src/rangecoder.js";
import { readFixtureJson } from "./helpers.js";

interface RangecoderCase {
  data: number[];
  compressed: number[];
}

test("decompress matches encoder goldens byte for byte", async () => {
  const cases = (await readFixtureJson("rangecoder.json")) as RangecoderCase[];
  expect(cases.length).toBeGreaterThan(0);
  for (const c of cases) {
    const out = decompress(Uint8Array.from(c.compressed));
    expect([...out]).toEqual(c.data);
  }
});

test("varint decoding", () => {
  expect(readVarint(Uint8Array.from([0]), 0)).toEqual([0, 1]);
  expect(readVarint(Uint8Array.from([0x7f]), 0)).toEqual([127, 1]);
  expect(readVarint(Uint8Array.from([0x80, 0x01]), 0)).toEqual([128, 2]);
  expect(readVarint(Uint8Array.from([0xb9, 0x60]), 0)).toEqual([12345, 2]);
  // Offsets are respected.
  expect(readVarint(Uint8Array.from([9, 0x80, 0x02]), 1)).toEqual([256, 3]);
});

test("varint error cases", () => {
  expect(() => readVarint(new Uint8Array(0), 0)).toThrow(/truncated/);
  expect(() => readVarint(Uint8Array.from([0x80, 0x80]), 0)).toThrow(/truncated/);
  expect(() => readVarint(Uint8Array.from(Array(12).fill(0x80)), 0)).toThrow(/too long/);
});

test("decompress rejects an empty blob", () => {
  expect(() => decompress(new Uint8Array(0))).toThrow(/truncated/);
});
