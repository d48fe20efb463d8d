import { expect, test } from "vitest";

import {
  blockPrefixMask,
  EMPTY,
  mappingFromImage,
  pixelRanks,
} from "../src/mapping.js";
import type { PngImage } from "../src/png.js";
import { loadGroup, loadManifest } from "../src/loader.js";
import { bundleFetcher } from "./helpers.js";

test("morton ranks order pixels along the block-local Z curve", () => {
  const ranks = pixelRanks(16, 16, "morton");
  const at = (u: number, v: number) => ranks[v * 16 + u];
  expect(at(0, 0)).toBe(0);
  expect(at(1, 0)).toBe(1);
  expect(at(0, 1)).toBe(2);
  expect(at(1, 1)).toBe(3);
  expect(at(2, 0)).toBe(4);
  // First pixel of the second 8x8 block, scanning blocks row-major.
  expect(at(8, 0)).toBe(64);
  expect(at(0, 8)).toBe(128);
  // Every rank appears exactly once.
  expect(new Set(ranks).size).toBe(256);

  const row = pixelRanks(16, 16, "rowmajor");
  expect(row[5 * 16 + 7]).toBe(5 * 16 + 7);
});

test("block prefix mask marks exactly the first N ranks", () => {
  const mask = blockPrefixMask(16, 16, 88, "morton");
  const ranks = pixelRanks(16, 16, "morton");
  let count = 0;
  for (let i = 0; i < mask.length; i++) {
    expect(mask[i]).toBe(ranks[i] < 88 ? 1 : 0);
    count += mask[i];
  }
  expect(count).toBe(88);
  expect(() => blockPrefixMask(16, 16, 257, "morton")).toThrow(/outside/);
});

test("bundle mapping is a bijection onto the occupied vertex set", async () => {
  const fetcher = bundleFetcher();
  const manifest = await loadManifest(fetcher);
  for (const entry of manifest.groups) {
    const assets = await loadGroup(fetcher, manifest, entry.group_id);
    const table = assets.table;
    expect(table.occupiedPixels).toBe(entry.mapping.occupied_pixels);
    const verts = new Set<number>();
    let mapped = 0;
    for (const v of table.inverse) {
      if (v === EMPTY) continue;
      mapped++;
      verts.add(v);
      expect(v).toBeGreaterThanOrEqual(0);
      expect(v).toBeLessThan(16 * 16 * 16);
    }
    expect(mapped).toBe(entry.mapping.occupied_pixels);
    expect(verts.size).toBe(mapped); // injective
  }
});

function syntheticImage(pixels: number[]): PngImage {
  return {
    width: 8,
    height: 8,
    channels: 3,
    bitDepth: 8,
    pixels: Uint16Array.from(pixels.concat(Array(8 * 8 * 3 - pixels.length).fill(0))),
  };
}

test("defective mapping images are rejected", () => {
  const res: [number, number, number] = [8, 8, 8];
  // Two valid pixels claiming the same vertex.
  const dup = syntheticImage([1, 2, 3, 1, 2, 3]);
  const mask2 = blockPrefixMask(8, 8, 2, "morton");
  expect(() => mappingFromImage(dup, mask2, res)).toThrow(/multiple pixels/);

  // A coordinate outside the grid.
  const oob = syntheticImage([9, 0, 0]);
  const mask1 = blockPrefixMask(8, 8, 1, "morton");
  expect(() => mappingFromImage(oob, mask1, res)).toThrow(/outside the grid/);

  // Grayscale input is not a mapping image.
  const gray: PngImage = {
    width: 8,
    height: 8,
    channels: 1,
    bitDepth: 8,
    pixels: new Uint16Array(64),
  };
  expect(() => mappingFromImage(gray, mask1, res)).toThrow(/RGB/);
});
