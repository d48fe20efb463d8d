/** 3D-to-2D mapping reconstruction from the coordinate image.
 *
 * The mapping PNG stores, at each used pixel, the (x, y, z) vertex that
 * pixel carries.  Which pixels are used is not taken from the sentinel
 * value (a legal vertex may equal it) but recomputed from the occupied
 * pixel count: fill ranks are contiguous, block-Z-curve for the morton
 * layout and scanline order for rowmajor.
 */

import type { PngImage } from "./png.js";

export const BLOCK = 8;
export const EMPTY = -1;

export type Layout = "morton" | "rowmajor";

/** Interleave the low 3 bits of u (even positions) and v (odd positions). */
function morton2Within8(u: number, v: number): number {
  let code = 0;
  for (let i = 0; i < 3; i++) {
    code |= ((u >> i) & 1) << (2 * i);
    code |= ((v >> i) & 1) << (2 * i + 1);
  }
  return code;
}

/** Fill rank of every pixel under the given layout, row-major image order. */
export function pixelRanks(width: number, height: number, layout: Layout): Int32Array {
  const ranks = new Int32Array(width * height);
  if (layout === "rowmajor") {
    for (let i = 0; i < ranks.length; i++) ranks[i] = i;
    return ranks;
  }
  if (layout !== "morton") {
    throw new Error(`unknown layout ${JSON.stringify(layout)}`);
  }
  const blocksPerRow = width / BLOCK;
  for (let v = 0; v < height; v++) {
    for (let u = 0; u < width; u++) {
      const block = Math.floor(v / BLOCK) * blocksPerRow + Math.floor(u / BLOCK);
      const inner = morton2Within8(u % BLOCK, v % BLOCK);
      ranks[v * width + u] = block * BLOCK * BLOCK + inner;
    }
  }
  return ranks;
}

/** Validity of each pixel given only the mapped-pixel count. */
export function blockPrefixMask(
  width: number,
  height: number,
  occupiedPixels: number,
  layout: Layout,
): Uint8Array {
  if (occupiedPixels < 0 || occupiedPixels > width * height) {
    throw new Error(`occupied_pixels ${occupiedPixels} outside [0, ${width * height}]`);
  }
  const ranks = pixelRanks(width, height, layout);
  const mask = new Uint8Array(width * height);
  for (let i = 0; i < mask.length; i++) {
    mask[i] = ranks[i] < occupiedPixels ? 1 : 0;
  }
  return mask;
}

export interface MappingTable {
  width: number;
  height: number;
  resolution: [number, number, number];
  /** Per pixel (row-major), flat vertex index x*ny*nz + y*nz + z, or EMPTY. */
  inverse: Int32Array;
  occupiedPixels: number;
}

/** Rebuild the pixel->vertex table from the decoded coordinate image. */
export function mappingFromImage(
  image: PngImage,
  mask: Uint8Array,
  resolution: [number, number, number],
): MappingTable {
  if (image.channels !== 3) {
    throw new Error("mapping image must be RGB");
  }
  const { width, height, pixels } = image;
  if (mask.length !== width * height) {
    throw new Error("validity mask size mismatch");
  }
  const [nx, ny, nz] = resolution;
  const inverse = new Int32Array(width * height).fill(EMPTY);
  const seen = new Uint8Array(nx * ny * nz);
  let occupiedPixels = 0;
  for (let p = 0; p < width * height; p++) {
    if (!mask[p]) continue;
    const x = pixels[3 * p];
    const y = pixels[3 * p + 1];
    const z = pixels[3 * p + 2];
    if (x >= nx || y >= ny || z >= nz) {
      throw new Error("mapping image contains coordinates outside the grid");
    }
    const vert = (x * ny + y) * nz + z;
    if (seen[vert]) {
      throw new Error("mapping image maps one vertex to multiple pixels");
    }
    seen[vert] = 1;
    inverse[p] = vert;
    occupiedPixels++;
  }
  return { width, height, resolution, inverse, occupiedPixels };
}
