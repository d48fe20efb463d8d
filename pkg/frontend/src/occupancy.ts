/** Occupancy pyramid parsing and the exact per-cell skip mask. */

import { ByteReader, unpackBitsLE } from "./bytes.js";

export interface OccupancyGrid {
  resolution: [number, number, number];
  /** One byte per vertex, x-major (x*ny*nz + y*nz + z). */
  bits: Uint8Array;
}

export interface OccupancyPyramid {
  /** levels[0] is full resolution; coarser levels halve each axis. */
  levels: OccupancyGrid[];
}

function unpackGrid(r: ByteReader): OccupancyGrid {
  r.magic("VRFO");
  const nx = r.u32();
  const ny = r.u32();
  const nz = r.u32();
  const nbits = nx * ny * nz;
  const bits = unpackBitsLE(r.bytes(Math.ceil(nbits / 8)), nbits);
  return { resolution: [nx, ny, nz], bits };
}

export function parsePyramid(data: Uint8Array): OccupancyPyramid {
  const r = new ByteReader(data);
  const count = r.u32();
  if (count < 1) {
    throw new Error("occupancy pyramid has no levels");
  }
  const levels: OccupancyGrid[] = [];
  for (let i = 0; i < count; i++) {
    levels.push(unpackGrid(r));
  }
  return { levels };
}

/** Per-cell OR of the 8 corner vertices, shape (nx-1, ny-1, nz-1).
 *
 * A trilinear field that is zero at unmarked vertices is exactly zero at
 * any point whose cell is unmarked here, so skipping such cells never
 * changes the rendered image.
 */
export function cellOccupancy(grid: OccupancyGrid): Uint8Array {
  const [nx, ny, nz] = grid.resolution;
  const cx = nx - 1;
  const cy = ny - 1;
  const cz = nz - 1;
  if (cx <= 0 || cy <= 0 || cz <= 0) {
    throw new Error(`grid ${grid.resolution} too small for cells`);
  }
  const out = new Uint8Array(cx * cy * cz);
  const b = grid.bits;
  for (let x = 0; x < cx; x++) {
    for (let y = 0; y < cy; y++) {
      for (let z = 0; z < cz; z++) {
        const v000 = (x * ny + y) * nz + z;
        const v100 = ((x + 1) * ny + y) * nz + z;
        const v010 = (x * ny + y + 1) * nz + z;
        const v110 = ((x + 1) * ny + y + 1) * nz + z;
        const occ =
          b[v000] | b[v100] | b[v010] | b[v110] |
          b[v000 + 1] | b[v100 + 1] | b[v010 + 1] | b[v110 + 1];
        out[(x * cy + y) * cz + z] = occ;
      }
    }
  }
  return out;
}

export function popcount(bits: Uint8Array): number {
  let n = 0;
  for (let i = 0; i < bits.length; i++) n += bits[i];
  return n;
}
