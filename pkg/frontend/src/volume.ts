/** Expanding a 2D feature image onto the voxel grid.
 *
 * Channel 0 of the expanded volume is the activated density
 * softplus(raw + DENSITY_SHIFT); channels 1.. are the appearance feature.
 * Vertices that carry no pixel are exactly zero, which is what makes the
 * per-cell occupancy skip exact.
 */

import type { QuantProfile } from "./codec.js";
import { dequantize } from "./codec.js";
import { EMPTY, type MappingTable } from "./mapping.js";

export const DENSITY_SHIFT = -10.0;

function softplus(x: number): number {
  // log(1 + e^x), stable for both signs
  return x > 0 ? x + Math.log1p(Math.exp(-x)) : Math.log1p(Math.exp(x));
}

export function activateDensity(raw: number): number {
  return softplus(raw + DENSITY_SHIFT);
}

export interface Volume {
  nx: number;
  ny: number;
  nz: number;
  channels: number;
  /** (nx*ny*nz, channels) float32, vertex-major. */
  data: Float32Array;
}

export function expandFrame(
  table: MappingTable,
  frame: Uint8Array,
  channels: number,
  profile: QuantProfile,
): Volume {
  const [nx, ny, nz] = table.resolution;
  if (frame.length !== table.width * table.height * channels) {
    throw new Error("frame size does not match the mapping image");
  }
  if (profile.mins.length !== channels) {
    throw new Error("quantization profile channel mismatch");
  }
  const data = new Float32Array(nx * ny * nz * channels);
  const inv = table.inverse;
  for (let p = 0; p < inv.length; p++) {
    const vert = inv[p];
    if (vert === EMPTY) continue;
    const src = p * channels;
    const dst = vert * channels;
    data[dst] = Math.fround(activateDensity(dequantize(frame[src], profile, 0)));
    for (let c = 1; c < channels; c++) {
      data[dst + c] = dequantize(frame[src + c], profile, c);
    }
  }
  return { nx, ny, nz, channels, data };
}

/** Trilinear sample of all channels at a continuous point in [0,1]^3. */
export function sampleVolume(
  vol: Volume,
  px: number,
  py: number,
  pz: number,
  out: Float64Array,
): void {
  const { nx, ny, nz, channels, data } = vol;
  const gx = Math.min(Math.max(px, 0), 1) * (nx - 1);
  const gy = Math.min(Math.max(py, 0), 1) * (ny - 1);
  const gz = Math.min(Math.max(pz, 0), 1) * (nz - 1);
  let ix = Math.min(Math.trunc(gx), nx - 2);
  let iy = Math.min(Math.trunc(gy), ny - 2);
  let iz = Math.min(Math.trunc(gz), nz - 2);
  ix = Math.max(ix, 0);
  iy = Math.max(iy, 0);
  iz = Math.max(iz, 0);
  const fx = gx - ix;
  const fy = gy - iy;
  const fz = gz - iz;
  out.fill(0);
  const base = (ix * ny + iy) * nz + iz;
  for (let dx = 0; dx <= 1; dx++) {
    const wx = dx ? fx : 1 - fx;
    for (let dy = 0; dy <= 1; dy++) {
      const wy = wx * (dy ? fy : 1 - fy);
      for (let dz = 0; dz <= 1; dz++) {
        const w = wy * (dz ? fz : 1 - fz);
        const idx = (base + (dx * ny + dy) * nz + dz) * channels;
        for (let c = 0; c < channels; c++) {
          out[c] += w * data[idx + c];
        }
      }
    }
  }
}
