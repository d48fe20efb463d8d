/** CPU reference renderer: deferred volumetric ray marching.
 *
 * Rays step a fixed world-space lattice through the unit cube; at each
 * midpoint the expanded volume is sampled trilinearly, density and feature
 * are accumulated with transmittance weights w = T * (1 - exp(-sigma*delta)),
 * and the tiny MLP decodes the accumulated feature to RGB once per ray.
 * This is the same math the fragment shader runs and is what headless
 * tests compare against the CLI renderer.
 */

import type { Camera } from "./camera.js";
import { pixelRay } from "./camera.js";
import { FEATURE_DIM, type TinyMlp, evalMlp, positionalEncode } from "./mlp.js";
import { sampleVolume, type Volume } from "./volume.js";

export const STEP_SCALE = 0.5;

export type Background = "white" | "none";

export interface CellMask {
  nx: number;
  ny: number;
  nz: number;
  /** One byte per cell, x-major; 0 means provably empty. */
  bits: Uint8Array;
}

/** Parametric overlap of a ray with the unit cube; t1 < t0 means miss. */
export function rayBoxRange(
  origin: readonly [number, number, number],
  dir: readonly [number, number, number],
): [number, number] {
  let t0 = 0;
  let t1 = Infinity;
  for (let a = 0; a < 3; a++) {
    if (Math.abs(dir[a]) < 1e-15) {
      if (origin[a] < 0 || origin[a] > 1) return [0, -1];
      continue;
    }
    let lo = (0 - origin[a]) / dir[a];
    let hi = (1 - origin[a]) / dir[a];
    if (lo > hi) {
      const tmp = lo;
      lo = hi;
      hi = tmp;
    }
    if (lo > t0) t0 = lo;
    if (hi < t1) t1 = hi;
  }
  return [t0, t1];
}

export interface RenderOptions {
  step?: number;
  background?: Background;
  cellMask?: CellMask | null;
}

/** March one ray; accumulated feature goes into `featOut`, returns opacity. */
function marchRay(
  vol: Volume,
  mask: CellMask | null,
  origin: readonly [number, number, number],
  dir: readonly [number, number, number],
  step: number,
  featOut: Float64Array,
  sampleBuf: Float64Array,
): number {
  featOut.fill(0);
  const [t0, t1] = rayBoxRange(origin, dir);
  const total = Math.max(t1 - t0, 0);
  const count = Math.ceil(total / step - 1e-12);
  if (count <= 0) return 0;
  const { nx, ny, nz } = vol;
  let cum = 0; // accumulated sigma*delta
  let opacity = 0;
  for (let k = 0; k < count; k++) {
    const segStart = t0 + k * step;
    const segEnd = Math.min(segStart + step, t1);
    const delta = Math.max(segEnd - segStart, 0);
    if (delta === 0) continue;
    const tMid = 0.5 * (segStart + segEnd);
    const px = origin[0] + tMid * dir[0];
    const py = origin[1] + tMid * dir[1];
    const pz = origin[2] + tMid * dir[2];
    if (mask !== null) {
      const gx = Math.min(Math.max(px, 0), 1) * (nx - 1);
      const gy = Math.min(Math.max(py, 0), 1) * (ny - 1);
      const gz = Math.min(Math.max(pz, 0), 1) * (nz - 1);
      const ix = Math.max(Math.min(Math.trunc(gx), nx - 2), 0);
      const iy = Math.max(Math.min(Math.trunc(gy), ny - 2), 0);
      const iz = Math.max(Math.min(Math.trunc(gz), nz - 2), 0);
      if (mask.bits[(ix * mask.ny + iy) * mask.nz + iz] === 0) continue;
    }
    sampleVolume(vol, px, py, pz, sampleBuf);
    const sd = sampleBuf[0] * delta;
    if (sd === 0) continue;
    const w = Math.exp(-cum) * -Math.expm1(-sd);
    for (let c = 0; c < FEATURE_DIM; c++) {
      featOut[c] += w * sampleBuf[1 + c];
    }
    opacity += w;
    cum += sd;
  }
  return opacity;
}

/** Render a full frame; returns float RGB in [0,1], row-major (h*w*3). */
export function renderVolume(
  vol: Volume,
  mlp: TinyMlp,
  camera: Camera,
  opts: RenderOptions = {},
): Float64Array {
  const background = opts.background ?? "none";
  if (background !== "white" && background !== "none") {
    throw new Error(`unknown background mode ${JSON.stringify(background)}`);
  }
  const minRes = Math.min(vol.nx, vol.ny, vol.nz);
  const step = opts.step ?? STEP_SCALE / (minRes - 1);
  if (!(step > 0)) {
    throw new Error("step must be positive");
  }
  const mask = opts.cellMask ?? null;
  if (mask && (mask.nx !== vol.nx - 1 || mask.ny !== vol.ny - 1 || mask.nz !== vol.nz - 1)) {
    throw new Error("cell mask does not match the volume resolution");
  }
  const out = new Float64Array(camera.height * camera.width * 3);
  const feat = new Float64Array(FEATURE_DIM);
  const sampleBuf = new Float64Array(vol.channels);
  for (let v = 0; v < camera.height; v++) {
    for (let u = 0; u < camera.width; u++) {
      const ray = pixelRay(camera, u, v);
      const opac = marchRay(vol, mask, ray.origin, ray.dir, step, feat, sampleBuf);
      const o = (v * camera.width + u) * 3;
      if (background === "white" && opac === 0) {
        out[o] = out[o + 1] = out[o + 2] = 1;
        continue;
      }
      const enc = positionalEncode(ray.dir, mlp.freqs);
      const rgb = evalMlp(mlp, feat, enc);
      if (background === "white") {
        for (let c = 0; c < 3; c++) out[o + c] = opac * rgb[c] + (1 - opac);
      } else {
        for (let c = 0; c < 3; c++) out[o + c] = rgb[c];
      }
    }
  }
  return out;
}

/** Float RGB in [0,1] -> 8-bit, same rounding as the CLI PNG writer. */
export function toUint8(img: Float64Array): Uint8Array {
  const out = new Uint8Array(img.length);
  for (let i = 0; i < img.length; i++) {
    const v = Math.floor(img[i] * 255.0 + 0.5);
    out[i] = v < 0 ? 0 : v > 255 ? 255 : v;
  }
  return out;
}

/** Peak signal-to-noise ratio between two equal-size 8-bit images, in dB. */
export function psnrU8(a: Uint8Array, b: Uint8Array): number {
  if (a.length !== b.length || a.length === 0) {
    throw new Error("images must have the same nonzero size");
  }
  let sum = 0;
  for (let i = 0; i < a.length; i++) {
    const d = (a[i] - b[i]) / 255;
    sum += d * d;
  }
  const mse = sum / a.length;
  return mse === 0 ? Infinity : -10 * Math.log10(mse);
}
