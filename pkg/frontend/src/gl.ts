/** WebGL2 presentation layer.
 *
 * Owns the canvas context, the compiled program, and the per-group GPU
 * assets (four RGBA32F volume textures per frame, one R8 cell-mask texture,
 * one RGBA32F weight texture).  Assets are rebuilt exactly when the loaded
 * group changes and the old textures are deleted first, so the live texture
 * count is bounded no matter how many groups are visited.
 */

import type { OrbitState } from "./camera.js";
import { orbitCamera } from "./camera.js";
import type { TinyMlp } from "./mlp.js";
import type { CellMask } from "./render.js";
import type { Volume } from "./volume.js";
import { FRAG_SRC, MLP_TEX_HEIGHT, MLP_TEX_WIDTH, VERT_SRC, packMlpTexture } from "./shader.js";

/** Repack a vertex-major multi-channel volume into four RGBA texture slabs.
 *
 * 3D texture upload order is x fastest, then y, then z; the source volume is
 * z fastest.  Channel c of the volume lands in slab c >> 2, lane c & 3.
 */
export function packVolumeRgba(vol: Volume): [Float32Array, Float32Array, Float32Array, Float32Array] {
  const { nx, ny, nz, channels, data } = vol;
  const texels = nx * ny * nz;
  const slabs: [Float32Array, Float32Array, Float32Array, Float32Array] = [
    new Float32Array(texels * 4),
    new Float32Array(texels * 4),
    new Float32Array(texels * 4),
    new Float32Array(texels * 4),
  ];
  if (channels > 16) throw new Error("volume has more channels than four RGBA slabs hold");
  for (let z = 0; z < nz; z++) {
    for (let y = 0; y < ny; y++) {
      for (let x = 0; x < nx; x++) {
        const src = ((x * ny + y) * nz + z) * channels;
        const dst = ((z * ny + y) * nx + x) * 4;
        for (let c = 0; c < channels; c++) {
          slabs[c >> 2][dst + (c & 3)] = data[src + c];
        }
      }
    }
  }
  return slabs;
}

/** Cell-mask bits as 0/255 bytes in 3D-texture upload order. */
export function packMaskBytes(mask: CellMask): Uint8Array {
  const { nx, ny, nz, bits } = mask;
  const out = new Uint8Array(nx * ny * nz);
  for (let z = 0; z < nz; z++) {
    for (let y = 0; y < ny; y++) {
      for (let x = 0; x < nx; x++) {
        out[(z * ny + y) * nx + x] = bits[(x * ny + y) * nz + z] ? 255 : 0;
      }
    }
  }
  return out;
}

export interface GpuFrameVolume {
  volumes: [Float32Array, Float32Array, Float32Array, Float32Array];
}

export interface GpuGroupUpload {
  groupId: number;
  resolution: [number, number, number];
  frames: GpuFrameVolume[];
  maskBytes: Uint8Array;
}

interface GroupTextures {
  groupId: number;
  resolution: [number, number, number];
  frames: WebGLTexture[][];
  mask: WebGLTexture;
}

function compile(gl: WebGL2RenderingContext, type: number, src: string): WebGLShader {
  const shader = gl.createShader(type);
  if (!shader) throw new Error("createShader failed");
  gl.shaderSource(shader, src);
  gl.compileShader(shader);
  if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
    const log = gl.getShaderInfoLog(shader);
    gl.deleteShader(shader);
    throw new Error(`shader compile failed: ${log ?? "unknown"}`);
  }
  return shader;
}

export class GlRenderer {
  private readonly gl: WebGL2RenderingContext;
  private readonly program: WebGLProgram;
  private readonly uniforms = new Map<string, WebGLUniformLocation>();
  private mlpTexture: WebGLTexture | null = null;
  private group: GroupTextures | null = null;

  constructor(private readonly canvas: HTMLCanvasElement) {
    const gl = canvas.getContext("webgl2", { antialias: false, depth: false });
    if (!gl) throw new Error("WebGL2 is not available");
    this.gl = gl;
    const vs = compile(gl, gl.VERTEX_SHADER, VERT_SRC);
    const fs = compile(gl, gl.FRAGMENT_SHADER, FRAG_SRC);
    const program = gl.createProgram();
    if (!program) throw new Error("createProgram failed");
    gl.attachShader(program, vs);
    gl.attachShader(program, fs);
    gl.linkProgram(program);
    gl.deleteShader(vs);
    gl.deleteShader(fs);
    if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
      throw new Error(`program link failed: ${gl.getProgramInfoLog(program) ?? "unknown"}`);
    }
    this.program = program;
    gl.pixelStorei(gl.UNPACK_ALIGNMENT, 1);
  }

  private loc(name: string): WebGLUniformLocation {
    let u = this.uniforms.get(name);
    if (u === undefined) {
      const found = this.gl.getUniformLocation(this.program, name);
      if (found === null) throw new Error(`uniform ${name} not found`);
      this.uniforms.set(name, found);
      u = found;
    }
    return u;
  }

  setMlp(mlp: TinyMlp): void {
    const gl = this.gl;
    const inDim = mlp.w1.length / mlp.hidden;
    const data = packMlpTexture(mlp.hidden, mlp.w1, mlp.b1, mlp.w2, mlp.b2, inDim);
    if (this.mlpTexture) gl.deleteTexture(this.mlpTexture);
    const tex = gl.createTexture();
    if (!tex) throw new Error("createTexture failed");
    gl.bindTexture(gl.TEXTURE_2D, tex);
    gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_MIN_FILTER, gl.NEAREST);
    gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_MAG_FILTER, gl.NEAREST);
    gl.texImage2D(gl.TEXTURE_2D, 0, gl.RGBA32F, MLP_TEX_WIDTH, MLP_TEX_HEIGHT, 0, gl.RGBA, gl.FLOAT, data);
    this.mlpTexture = tex;
  }

  /** Replace all group textures; the previous group's are deleted first. */
  setGroup(upload: GpuGroupUpload): void {
    const gl = this.gl;
    this.releaseGroup();
    const [nx, ny, nz] = upload.resolution;
    const frames: WebGLTexture[][] = [];
    for (const frame of upload.frames) {
      const set: WebGLTexture[] = [];
      for (const slab of frame.volumes) {
        const tex = gl.createTexture();
        if (!tex) throw new Error("createTexture failed");
        gl.bindTexture(gl.TEXTURE_3D, tex);
        gl.texParameteri(gl.TEXTURE_3D, gl.TEXTURE_MIN_FILTER, gl.NEAREST);
        gl.texParameteri(gl.TEXTURE_3D, gl.TEXTURE_MAG_FILTER, gl.NEAREST);
        gl.texParameteri(gl.TEXTURE_3D, gl.TEXTURE_WRAP_S, gl.CLAMP_TO_EDGE);
        gl.texParameteri(gl.TEXTURE_3D, gl.TEXTURE_WRAP_T, gl.CLAMP_TO_EDGE);
        gl.texParameteri(gl.TEXTURE_3D, gl.TEXTURE_WRAP_R, gl.CLAMP_TO_EDGE);
        gl.texImage3D(gl.TEXTURE_3D, 0, gl.RGBA32F, nx, ny, nz, 0, gl.RGBA, gl.FLOAT, slab);
        set.push(tex);
      }
      frames.push(set);
    }
    const mask = gl.createTexture();
    if (!mask) throw new Error("createTexture failed");
    gl.bindTexture(gl.TEXTURE_3D, mask);
    gl.texParameteri(gl.TEXTURE_3D, gl.TEXTURE_MIN_FILTER, gl.NEAREST);
    gl.texParameteri(gl.TEXTURE_3D, gl.TEXTURE_MAG_FILTER, gl.NEAREST);
    gl.texImage3D(gl.TEXTURE_3D, 0, gl.R8, nx - 1, ny - 1, nz - 1, 0, gl.RED, gl.UNSIGNED_BYTE, upload.maskBytes);
    this.group = { groupId: upload.groupId, resolution: upload.resolution, frames, mask };
  }

  releaseGroup(): void {
    if (!this.group) return;
    for (const set of this.group.frames) {
      for (const tex of set) this.gl.deleteTexture(tex);
    }
    this.gl.deleteTexture(this.group.mask);
    this.group = null;
  }

  get loadedGroupId(): number | null {
    return this.group?.groupId ?? null;
  }

  /** Draw one frame of the loaded group under the given orbit camera. */
  draw(frameWithinGroup: number, orbit: OrbitState, background: "white" | "none"): void {
    const gl = this.gl;
    const group = this.group;
    if (!group || !this.mlpTexture) return;
    if (frameWithinGroup < 0 || frameWithinGroup >= group.frames.length) {
      throw new Error(`frame ${frameWithinGroup} outside group`);
    }
    const width = this.canvas.width;
    const height = this.canvas.height;
    const cam = orbitCamera(orbit, width, height);
    const m = cam.worldFromCamera;

    gl.viewport(0, 0, width, height);
    gl.useProgram(this.program);
    gl.uniform1f(this.loc("u_fx"), cam.fx);
    gl.uniform1f(this.loc("u_fy"), cam.fy);
    gl.uniform1f(this.loc("u_cx"), cam.cx);
    gl.uniform1f(this.loc("u_cy"), cam.cy);
    gl.uniform1f(this.loc("u_height"), height);
    // GLSL mat3 is column-major; columns are the camera basis vectors.
    gl.uniformMatrix3fv(this.loc("u_camRot"), false, [
      m[0], m[4], m[8],
      m[1], m[5], m[9],
      m[2], m[6], m[10],
    ]);
    gl.uniform3f(this.loc("u_eye"), m[3], m[7], m[11]);
    gl.uniform3i(this.loc("u_res"), group.resolution[0], group.resolution[1], group.resolution[2]);
    const minRes = Math.min(...group.resolution);
    gl.uniform1f(this.loc("u_step"), 0.5 / (minRes - 1));
    gl.uniform1i(this.loc("u_background"), background === "white" ? 1 : 0);

    const volumes = group.frames[frameWithinGroup];
    for (let i = 0; i < 4; i++) {
      gl.activeTexture(gl.TEXTURE0 + i);
      gl.bindTexture(gl.TEXTURE_3D, volumes[i]);
      gl.uniform1i(this.loc(`u_vol${i}`), i);
    }
    gl.activeTexture(gl.TEXTURE4);
    gl.bindTexture(gl.TEXTURE_3D, group.mask);
    gl.uniform1i(this.loc("u_mask"), 4);
    gl.activeTexture(gl.TEXTURE5);
    gl.bindTexture(gl.TEXTURE_2D, this.mlpTexture);
    gl.uniform1i(this.loc("u_mlp"), 5);

    gl.drawArrays(gl.TRIANGLES, 0, 3);
  }

  dispose(): void {
    this.releaseGroup();
    if (this.mlpTexture) {
      this.gl.deleteTexture(this.mlpTexture);
      this.mlpTexture = null;
    }
    this.gl.deleteProgram(this.program);
  }
}
