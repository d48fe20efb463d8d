/** GLSL ES 3.00 sources for the volumetric renderer.
 *
 * The fragment shader mirrors the CPU reference march step for step: same
 * slab clipping, same cell-mask skip, same clamped trilinear interpolation,
 * same transmittance weights, and the same tiny MLP decode.  The 13 volume
 * channels (density + 12 features) live in four RGBA 3D textures; the MLP
 * weights live in one small RGBA32F 2D texture laid out as
 *   rows 0..15:  w1 row k in texels 0..9 (texel 9 .w holds b1[k])
 *   rows 16..18: w2 row j in texels 0..3, b2[j] in texel 4 .x
 * so a hidden unit is ten dot products against the input packed into ten
 * vec4s whose final lane is the constant 1.
 */

export const MLP_TEX_WIDTH = 10;
export const MLP_TEX_HEIGHT = 19;

export const VERT_SRC = `#version 300 es
void main() {
  // Fullscreen triangle from gl_VertexID, no buffers needed.
  vec2 p = vec2((gl_VertexID << 1) & 2, gl_VertexID & 2);
  gl_Position = vec4(p * 2.0 - 1.0, 0.0, 1.0);
}
`;

export const FRAG_SRC = `#version 300 es
precision highp float;
precision highp int;
precision highp sampler3D;
precision highp sampler2D;

uniform float u_fx;
uniform float u_fy;
uniform float u_cx;
uniform float u_cy;
uniform float u_height;
uniform mat3 u_camRot;    // world-from-camera rotation
uniform vec3 u_eye;
uniform ivec3 u_res;      // vertex grid resolution
uniform float u_step;
uniform int u_background; // 0 = none, 1 = white
uniform sampler3D u_vol0; // density, f0, f1, f2
uniform sampler3D u_vol1; // f3..f6
uniform sampler3D u_vol2; // f7..f10
uniform sampler3D u_vol3; // f11, unused x3
uniform sampler3D u_mask; // cell occupancy, (res - 1) cells per axis
uniform sampler2D u_mlp;

out vec4 o_color;

// Entry/exit of the unit cube; t0 clamped to 0, hit=false when empty.
bool slab(vec3 o, vec3 d, out float t0, out float t1) {
  t0 = 0.0;
  t1 = 1e30;
  for (int a = 0; a < 3; a++) {
    if (abs(d[a]) < 1e-15) {
      if (o[a] < 0.0 || o[a] > 1.0) return false;
      continue;
    }
    float ta = (0.0 - o[a]) / d[a];
    float tb = (1.0 - o[a]) / d[a];
    float lo = min(ta, tb);
    float hi = max(ta, tb);
    t0 = max(t0, lo);
    t1 = min(t1, hi);
  }
  return t1 > t0;
}

vec4 tri(sampler3D t, ivec3 i0, vec3 w) {
  vec4 c000 = texelFetch(t, i0, 0);
  vec4 c100 = texelFetch(t, i0 + ivec3(1, 0, 0), 0);
  vec4 c010 = texelFetch(t, i0 + ivec3(0, 1, 0), 0);
  vec4 c110 = texelFetch(t, i0 + ivec3(1, 1, 0), 0);
  vec4 c001 = texelFetch(t, i0 + ivec3(0, 0, 1), 0);
  vec4 c101 = texelFetch(t, i0 + ivec3(1, 0, 1), 0);
  vec4 c011 = texelFetch(t, i0 + ivec3(0, 1, 1), 0);
  vec4 c111 = texelFetch(t, i0 + ivec3(1, 1, 1), 0);
  vec4 c00 = mix(c000, c100, w.x);
  vec4 c10 = mix(c010, c110, w.x);
  vec4 c01 = mix(c001, c101, w.x);
  vec4 c11 = mix(c011, c111, w.x);
  return mix(mix(c00, c10, w.y), mix(c01, c11, w.y), w.z);
}

void main() {
  float xc = (gl_FragCoord.x - u_cx) / u_fx;
  float yc = (u_height - gl_FragCoord.y - u_cy) / u_fy;
  vec3 dir = normalize(u_camRot * vec3(xc, yc, 1.0));

  float t0;
  float t1;
  vec3 bg = u_background == 1 ? vec3(1.0) : vec3(0.0);
  if (!slab(u_eye, dir, t0, t1)) {
    o_color = vec4(bg, 1.0);
    return;
  }

  int count = int(ceil((t1 - t0) / u_step - 1e-12));
  vec3 scale = vec3(u_res - 1);
  float cum = 0.0;
  float opac = 0.0;
  float feat[12];
  for (int i = 0; i < 12; i++) feat[i] = 0.0;

  float segStart = t0;
  for (int s = 0; s < 8192; s++) {
    if (s >= count) break;
    float segEnd = min(segStart + u_step, t1);
    float delta = max(segEnd - segStart, 0.0);
    float tMid = 0.5 * (segStart + segEnd);
    segStart = segEnd;
    if (delta == 0.0) continue;

    vec3 p = u_eye + tMid * dir;
    vec3 g = clamp(p, 0.0, 1.0) * scale;
    ivec3 i0 = clamp(ivec3(g), ivec3(0), u_res - 2);
    if (texelFetch(u_mask, i0, 0).r == 0.0) continue;
    vec3 w = g - vec3(i0);

    vec4 s0 = tri(u_vol0, i0, w);
    float sd = s0.x * delta;
    if (sd == 0.0) continue;
    vec4 s1 = tri(u_vol1, i0, w);
    vec4 s2 = tri(u_vol2, i0, w);
    vec4 s3 = tri(u_vol3, i0, w);
    float wgt = exp(-cum) * (1.0 - exp(-sd));
    feat[0] += wgt * s0.y;
    feat[1] += wgt * s0.z;
    feat[2] += wgt * s0.w;
    feat[3] += wgt * s1.x;
    feat[4] += wgt * s1.y;
    feat[5] += wgt * s1.z;
    feat[6] += wgt * s1.w;
    feat[7] += wgt * s2.x;
    feat[8] += wgt * s2.y;
    feat[9] += wgt * s2.z;
    feat[10] += wgt * s2.w;
    feat[11] += wgt * s3.x;
    opac += wgt;
    cum += sd;
  }

  if (u_background == 1 && opac == 0.0) {
    o_color = vec4(1.0);
    return;
  }

  // Input vector: 12 features, 27 direction-encoding values, then 1.
  vec4 xin[10];
  xin[0] = vec4(feat[0], feat[1], feat[2], feat[3]);
  xin[1] = vec4(feat[4], feat[5], feat[6], feat[7]);
  xin[2] = vec4(feat[8], feat[9], feat[10], feat[11]);
  float enc[27];
  enc[0] = dir.x;
  enc[1] = dir.y;
  enc[2] = dir.z;
  for (int f = 0; f < 4; f++) {
    vec3 a = exp2(float(f)) * 3.14159265358979323846 * dir;
    enc[3 + 6 * f + 0] = sin(a.x);
    enc[3 + 6 * f + 1] = sin(a.y);
    enc[3 + 6 * f + 2] = sin(a.z);
    enc[3 + 6 * f + 3] = cos(a.x);
    enc[3 + 6 * f + 4] = cos(a.y);
    enc[3 + 6 * f + 5] = cos(a.z);
  }
  for (int t = 3; t < 10; t++) {
    for (int c = 0; c < 4; c++) {
      int k = t * 4 + c - 12;
      xin[t][c] = k < 27 ? enc[k] : 1.0;
    }
  }

  vec4 hid[4];
  for (int k = 0; k < 16; k++) {
    float acc = 0.0;
    for (int t = 0; t < 10; t++) {
      acc += dot(xin[t], texelFetch(u_mlp, ivec2(t, k), 0));
    }
    hid[k / 4][k % 4] = max(acc, 0.0);
  }

  vec3 rgb;
  for (int j = 0; j < 3; j++) {
    float acc = texelFetch(u_mlp, ivec2(4, 16 + j), 0).x;
    for (int t = 0; t < 4; t++) {
      acc += dot(hid[t], texelFetch(u_mlp, ivec2(t, 16 + j), 0));
    }
    rgb[j] = 1.0 / (1.0 + exp(-acc));
  }

  o_color = vec4(opac * rgb + (1.0 - opac) * bg, 1.0);
}
`;

/** Pack MLP weights into the RGBA32F layout the fragment shader reads. */
export function packMlpTexture(
  hidden: number,
  w1: Float64Array,
  b1: Float64Array,
  w2: Float64Array,
  b2: Float64Array,
  inDim: number,
): Float32Array {
  if (hidden !== 16 || inDim !== 39) {
    throw new Error("shader is specialized to 16 hidden units and 39 inputs");
  }
  const data = new Float32Array(MLP_TEX_WIDTH * MLP_TEX_HEIGHT * 4);
  for (let k = 0; k < hidden; k++) {
    const row = k * MLP_TEX_WIDTH * 4;
    for (let i = 0; i < inDim; i++) data[row + i] = w1[k * inDim + i];
    data[row + inDim] = b1[k];
  }
  for (let j = 0; j < 3; j++) {
    const row = (16 + j) * MLP_TEX_WIDTH * 4;
    for (let i = 0; i < hidden; i++) data[row + i] = w2[j * hidden + i];
    data[row + hidden] = b2[j];
  }
  return data;
}
