/** The tiny appearance decoder: one hidden layer, evaluated once per ray.
 *
 * rgb = sigmoid(w2 . relu(w1 . [feature, encode(direction)] + b1) + b2)
 *
 * `evalMlp` mirrors the reference float64 math; `evalMlpF32` rounds every
 * intermediate to float32, matching what a GPU fragment shader computes,
 * and is what the shader-parity test pins down.
 */

export const FEATURE_DIM = 12;
export const ENC_FREQUENCIES = 4;

export interface TinyMlp {
  hidden: number;
  freqs: number;
  /** (hidden, inDim) row-major. */
  w1: Float64Array;
  b1: Float64Array;
  /** (3, hidden) row-major. */
  w2: Float64Array;
  b2: Float64Array;
}

export function encDim(freqs: number): number {
  return 3 + 2 * 3 * freqs;
}

export function mlpInputDim(mlp: TinyMlp): number {
  return FEATURE_DIM + encDim(mlp.freqs);
}

export interface TinyMlpJson {
  hidden: number;
  feature_dim: number;
  enc_frequencies?: number;
  w1: number[][];
  b1: number[];
  w2: number[][];
  b2: number[];
}

export function mlpFromJson(d: TinyMlpJson): TinyMlp {
  const hidden = d.b1.length;
  const freqs = d.enc_frequencies ?? ENC_FREQUENCIES;
  const inDim = FEATURE_DIM + encDim(freqs);
  if (d.w1.length !== hidden || d.w1[0].length !== inDim) {
    throw new Error(`w1 must be (${hidden}, ${inDim})`);
  }
  if (d.w2.length !== 3 || d.w2[0].length !== hidden) {
    throw new Error(`w2 must be (3, ${hidden})`);
  }
  return {
    hidden,
    freqs,
    w1: Float64Array.from(d.w1.flat()),
    b1: Float64Array.from(d.b1),
    w2: Float64Array.from(d.w2.flat()),
    b2: Float64Array.from(d.b2),
  };
}

/** [d, sin(2^i pi d), cos(2^i pi d)] for i = 0..freqs-1, unit direction in. */
export function positionalEncode(dir: ArrayLike<number>, freqs: number): Float64Array {
  const out = new Float64Array(encDim(freqs));
  out[0] = dir[0];
  out[1] = dir[1];
  out[2] = dir[2];
  let o = 3;
  for (let i = 0; i < freqs; i++) {
    const f = 2 ** i * Math.PI;
    for (let a = 0; a < 3; a++) out[o + a] = Math.sin(dir[a] * f);
    for (let a = 0; a < 3; a++) out[o + 3 + a] = Math.cos(dir[a] * f);
    o += 6;
  }
  return out;
}

/** Reference evaluation in float64. */
export function evalMlp(
  mlp: TinyMlp,
  feature: ArrayLike<number>,
  enc: ArrayLike<number>,
): [number, number, number] {
  const inDim = mlpInputDim(mlp);
  const encLen = enc.length;
  const hidden = new Float64Array(mlp.hidden);
  for (let h = 0; h < mlp.hidden; h++) {
    let acc = mlp.b1[h];
    const row = h * inDim;
    for (let i = 0; i < FEATURE_DIM; i++) acc += mlp.w1[row + i] * feature[i];
    for (let i = 0; i < encLen; i++) acc += mlp.w1[row + FEATURE_DIM + i] * enc[i];
    hidden[h] = acc > 0 ? acc : 0;
  }
  const out: [number, number, number] = [0, 0, 0];
  for (let c = 0; c < 3; c++) {
    let acc = mlp.b2[c];
    for (let h = 0; h < mlp.hidden; h++) acc += mlp.w2[c * mlp.hidden + h] * hidden[h];
    out[c] = 1 / (1 + Math.exp(-acc));
  }
  return out;
}

const fr = Math.fround;

/** Direction encoding with every intermediate rounded to float32. */
export function positionalEncodeF32(dir: ArrayLike<number>, freqs: number): Float32Array {
  const out = new Float32Array(encDim(freqs));
  out[0] = fr(dir[0]);
  out[1] = fr(dir[1]);
  out[2] = fr(dir[2]);
  let o = 3;
  for (let i = 0; i < freqs; i++) {
    const f = fr(2 ** i * Math.PI);
    for (let a = 0; a < 3; a++) out[o + a] = fr(Math.sin(fr(out[a] * f)));
    for (let a = 0; a < 3; a++) out[o + 3 + a] = fr(Math.cos(fr(out[a] * f)));
    o += 6;
  }
  return out;
}

/** Shader-order evaluation with every intermediate rounded to float32. */
export function evalMlpF32(
  mlp: TinyMlp,
  feature: ArrayLike<number>,
  enc: ArrayLike<number>,
): [number, number, number] {
  const inDim = mlpInputDim(mlp);
  const encLen = enc.length;
  const hidden = new Float32Array(mlp.hidden);
  for (let h = 0; h < mlp.hidden; h++) {
    let acc = fr(mlp.b1[h]);
    const row = h * inDim;
    for (let i = 0; i < FEATURE_DIM; i++) {
      acc = fr(acc + fr(fr(mlp.w1[row + i]) * fr(feature[i])));
    }
    for (let i = 0; i < encLen; i++) {
      acc = fr(acc + fr(fr(mlp.w1[row + FEATURE_DIM + i]) * fr(enc[i])));
    }
    hidden[h] = acc > 0 ? acc : 0;
  }
  const out: [number, number, number] = [0, 0, 0];
  for (let c = 0; c < 3; c++) {
    let acc = fr(mlp.b2[c]);
    for (let h = 0; h < mlp.hidden; h++) {
      acc = fr(acc + fr(fr(mlp.w2[c * mlp.hidden + h]) * hidden[h]));
    }
    out[c] = fr(1 / fr(1 + fr(Math.exp(fr(-acc)))));
  }
  return out;
}
