import { expect, test } from "vitest";

import {
  encDim,
  evalMlp,
  mlpFromJson,
  positionalEncode,
  type TinyMlpJson,
} from "../src/mlp.js";
import { readFixtureJson } from "./helpers.js";

interface ProbesFile {
  mlp_uri: string;
  probes: { feature: number[]; direction: number[]; rgb: number[] }[];
}

test("float64 evaluation reproduces the reference probes to machine precision", async () => {
  const probesFile = (await readFixtureJson("probes.json")) as ProbesFile;
  const mlp = mlpFromJson((await readFixtureJson(probesFile.mlp_uri)) as TinyMlpJson);
  for (const probe of probesFile.probes) {
    const rgb = evalMlp(mlp, probe.feature, positionalEncode(probe.direction, mlp.freqs));
    for (let c = 0; c < 3; c++) {
      expect(Math.abs(rgb[c] - probe.rgb[c])).toBeLessThanOrEqual(1e-12);
    }
  }
});

test("positional encoding layout", () => {
  expect(encDim(4)).toBe(27);
  const d = [0.6, -0.8, 0];
  const enc = positionalEncode(d, 4);
  expect(enc.length).toBe(27);
  expect([enc[0], enc[1], enc[2]]).toEqual(d);
  for (let i = 0; i < 4; i++) {
    const f = 2 ** i * Math.PI;
    for (let a = 0; a < 3; a++) {
      expect(enc[3 + 6 * i + a]).toBe(Math.sin(d[a] * f));
      expect(enc[3 + 6 * i + 3 + a]).toBe(Math.cos(d[a] * f));
    }
  }
});

test("malformed weight shapes are rejected", async () => {
  const probesFile = (await readFixtureJson("probes.json")) as ProbesFile;
  const good = (await readFixtureJson(probesFile.mlp_uri)) as TinyMlpJson;
  const badRow = { ...good, w1: good.w1.map((row) => row.slice(0, -1)) };
  expect(() => mlpFromJson(badRow)).toThrow();
  const badCount = { ...good, b1: good.b1.slice(0, -1) };
  expect(() => mlpFromJson(badCount)).toThrow();
});
