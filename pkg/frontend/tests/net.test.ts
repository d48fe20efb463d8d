import { expect, test } from "vitest";

import { ENDPOINT_PATTERN, endpointPath, HttpFetcher, NetError } from "../src/net.js";

test("endpoint validation accepts exactly the documented URI space", () => {
  const good = [
    "manifest.json",
    "mlp.json",
    "gof/0/stream",
    "gof/12/mapping.png",
    "gof/3/occupancy.bin",
    "/manifest.json",
  ];
  for (const uri of good) expect(() => endpointPath(uri)).not.toThrow();
  expect(endpointPath("manifest.json")).toBe("/manifest.json");

  const bad = [
    "",
    "manifest.json5",
    "secrets.txt",
    "../manifest.json",
    "gof/../mlp.json",
    "gof/x/stream",
    "gof/0/stream/extra",
    "gof/0/weights.bin",
    "manifest.json?x=1",
    "http://evil.example/manifest.json",
    "//host/manifest.json",
  ];
  for (const uri of bad) expect(() => endpointPath(uri), uri).toThrow(NetError);
  expect(ENDPOINT_PATTERN.test("/gof/7/stream")).toBe(true);
});

interface Recorded {
  url: string;
  range?: string;
}

function stubFetch(
  body: Uint8Array,
  opts: { honorRange?: boolean; status?: number; lie?: number } = {},
): { calls: Recorded[]; fetchFn: typeof fetch } {
  const calls: Recorded[] = [];
  const fetchFn = (async (input: RequestInfo | URL, init?: RequestInit) => {
    const headers = (init?.headers ?? {}) as Record<string, string>;
    calls.push({ url: String(input), range: headers.Range });
    if (opts.status) {
      return new Response(null, { status: opts.status });
    }
    if (headers.Range && opts.honorRange) {
      const m = /^bytes=(\d+)-(\d+)$/.exec(headers.Range)!;
      let slice = body.slice(Number(m[1]), Number(m[2]) + 1);
      if (opts.lie !== undefined) slice = slice.slice(0, opts.lie);
      return new Response(slice.slice().buffer, { status: 206 });
    }
    return new Response(body.slice().buffer, { status: 200 });
  }) as typeof fetch;
  return { calls, fetchFn };
}

const BODY = Uint8Array.from({ length: 64 }, (_, i) => i);

test("ranged fetch sends a single bytes=a-b header and returns the slice", async () => {
  const { calls, fetchFn } = stubFetch(BODY, { honorRange: true });
  const f = new HttpFetcher("http://svc:1234/", fetchFn);
  const out = await f.fetchBytes("gof/0/stream", { offset: 10, size: 5 });
  expect(calls).toEqual([{ url: "http://svc:1234/gof/0/stream", range: "bytes=10-14" }]);
  expect([...out]).toEqual([10, 11, 12, 13, 14]);
});

test("a 200 reply to a ranged request is sliced locally", async () => {
  const { fetchFn } = stubFetch(BODY);
  const f = new HttpFetcher("http://svc", fetchFn);
  const out = await f.fetchBytes("gof/0/stream", { offset: 60, size: 4 });
  expect([...out]).toEqual([60, 61, 62, 63]);
  await expect(f.fetchBytes("gof/0/stream", { offset: 60, size: 10 })).rejects.toThrow(
    /shorter/,
  );
});

test("short 206 bodies and error statuses are rejected", async () => {
  const lying = stubFetch(BODY, { honorRange: true, lie: 2 });
  const f = new HttpFetcher("http://svc", lying.fetchFn);
  await expect(f.fetchBytes("gof/0/stream", { offset: 0, size: 8 })).rejects.toThrow(
    /8 bytes|wanted 8/,
  );

  const missing = stubFetch(BODY, { status: 404 });
  const g = new HttpFetcher("http://svc", missing.fetchFn);
  await expect(g.fetchBytes("gof/0/mapping.png")).rejects.toThrow(/404/);
  await expect(g.fetchJson("manifest.json")).rejects.toThrow(/404/);
  await expect(
    g.fetchBytes("gof/0/stream", { offset: 0, size: 4 }),
  ).rejects.toThrow(/206/);
});

test("undocumented endpoints never reach the transport", async () => {
  const { calls, fetchFn } = stubFetch(BODY);
  const f = new HttpFetcher("http://svc", fetchFn);
  await expect(f.fetchBytes("gof/0/../../etc/passwd")).rejects.toThrow(NetError);
  await expect(f.fetchJson("admin.json")).rejects.toThrow(NetError);
  expect(calls.length).toBe(0);
});

test("json fetch parses the body", async () => {
  const body = new TextEncoder().encode(JSON.stringify({ ok: 1 }));
  const { fetchFn } = stubFetch(body);
  const f = new HttpFetcher("http://svc", fetchFn);
  expect(await f.fetchJson("manifest.json")).toEqual({ ok: 1 });
});
