/** Shared test utilities: a file-backed Fetcher over the fixture bundles and
 * small conveniences for async state-machine tests.
 */

import { readFile } from "node:fs/promises";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";

import { endpointPath, type ByteRange, type Fetcher } from "../src/net.js";

export const FIXTURES = join(dirname(fileURLToPath(import.meta.url)), "fixtures");

export interface RecordedRequest {
  uri: string;
  range?: ByteRange;
}

/** Serves a bundle directory from disk with the real endpoint restrictions. */
export class FileFetcher implements Fetcher {
  readonly requests: RecordedRequest[] = [];

  constructor(private readonly root: string) {}

  private filePath(uri: string): string {
    const path = endpointPath(uri); // throws on undocumented endpoints
    return join(this.root, ...path.slice(1).split("/"));
  }

  async fetchJson(uri: string): Promise<unknown> {
    this.requests.push({ uri });
    const text = await readFile(this.filePath(uri), "utf8");
    return JSON.parse(text) as unknown;
  }

  async fetchBytes(uri: string, range?: ByteRange): Promise<Uint8Array> {
    this.requests.push(range ? { uri, range } : { uri });
    const body = new Uint8Array(await readFile(this.filePath(uri)));
    if (!range) return body;
    if (range.offset + range.size > body.length) {
      throw new Error(`range past end of ${uri}`);
    }
    return body.subarray(range.offset, range.offset + range.size);
  }
}

export function bundleFetcher(name = "bundle"): FileFetcher {
  return new FileFetcher(join(FIXTURES, name));
}

export async function readFixture(name: string): Promise<Uint8Array> {
  return new Uint8Array(await readFile(join(FIXTURES, name)));
}

export async function readFixtureJson(name: string): Promise<unknown> {
  return JSON.parse(await readFile(join(FIXTURES, name), "utf8")) as unknown;
}

/** Let queued microtasks (promise resolutions) run, chains included. */
export async function flush(times = 16): Promise<void> {
  for (let i = 0; i < times; i++) await Promise.resolve();
}
