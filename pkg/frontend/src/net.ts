/** Asset transport.  Every fetch the player makes goes through a Fetcher,
 * and every URI is checked against the documented endpoint space first:
 *
 *   /manifest.json
 *   /mlp.json
 *   /gof/{id}/stream          (supports single byte ranges)
 *   /gof/{id}/mapping.png
 *   /gof/{id}/occupancy.bin
 */

export const ENDPOINT_PATTERN =
  /^\/(manifest\.json|mlp\.json|gof\/(\d+)\/(stream|mapping\.png|occupancy\.bin))$/;

export interface ByteRange {
  offset: number;
  size: number;
}

export interface Fetcher {
  fetchJson(uri: string): Promise<unknown>;
  fetchBytes(uri: string, range?: ByteRange): Promise<Uint8Array>;
}

export class NetError extends Error {}

/** Normalize a manifest-relative URI and reject anything off the endpoint map. */
export function endpointPath(uri: string): string {
  const path = uri.startsWith("/") ? uri : `/${uri}`;
  if (!ENDPOINT_PATTERN.test(path)) {
    throw new NetError(`not a documented endpoint: ${uri}`);
  }
  return path;
}

export class HttpFetcher implements Fetcher {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private url(uri: string): string {
    return this.baseUrl.replace(/\/$/, "") + endpointPath(uri);
  }

  async fetchJson(uri: string): Promise<unknown> {
    const res = await this.fetchFn(this.url(uri));
    if (!res.ok) {
      throw new NetError(`GET ${uri}: HTTP ${res.status}`);
    }
    return res.json();
  }

  async fetchBytes(uri: string, range?: ByteRange): Promise<Uint8Array> {
    const headers: Record<string, string> = {};
    if (range) {
      headers.Range = `bytes=${range.offset}-${range.offset + range.size - 1}`;
    }
    const res = await this.fetchFn(this.url(uri), { headers });
    if (range && res.status === 200) {
      // Transport ignored the range; slice locally.
      const full = new Uint8Array(await res.arrayBuffer());
      if (range.offset + range.size > full.length) {
        throw new NetError(`GET ${uri}: body shorter than requested range`);
      }
      return full.subarray(range.offset, range.offset + range.size);
    }
    if (range && res.status !== 206) {
      throw new NetError(`GET ${uri}: expected 206 for ranged request, got ${res.status}`);
    }
    if (!range && !res.ok) {
      throw new NetError(`GET ${uri}: HTTP ${res.status}`);
    }
    const body = new Uint8Array(await res.arrayBuffer());
    if (range && body.length !== range.size) {
      throw new NetError(
        `GET ${uri}: ranged response has ${body.length} bytes, wanted ${range.size}`,
      );
    }
    return body;
  }
}
