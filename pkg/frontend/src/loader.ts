/** Fetch + decode of one group's assets.
 *
 * The group chunk is fetched with a byte range straight out of the stream
 * file (offset/size come from the manifest), so seeking to any group costs
 * one ranged request plus the small mapping and occupancy files.  Decoding
 * is pure on byte arrays, which lets the browser app run it in a worker
 * while tests run it inline.
 */

import { decodeGof, profileFromJson, verifyChunk, type QuantProfile } from "./codec.js";
import type { GroupEntry, Manifest } from "./manifest.js";
import { parseManifest } from "./manifest.js";
import { blockPrefixMask, mappingFromImage, type MappingTable } from "./mapping.js";
import { mlpFromJson, type TinyMlp, type TinyMlpJson } from "./mlp.js";
import type { Fetcher } from "./net.js";
import { cellOccupancy, parsePyramid, type OccupancyPyramid } from "./occupancy.js";
import { decodePng } from "./png.js";
import type { CellMask } from "./render.js";

export class GroupLoadError extends Error {}

export interface GroupAssets {
  groupId: number;
  frameStart: number;
  frameCount: number;
  channels: number;
  table: MappingTable;
  pyramid: OccupancyPyramid;
  profile: QuantProfile;
  /** Quantized feature images, one (h*w*c) buffer per frame. */
  frames: Uint8Array[];
}

export interface RawGroupPayloads {
  chunk: Uint8Array;
  mappingPng: Uint8Array;
  occupancy: Uint8Array;
}

export async function fetchGroupPayloads(
  fetcher: Fetcher,
  entry: GroupEntry,
): Promise<RawGroupPayloads> {
  const [chunk, mappingPng, occupancy] = await Promise.all([
    fetcher.fetchBytes(entry.stream.uri, {
      offset: entry.stream.chunk_offset,
      size: entry.stream.chunk_size,
    }),
    fetcher.fetchBytes(entry.mapping.uri),
    fetcher.fetchBytes(entry.occupancy.uri),
  ]);
  return { chunk, mappingPng, occupancy };
}

/** Pure decode step, suitable for a worker. */
export async function decodeGroupPayloads(
  manifest: Manifest,
  entry: GroupEntry,
  payloads: RawGroupPayloads,
): Promise<GroupAssets> {
  verifyChunk(payloads.chunk, entry.stream.crc32);
  const gof = decodeGof(payloads.chunk);
  if (gof.groupId !== entry.group_id) {
    throw new GroupLoadError(
      `chunk holds group ${gof.groupId}, expected ${entry.group_id}`,
    );
  }
  if (gof.frameStart !== entry.frame_start || gof.frames.length !== entry.frame_count) {
    throw new GroupLoadError("chunk frame range does not match the manifest");
  }
  if (gof.width !== entry.mapping.width || gof.height !== entry.mapping.height) {
    throw new GroupLoadError("chunk image size does not match the mapping");
  }
  const png = await decodePng(payloads.mappingPng);
  if (png.width !== entry.mapping.width || png.height !== entry.mapping.height) {
    throw new GroupLoadError("mapping image size does not match the manifest");
  }
  const mask = blockPrefixMask(
    png.width,
    png.height,
    entry.mapping.occupied_pixels,
    entry.mapping.layout,
  );
  const table = mappingFromImage(png, mask, manifest.grid_resolution);
  const pyramid = parsePyramid(payloads.occupancy);
  const res = pyramid.levels[0].resolution;
  if (
    res[0] !== manifest.grid_resolution[0] ||
    res[1] !== manifest.grid_resolution[1] ||
    res[2] !== manifest.grid_resolution[2]
  ) {
    throw new GroupLoadError("occupancy resolution does not match the manifest");
  }
  return {
    groupId: entry.group_id,
    frameStart: entry.frame_start,
    frameCount: entry.frame_count,
    channels: gof.channels,
    table,
    pyramid,
    profile: profileFromJson(entry.quant_profile),
    frames: gof.frames,
  };
}

export async function loadManifest(fetcher: Fetcher): Promise<Manifest> {
  return parseManifest(await fetcher.fetchJson("manifest.json"));
}

export async function loadMlp(fetcher: Fetcher): Promise<TinyMlp> {
  return mlpFromJson((await fetcher.fetchJson("mlp.json")) as TinyMlpJson);
}

export async function loadGroup(
  fetcher: Fetcher,
  manifest: Manifest,
  groupId: number,
): Promise<GroupAssets> {
  const entry = manifest.groups.find((g) => g.group_id === groupId);
  if (!entry) {
    throw new GroupLoadError(`unknown group id ${groupId}`);
  }
  const payloads = await fetchGroupPayloads(fetcher, entry);
  return decodeGroupPayloads(manifest, entry, payloads);
}

/** The exact skip mask for the marching loop (level 0 of the pyramid). */
export function groupCellMask(assets: GroupAssets): CellMask {
  const level0 = assets.pyramid.levels[0];
  const [nx, ny, nz] = level0.resolution;
  return { nx: nx - 1, ny: ny - 1, nz: nz - 1, bits: cellOccupancy(level0) };
}
