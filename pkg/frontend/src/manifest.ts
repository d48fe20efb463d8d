/** Manifest JSON shapes served at /manifest.json. */

export interface StreamEntry {
  uri: string;
  bytes: number;
  chunk_offset: number;
  chunk_size: number;
  crc32: number;
  quantizer: number;
  lossless: boolean;
}

export interface MappingEntry {
  uri: string;
  bytes: number;
  width: number;
  height: number;
  bit_depth: number;
  layout: "morton" | "rowmajor";
  occupied_pixels: number;
}

export interface OccupancyEntry {
  uri: string;
  bytes: number;
  levels: number;
}

export interface QuantProfileJson {
  bit_depth: number;
  mins: number[];
  maxs: number[];
}

export interface GroupEntry {
  group_id: number;
  frame_start: number;
  frame_count: number;
  stream: StreamEntry;
  mapping: MappingEntry;
  occupancy: OccupancyEntry;
  quant_profile: QuantProfileJson;
}

export interface Manifest {
  format: string;
  version: number;
  sequence: string;
  num_frames: number;
  grid_resolution: [number, number, number];
  feature_dim: number;
  enc_frequencies: number;
  density: { activation: string; shift: number; gamma: number };
  background: "white" | "none";
  mlp: { uri: string; bytes: number; hidden: number };
  groups: GroupEntry[];
  byte_breakdown: Record<string, number>;
  total_bytes: number;
}

export class ManifestError extends Error {}

/** Light structural checks; the server-side schema is authoritative. */
export function parseManifest(data: unknown): Manifest {
  const m = data as Manifest;
  if (!m || typeof m !== "object" || m.format !== "voxstream-manifest") {
    throw new ManifestError("not a voxstream manifest");
  }
  if (!Array.isArray(m.groups) || m.groups.length === 0) {
    throw new ManifestError("manifest has no groups");
  }
  if (!Array.isArray(m.grid_resolution) || m.grid_resolution.length !== 3) {
    throw new ManifestError("bad grid_resolution");
  }
  const sorted = [...m.groups].sort((a, b) => a.frame_start - b.frame_start);
  let cursor = 0;
  for (const g of sorted) {
    if (g.frame_start !== cursor) {
      throw new ManifestError(
        `groups must tile the frame range: expected start ${cursor}, got ${g.frame_start}`,
      );
    }
    cursor += g.frame_count;
  }
  if (cursor !== m.num_frames) {
    throw new ManifestError(
      `groups cover ${cursor} frames, manifest says ${m.num_frames}`,
    );
  }
  return m;
}

export function groupForFrame(manifest: Manifest, frame: number): GroupEntry {
  for (const g of manifest.groups) {
    if (g.frame_start <= frame && frame < g.frame_start + g.frame_count) {
      return g;
    }
  }
  throw new ManifestError(`frame ${frame} outside sequence (0..${manifest.num_frames})`);
}
