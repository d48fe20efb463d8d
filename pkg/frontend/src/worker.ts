/** Module worker: decodes a group's payloads off the main thread.
 *
 * Input: the manifest, one group entry, and the three raw payloads fetched
 * on the main thread.  Output: the expanded per-frame volumes already packed
 * into RGBA texture slabs plus the cell-mask bytes, transferred back without
 * copying.  All heavy work (range decode, DCT, PNG inflate, expansion)
 * happens here.
 */

import { decodeGroupPayloads, groupCellMask } from "./loader.js";
import type { GroupEntry, Manifest } from "./manifest.js";
import { expandFrame } from "./volume.js";
import { packMaskBytes, packVolumeRgba } from "./gl.js";
import type { GpuGroupUpload } from "./gl.js";

export interface WorkerRequest {
  seq: number;
  manifest: Manifest;
  entry: GroupEntry;
  chunk: Uint8Array;
  mappingPng: Uint8Array;
  occupancy: Uint8Array;
}

export interface WorkerOk {
  seq: number;
  ok: true;
  upload: GpuGroupUpload;
  frameStart: number;
  frameCount: number;
}

export interface WorkerErr {
  seq: number;
  ok: false;
  error: string;
}

export type WorkerResponse = WorkerOk | WorkerErr;

export async function decodeAndExpand(req: WorkerRequest): Promise<WorkerOk> {
  const assets = await decodeGroupPayloads(req.manifest, req.entry, {
    chunk: req.chunk,
    mappingPng: req.mappingPng,
    occupancy: req.occupancy,
  });
  const frames = assets.frames.map((frame) => ({
    volumes: packVolumeRgba(expandFrame(assets.table, frame, assets.channels, assets.profile)),
  }));
  const upload: GpuGroupUpload = {
    groupId: assets.groupId,
    resolution: req.manifest.grid_resolution,
    frames,
    maskBytes: packMaskBytes(groupCellMask(assets)),
  };
  return {
    seq: req.seq,
    ok: true,
    upload,
    frameStart: assets.frameStart,
    frameCount: assets.frameCount,
  };
}

interface WorkerScope {
  onmessage: ((ev: { data: WorkerRequest }) => void) | null;
  postMessage(msg: WorkerResponse, transfer?: Transferable[]): void;
}

// Only attach when actually running inside a worker (not under import in tests).
const scope = globalThis as { importScripts?: unknown; WorkerGlobalScope?: unknown };
if (typeof scope.WorkerGlobalScope !== "undefined") {
  const worker = globalThis as unknown as WorkerScope;
  worker.onmessage = (ev) => {
    const req = ev.data;
    decodeAndExpand(req).then(
      (res) => {
        const transfer: Transferable[] = [];
        for (const frame of res.upload.frames) {
          for (const slab of frame.volumes) transfer.push(slab.buffer);
        }
        transfer.push(res.upload.maskBytes.buffer);
        worker.postMessage(res, transfer);
      },
      (err: unknown) => {
        worker.postMessage({
          seq: req.seq,
          ok: false,
          error: err instanceof Error ? err.message : String(err),
        });
      },
    );
  };
}
