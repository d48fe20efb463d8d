/** Player details beyond the acceptance scenario: playback rates, group
 * prefetch, and disposal.
 */

import { expect, test } from "vitest";

import { Player, type GroupHandle, type PlayerDeps } from "../src/player.js";
import { parseManifest, type Manifest } from "../src/manifest.js";
import { flush } from "./helpers.js";

function manifestOf(frameCounts: number[]): Manifest {
  let start = 0;
  const groups = frameCounts.map((count, gid) => {
    const g = {
      group_id: gid,
      frame_start: start,
      frame_count: count,
      stream: {
        uri: `gof/${gid}/stream`,
        bytes: 0,
        chunk_offset: 0,
        chunk_size: 0,
        crc32: 0,
        quantizer: 1,
        lossless: false,
      },
      mapping: {
        uri: `gof/${gid}/mapping.png`,
        bytes: 0,
        width: 8,
        height: 8,
        bit_depth: 8,
        layout: "morton" as const,
        occupied_pixels: 0,
      },
      occupancy: { uri: `gof/${gid}/occupancy.bin`, bytes: 0, levels: 1 },
      quant_profile: { bit_depth: 8, mins: [0], maxs: [1] },
    };
    start += count;
    return g;
  });
  return parseManifest({
    format: "voxstream-manifest",
    version: 1,
    sequence: "t",
    num_frames: start,
    grid_resolution: [8, 8, 8] as [number, number, number],
    feature_dim: 12,
    enc_frequencies: 4,
    density: { activation: "softplus", shift: -10, gamma: 0.005 },
    background: "white",
    mlp: { uri: "mlp.json", bytes: 0, hidden: 16 },
    groups,
    byte_breakdown: {},
    total_bytes: 0,
  });
}

/** Loader that resolves instantly and tracks live handles. */
function instantDeps(manifest: Manifest): PlayerDeps & { alive: Set<number>; disposed: number[] } {
  const alive = new Set<number>();
  const disposed: number[] = [];
  return {
    manifest,
    alive,
    disposed,
    loadGroup: async (gid: number): Promise<GroupHandle> => {
      const entry = manifest.groups.find((g) => g.group_id === gid);
      if (!entry) throw new Error(`unknown group id ${gid}`);
      alive.add(gid);
      return {
        groupId: gid,
        frameStart: entry.frame_start,
        frameCount: entry.frame_count,
        dispose: () => {
          alive.delete(gid);
          disposed.push(gid);
        },
      };
    },
    requestRender: () => {},
  };
}

test("rate 2 advances two frames per tick inside a buffered group", async () => {
  const deps = instantDeps(manifestOf([4, 4]));
  const player = new Player(deps);
  await player.init();
  await flush();
  player.rate = 2;
  player.play();
  player.tick();
  await flush();
  expect(player.frame).toBe(2);
  player.tick();
  await flush();
  expect(player.frame).toBe(3); // held at the boundary while group 1 loads
  player.tick();
  await flush();
  expect(player.frame).toBeGreaterThanOrEqual(4); // resumed after the load
});

test("fractional rates accumulate across ticks", async () => {
  const deps = instantDeps(manifestOf([6]));
  const player = new Player(deps);
  await player.init();
  await flush();
  player.rate = 0.5;
  player.play();
  player.tick();
  expect(player.frame).toBe(0);
  player.tick();
  await flush();
  expect(player.frame).toBe(1);
  player.tick();
  player.tick();
  await flush();
  expect(player.frame).toBe(2);
});

test("playback prefetches the next group at a boundary", async () => {
  const deps = instantDeps(manifestOf([2, 2, 2]));
  const player = new Player(deps);
  await player.init();
  await flush();
  player.play();
  player.tick(); // frame 1 = last of group 0, prefetch of group 1 fires
  await flush();
  expect(player.frame).toBe(1);
  expect(player.bufferedGroups).toContain(1);
});

test("seekGroup jumps to the group's first frame", async () => {
  const deps = instantDeps(manifestOf([2, 3, 2]));
  const player = new Player(deps);
  await player.init();
  await flush();
  player.seekGroup(1);
  await flush();
  expect(player.frame).toBe(2);
  expect(player.loadedGroupId).toBe(1);
});

test("dispose releases every buffered handle", async () => {
  const deps = instantDeps(manifestOf([2, 2]));
  const player = new Player(deps);
  await player.init();
  await flush();
  player.seek(2);
  await flush();
  expect(deps.alive.size).toBeGreaterThan(0);
  player.dispose();
  expect(deps.alive.size).toBe(0);
  expect(player.loadedGroupId).toBeNull();
});

test("zoom stays within the configured bounds", async () => {
  const deps = instantDeps(manifestOf([2]));
  const player = new Player(deps);
  await player.init();
  await flush();
  for (let i = 0; i < 200; i++) player.wheel(120);
  expect(player.orbit.distance).toBeLessThanOrEqual(20);
  for (let i = 0; i < 400; i++) player.wheel(-120);
  expect(player.orbit.distance).toBeGreaterThan(0);
});
