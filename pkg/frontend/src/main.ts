/** Browser entry point.
 *
 * Wires the fetcher, the decode worker, the player state machine, and the
 * WebGL renderer together.  The bundle service origin defaults to the page
 * origin and can be overridden with `?bundle=http://host:port`.
 */

import { HttpFetcher } from "./net.js";
import { fetchGroupPayloads, loadManifest, loadMlp } from "./loader.js";
import type { Manifest } from "./manifest.js";
import { GlRenderer, type GpuGroupUpload } from "./gl.js";
import { Player, type GroupHandle } from "./player.js";
import type { Background } from "./render.js";
import type { WorkerRequest, WorkerResponse } from "./worker.js";

const TICK_HZ = 12;

interface LoadedGroup {
  upload: GpuGroupUpload;
  frameStart: number;
  frameCount: number;
}

class WorkerClient {
  private readonly worker: Worker;
  private readonly pending = new Map<
    number,
    { resolve: (r: WorkerResponse) => void }
  >();
  private seq = 0;

  constructor() {
    this.worker = new Worker(new URL("./worker.js", import.meta.url), { type: "module" });
    this.worker.onmessage = (ev: MessageEvent<WorkerResponse>) => {
      const waiter = this.pending.get(ev.data.seq);
      if (waiter) {
        this.pending.delete(ev.data.seq);
        waiter.resolve(ev.data);
      }
    };
  }

  decode(req: Omit<WorkerRequest, "seq">): Promise<WorkerResponse> {
    const seq = this.seq++;
    const msg: WorkerRequest = { seq, ...req };
    return new Promise((resolve) => {
      this.pending.set(seq, { resolve });
      this.worker.postMessage(msg, [
        msg.chunk.buffer,
        msg.mappingPng.buffer,
        msg.occupancy.buffer,
      ]);
    });
  }
}

function mustGet<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

async function start(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("bundle") ?? window.location.origin;
  const fetcher = new HttpFetcher(base);

  const canvas = mustGet<HTMLCanvasElement>("view");
  const playButton = mustGet<HTMLButtonElement>("play");
  const loopBox = mustGet<HTMLInputElement>("loop");
  const seekBar = mustGet<HTMLInputElement>("seek");
  const frameLabel = mustGet<HTMLSpanElement>("frame-label");
  const errorBox = mustGet<HTMLDivElement>("error");

  const manifest: Manifest = await loadManifest(fetcher);
  const mlp = await loadMlp(fetcher);
  const background: Background = manifest.background === "none" ? "none" : "white";

  const renderer = new GlRenderer(canvas);
  renderer.setMlp(mlp);
  const workerClient = new WorkerClient();
  const groups = new Map<number, LoadedGroup>();

  let dirty = false;
  const requestRender = () => {
    dirty = true;
  };

  const loadGroup = async (id: number): Promise<GroupHandle> => {
    const entry = manifest.groups.find((g) => g.group_id === id);
    if (!entry) throw new Error(`unknown group id ${id}`);
    const payloads = await fetchGroupPayloads(fetcher, entry);
    const res = await workerClient.decode({ manifest, entry, ...payloads });
    if (!res.ok) throw new Error(res.error);
    groups.set(id, {
      upload: res.upload,
      frameStart: res.frameStart,
      frameCount: res.frameCount,
    });
    return {
      groupId: id,
      frameStart: res.frameStart,
      frameCount: res.frameCount,
      dispose: () => {
        groups.delete(id);
      },
    };
  };

  const player = new Player({ manifest, loadGroup, requestRender });
  seekBar.max = String(manifest.num_frames - 1);

  const draw = () => {
    const gid = player.loadedGroupId;
    if (gid === null) return;
    const group = groups.get(gid);
    if (!group) return;
    if (renderer.loadedGroupId !== gid) renderer.setGroup(group.upload);
    renderer.draw(player.frame - group.frameStart, player.orbit, background);
  };

  const syncHud = () => {
    frameLabel.textContent = `frame ${player.frame} / ${manifest.num_frames - 1}`;
    playButton.textContent = player.playing ? "Pause" : "Play";
    seekBar.value = String(player.frame);
    errorBox.textContent = player.error ?? "";
    errorBox.style.display = player.error ? "block" : "none";
  };

  const frameLoop = () => {
    if (dirty) {
      dirty = false;
      draw();
    }
    syncHud();
    requestAnimationFrame(frameLoop);
  };

  window.setInterval(() => player.tick(), 1000 / TICK_HZ);

  playButton.addEventListener("click", () => player.togglePlay());
  loopBox.addEventListener("change", () => {
    player.loop = loopBox.checked;
  });
  seekBar.addEventListener("input", () => player.seek(Number(seekBar.value)));
  window.addEventListener("keydown", (ev) => {
    if (ev.key === " " || ev.key === "ArrowLeft" || ev.key === "ArrowRight") {
      ev.preventDefault();
      player.key(ev.key);
    }
  });

  let dragging = false;
  let lastX = 0;
  let lastY = 0;
  canvas.addEventListener("pointerdown", (ev) => {
    dragging = true;
    lastX = ev.clientX;
    lastY = ev.clientY;
    canvas.setPointerCapture(ev.pointerId);
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (!dragging) return;
    player.drag(ev.clientX - lastX, ev.clientY - lastY);
    lastX = ev.clientX;
    lastY = ev.clientY;
  });
  canvas.addEventListener("pointerup", () => {
    dragging = false;
  });
  canvas.addEventListener(
    "wheel",
    (ev) => {
      ev.preventDefault();
      player.wheel(ev.deltaY);
    },
    { passive: false },
  );

  await player.init();
  requestRender();
  requestAnimationFrame(frameLoop);
}

start().catch((err: unknown) => {
  const box = document.getElementById("error");
  if (box) {
    box.textContent = err instanceof Error ? err.message : String(err);
    (box as HTMLElement).style.display = "block";
  }
});
