/** Interaction state machine, kept free of DOM and GPU so it runs headless.
 *
 * The player owns: the current frame (always inside the loaded group), the
 * play/pause flag and rate, the orbit camera parameters, and the set of
 * buffered group handles.  Group loads go through an injected async loader;
 * a load for a given group is never issued twice while one is in flight,
 * and handles outside {current, next} are disposed after every switch.
 */

import { clampOrbit, type OrbitState, defaultOrbit } from "./camera.js";
import type { Manifest } from "./manifest.js";

export interface GroupHandle {
  groupId: number;
  frameStart: number;
  frameCount: number;
  dispose(): void;
}

export interface PlayerDeps {
  manifest: Manifest;
  loadGroup(id: number): Promise<GroupHandle>;
  requestRender(): void;
}

const DRAG_DEG_PER_PX = 0.4;
const WHEEL_SCALE = 1.1;

export class Player {
  readonly orbit: OrbitState = defaultOrbit();
  loop = false;
  rate = 1;

  private frameIndex = 0;
  private isPlaying = false;
  private rateCursor = 0;
  private currentGroupId: number | null = null;
  private handles = new Map<number, GroupHandle>();
  private loadsInFlight = new Map<number, Promise<GroupHandle | null>>();
  private pendingFrame: number | null = null;
  private errorMessage: string | null = null;

  constructor(private readonly deps: PlayerDeps) {}

  get frame(): number {
    return this.frameIndex;
  }

  get playing(): boolean {
    return this.isPlaying;
  }

  get loadedGroupId(): number | null {
    return this.currentGroupId;
  }

  get bufferedGroups(): number[] {
    return [...this.handles.keys()].sort((a, b) => a - b);
  }

  get error(): string | null {
    return this.errorMessage;
  }

  get loading(): boolean {
    return this.loadsInFlight.size > 0;
  }

  /** Load the starting group; resolves once frame 0 is displayable. */
  async init(): Promise<void> {
    await this.ensureLoaded(this.groupIdForFrame(0));
    this.applyFrame(0);
  }

  private groupIdForFrame(frame: number): number {
    for (const g of this.deps.manifest.groups) {
      if (g.frame_start <= frame && frame < g.frame_start + g.frame_count) {
        return g.group_id;
      }
    }
    throw new Error(`frame ${frame} outside sequence`);
  }

  private clampFrame(frame: number): number {
    const last = this.deps.manifest.num_frames - 1;
    return Math.min(Math.max(Math.round(frame), 0), last);
  }

  /** Issue (or join) the load of one group; errors land in the error state. */
  private ensureLoaded(groupId: number): Promise<GroupHandle | null> {
    const have = this.handles.get(groupId);
    if (have) return Promise.resolve(have);
    const inFlight = this.loadsInFlight.get(groupId);
    if (inFlight) return inFlight;
    const p = this.deps
      .loadGroup(groupId)
      .then((handle) => {
        this.handles.set(groupId, handle);
        return handle;
      })
      .catch((err: unknown) => {
        this.errorMessage = err instanceof Error ? err.message : String(err);
        this.deps.requestRender();
        return null;
      })
      .finally(() => {
        this.loadsInFlight.delete(groupId);
      });
    this.loadsInFlight.set(groupId, p);
    return p;
  }

  /** Switch the visible frame; only called once its group is buffered. */
  private applyFrame(frame: number): void {
    const gid = this.groupIdForFrame(frame);
    if (!this.handles.has(gid)) {
      throw new Error(`group ${gid} not buffered`);
    }
    this.frameIndex = frame;
    this.currentGroupId = gid;
    this.errorMessage = null;
    this.releaseStale();
    this.deps.requestRender();
  }

  /** Drop every buffered group except the current one and its successor. */
  private releaseStale(): void {
    for (const [gid, handle] of [...this.handles]) {
      if (gid !== this.currentGroupId && gid !== (this.currentGroupId ?? 0) + 1) {
        handle.dispose();
        this.handles.delete(gid);
      }
    }
  }

  /** Jump to a frame, fetching its group first if needed. */
  seek(frame: number): void {
    const target = this.clampFrame(frame);
    const gid = this.groupIdForFrame(target);
    if (this.handles.has(gid)) {
      this.pendingFrame = null;
      this.applyFrame(target);
      return;
    }
    this.pendingFrame = target;
    void this.ensureLoaded(gid).then((handle) => {
      if (handle === null) {
        this.pendingFrame = null;
        return;
      }
      // The handle may have been disposed while this callback was queued.
      if (!this.handles.has(gid)) return;
      if (this.pendingFrame !== null && this.groupIdForFrame(this.pendingFrame) === gid) {
        const f = this.pendingFrame;
        this.pendingFrame = null;
        this.applyFrame(f);
      }
    });
  }

  /** Explicit group jump; an unknown id sets the error state and nothing else. */
  seekGroup(groupId: number): void {
    const entry = this.deps.manifest.groups.find((g) => g.group_id === groupId);
    if (!entry) {
      this.errorMessage = `unknown group id ${groupId}`;
      this.deps.requestRender();
      return;
    }
    this.seek(entry.frame_start);
  }

  play(): void {
    this.isPlaying = true;
  }

  pause(): void {
    this.isPlaying = false;
    this.rateCursor = 0;
  }

  togglePlay(): void {
    this.isPlaying ? this.pause() : this.play();
  }

  step(delta: number): void {
    this.seek(this.frameIndex + delta);
  }

  /** Advance playback by one tick at the current rate.
   *
   * The frame is monotone while playing: it advances when the next frame's
   * group is buffered, holds while that group is still loading, and at the
   * end of the sequence either stops or wraps to frame 0 when looping.
   */
  tick(): void {
    if (!this.isPlaying) return;
    this.rateCursor += this.rate;
    let steps = Math.floor(this.rateCursor);
    this.rateCursor -= steps;
    const last = this.deps.manifest.num_frames - 1;
    while (steps > 0) {
      if (this.frameIndex >= last) {
        if (this.loop) {
          const gid0 = this.groupIdForFrame(0);
          if (this.handles.has(gid0)) {
            this.applyFrame(0);
          } else {
            void this.ensureLoaded(gid0);
            this.rateCursor = 0;
            return; // hold the last frame until the first group is back
          }
        } else {
          this.pause();
          return;
        }
        steps--;
        continue;
      }
      const next = this.frameIndex + 1;
      const gid = this.groupIdForFrame(next);
      if (!this.handles.has(gid)) {
        void this.ensureLoaded(gid);
        this.rateCursor = 0;
        return; // hold until the group arrives
      }
      this.applyFrame(next);
      this.prefetchNext();
      steps--;
    }
  }

  /** Start fetching the next group as playback nears a boundary. */
  private prefetchNext(): void {
    const entry = this.deps.manifest.groups.find((g) => g.group_id === this.currentGroupId);
    if (!entry) return;
    const lastOfGroup = entry.frame_start + entry.frame_count - 1;
    if (this.frameIndex === lastOfGroup) {
      const next = this.deps.manifest.groups.find((g) => g.group_id === entry.group_id + 1);
      if (next) void this.ensureLoaded(next.group_id);
    }
  }

  /** Pointer drag: horizontal motion orbits in azimuth, vertical in elevation. */
  drag(dxPx: number, dyPx: number): void {
    this.orbit.azimuthDeg += dxPx * DRAG_DEG_PER_PX;
    this.orbit.elevationDeg += dyPx * DRAG_DEG_PER_PX;
    clampOrbit(this.orbit);
    this.deps.requestRender();
  }

  /** Wheel zoom; distance stays strictly positive. */
  wheel(deltaY: number): void {
    this.orbit.distance *= deltaY > 0 ? WHEEL_SCALE : 1 / WHEEL_SCALE;
    clampOrbit(this.orbit);
    this.deps.requestRender();
  }

  /** Keyboard map: space toggles playback, arrows step one frame. */
  key(key: string): void {
    if (key === " ") {
      this.togglePlay();
    } else if (key === "ArrowRight") {
      this.step(1);
    } else if (key === "ArrowLeft") {
      this.step(-1);
    }
  }

  dispose(): void {
    for (const handle of this.handles.values()) handle.dispose();
    this.handles.clear();
    this.currentGroupId = null;
  }
}
