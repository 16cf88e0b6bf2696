// Single state store: every transition runs through update() so the view
// and the polling loop cannot race each other.

import type { Axis, VolumeMeta } from "./geometry.js";
import { clampIndex, sliceCount } from "./geometry.js";
import type { JobStatus, SeedPayload } from "./api.js";

export interface Seed {
  name: string;
  center_mm: [number, number, number];
}

export interface ViewerState {
  axis: Axis;
  index: number;
  window: [number, number];
  seeds: Seed[];
  overlays: Record<string, boolean>;
  job: (JobStatus & { id: string }) | null;
  report: Record<string, unknown> | null;
}

export function initialState(meta: VolumeMeta): ViewerState {
  return {
    axis: "z",
    index: Math.floor(sliceCount(meta, "z") / 2),
    window: [0, 700],
    seeds: [],
    overlays: {},
    job: null,
    report: null,
  };
}

export class Store {
  private state: ViewerState;
  private listeners: ((s: ViewerState) => void)[] = [];

  constructor(readonly meta: VolumeMeta, state?: ViewerState) {
    this.state = state ?? initialState(meta);
  }

  get(): ViewerState {
    return this.state;
  }

  subscribe(fn: (s: ViewerState) => void): void {
    this.listeners.push(fn);
  }

  update(patch: Partial<ViewerState>): ViewerState {
    const next = { ...this.state, ...patch };
    next.index = clampIndex(this.meta, next.axis, next.index);
    this.state = next;
    for (const fn of this.listeners) fn(next);
    return next;
  }

  setAxis(axis: Axis): ViewerState {
    // keep the relative position along the new axis
    const frac = this.state.index / Math.max(1, sliceCount(this.meta, this.state.axis) - 1);
    const index = Math.round(frac * (sliceCount(this.meta, axis) - 1));
    return this.update({ axis, index });
  }

  toggleOverlay(name: string): ViewerState {
    const overlays = { ...this.state.overlays, [name]: !this.state.overlays[name] };
    return this.update({ overlays });
  }
}

/** Seeds are posted caudal -> cranial regardless of marking order. */
export function seedsPayload(seeds: Seed[]): SeedPayload {
  const sorted = [...seeds].sort((a, b) => a.center_mm[2] - b.center_mm[2]);
  return {
    levels: sorted.map((s, i) => ({ name: `L${i + 1}`, center_mm: s.center_mm })),
  };
}
