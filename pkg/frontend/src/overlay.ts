// Scene planning: the composited review view is described as an ordered
// list of draw operations. Rendering applies them to a canvas; tests
// snapshot them directly.

import type { Axis, VolumeMeta } from "./geometry.js";
import { worldToCanvas, sliceSize } from "./geometry.js";
import type { ViewerState } from "./state.js";

export type DrawOp =
  | { kind: "slice"; url: string; width: number; height: number }
  | { kind: "mask"; name: string; url: string }
  | { kind: "marker"; label: string; col: number; row: number }
  | { kind: "seed"; name: string; col: number; row: number };

export interface UrlSource {
  sliceUrl(axis: Axis, index: number, window?: [number, number]): string;
  maskSliceUrl(name: string, axis: Axis, index: number): string;
}

const LANDMARK_KEYS = ["M1", "M2", "M3", "M4"] as const;

/** Markers show on slices within half a body-height of the landmark. */
const MARKER_SLAB_MM = 2.0;

export function buildScene(
  state: ViewerState,
  meta: VolumeMeta,
  api: UrlSource,
): DrawOp[] {
  const { axis, index } = state;
  const { width, height } = sliceSize(meta, axis);
  const ops: DrawOp[] = [
    { kind: "slice", url: api.sliceUrl(axis, index, state.window), width, height },
  ];

  for (const [name, on] of Object.entries(state.overlays)) {
    if (on) {
      ops.push({ kind: "mask", name, url: api.maskSliceUrl(name, axis, index) });
    }
  }

  for (const seed of state.seeds) {
    const p = worldToCanvas(meta, axis, seed.center_mm);
    if (Math.abs(p.index - index) <= 1.0) {
      ops.push({ kind: "seed", name: seed.name, col: p.col, row: p.row });
    }
  }

  const levels = (state.report as { levels?: Record<string, unknown> } | null)?.levels;
  if (levels) {
    const axId = { x: 0, y: 1, z: 2 }[axis];
    const sliceMm = meta.origin_mm[axId] + index * meta.spacing_mm[axId];
    for (const [levelName, entry] of Object.entries(levels)) {
      const marks = (entry as { landmarks?: Record<string, [number, number, number]> })
        .landmarks;
      if (!marks) continue;
      for (const key of LANDMARK_KEYS) {
        const world = marks[key];
        if (!world) continue;
        if (Math.abs(world[axId] - sliceMm) > MARKER_SLAB_MM) continue;
        const p = worldToCanvas(meta, axis, world);
        ops.push({ kind: "marker", label: `${levelName} ${key}`, col: p.col, row: p.row });
      }
    }
  }
  return ops;
}

/**
 * Alpha-composite an RGBA overlay onto an 8-bit grayscale base in place.
 * An all-transparent overlay leaves the base pixel-identical.
 */
export function compositeGrayRgba(
  base: Uint8ClampedArray,
  overlay: Uint8ClampedArray,
  width: number,
  height: number,
): Uint8ClampedArray {
  if (base.length !== width * height || overlay.length !== 4 * width * height) {
    throw new Error("composite: buffer sizes do not match the dimensions");
  }
  const out = new Uint8ClampedArray(base.length * 3);
  for (let i = 0; i < base.length; i++) {
    const a = overlay[4 * i + 3] / 255;
    for (let c = 0; c < 3; c++) {
      out[3 * i + c] = Math.round((1 - a) * base[i] + a * overlay[4 * i + c]);
    }
  }
  return out;
}
