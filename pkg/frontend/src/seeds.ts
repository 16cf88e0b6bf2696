// Seed marking: a click near an existing marker drags it, otherwise a new
// seed appears at the clicked voxel. All positions go through the meta
// transform, never through ad-hoc scaling.

import type { VolumeMeta, Axis } from "./geometry.js";
import { canvasToWorld, worldToCanvas } from "./geometry.js";
import type { Seed } from "./state.js";

export const HIT_RADIUS_PX = 5;

export interface ClickResult {
  seeds: Seed[];
  moved: string | null; // name of the dragged seed, null when appended
}

export function markSeed(
  seeds: Seed[],
  meta: VolumeMeta,
  axis: Axis,
  index: number,
  col: number,
  row: number,
): ClickResult {
  for (let i = 0; i < seeds.length; i++) {
    const p = worldToCanvas(meta, axis, seeds[i].center_mm);
    if (Math.abs(p.index - index) > 1.0) continue; // marker not on this slice
    const d = Math.hypot(p.col - col, p.row - row);
    if (d <= HIT_RADIUS_PX) {
      const moved = [...seeds];
      const world = canvasToWorld(meta, { axis, index, col, row });
      // dragging in-plane keeps the seed's off-plane coordinate
      const axId = { x: 0, y: 1, z: 2 }[axis];
      world[axId] = seeds[i].center_mm[axId];
      moved[i] = { ...seeds[i], center_mm: world };
      return { seeds: moved, moved: seeds[i].name };
    }
  }
  const world = canvasToWorld(meta, { axis, index, col, row });
  const name = `S${seeds.length + 1}`;
  return { seeds: [...seeds, { name, center_mm: world }], moved: null };
}
