// Canvas <-> world conversions. Every transform is derived from the
// server's /api/meta payload; the viewer never hardcodes geometry.

export interface VolumeMeta {
  dims: [number, number, number];
  spacing_mm: [number, number, number];
  origin_mm: [number, number, number];
}

export type Axis = "x" | "y" | "z";

export const AXIS_INDEX: Record<Axis, number> = { x: 0, y: 1, z: 2 };

/** Slice image layout, matching the server: [column axis, row axis]. */
export function planeAxes(axis: Axis): [number, number] {
  switch (axis) {
    case "x":
      return [1, 2]; // columns along y, rows along z
    case "y":
      return [0, 2]; // columns along x, rows along z
    case "z":
      return [0, 1]; // columns along x, rows along y
  }
}

export function sliceCount(meta: VolumeMeta, axis: Axis): number {
  return meta.dims[AXIS_INDEX[axis]];
}

export function sliceSize(meta: VolumeMeta, axis: Axis): { width: number; height: number } {
  const [colAx, rowAx] = planeAxes(axis);
  return { width: meta.dims[colAx], height: meta.dims[rowAx] };
}

export interface SlicePoint {
  axis: Axis;
  index: number;
  col: number;
  row: number;
}

/** Slice pixel (one pixel per voxel) to world millimetres. */
export function canvasToWorld(meta: VolumeMeta, p: SlicePoint): [number, number, number] {
  const [colAx, rowAx] = planeAxes(p.axis);
  const out: [number, number, number] = [0, 0, 0];
  out[colAx] = meta.origin_mm[colAx] + p.col * meta.spacing_mm[colAx];
  out[rowAx] = meta.origin_mm[rowAx] + p.row * meta.spacing_mm[rowAx];
  const ax = AXIS_INDEX[p.axis];
  out[ax] = meta.origin_mm[ax] + p.index * meta.spacing_mm[ax];
  return out;
}

/** World millimetres to fractional slice coordinates for an axis view. */
export function worldToCanvas(
  meta: VolumeMeta,
  axis: Axis,
  world: [number, number, number],
): SlicePoint {
  const [colAx, rowAx] = planeAxes(axis);
  const ax = AXIS_INDEX[axis];
  return {
    axis,
    index: (world[ax] - meta.origin_mm[ax]) / meta.spacing_mm[ax],
    col: (world[colAx] - meta.origin_mm[colAx]) / meta.spacing_mm[colAx],
    row: (world[rowAx] - meta.origin_mm[rowAx]) / meta.spacing_mm[rowAx],
  };
}

export function clampIndex(meta: VolumeMeta, axis: Axis, index: number): number {
  const n = sliceCount(meta, axis);
  return Math.min(Math.max(Math.round(index), 0), n - 1);
}
