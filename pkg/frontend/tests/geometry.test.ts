import { describe, expect, it } from "vitest";
import {
  canvasToWorld,
  clampIndex,
  planeAxes,
  sliceCount,
  sliceSize,
  worldToCanvas,
  type VolumeMeta,
} from "../src/geometry.js";

const meta: VolumeMeta = {
  dims: [82, 118, 172],
  spacing_mm: [0.5, 0.5, 0.5],
  origin_mm: [-20.2, -16.7, -18.2],
};

describe("geometry", () => {
  it("derives every conversion from the meta payload", () => {
    // a different meta must change the result: single source of truth
    const other: VolumeMeta = {
      dims: [82, 118, 172],
      spacing_mm: [1.0, 1.0, 1.0],
      origin_mm: [0, 0, 0],
    };
    const p = { axis: "z" as const, index: 10, col: 5, row: 7 };
    expect(canvasToWorld(meta, p)).not.toEqual(canvasToWorld(other, p));
    expect(canvasToWorld(other, p)).toEqual([5, 7, 10]);
  });

  it("round-trips world and canvas coordinates", () => {
    for (const axis of ["x", "y", "z"] as const) {
      const world: [number, number, number] = [-3.2, 4.7, 11.9];
      const p = worldToCanvas(meta, axis, world);
      const back = canvasToWorld(meta, { axis, index: p.index, col: p.col, row: p.row });
      for (let i = 0; i < 3; i++) expect(back[i]).toBeCloseTo(world[i], 10);
    }
  });

  it("uses the server's plane convention", () => {
    expect(planeAxes("z")).toEqual([0, 1]);
    expect(planeAxes("y")).toEqual([0, 2]);
    expect(planeAxes("x")).toEqual([1, 2]);
    expect(sliceSize(meta, "z")).toEqual({ width: 82, height: 118 });
    expect(sliceCount(meta, "y")).toBe(118);
  });

  it("clamps slice indices to the volume", () => {
    expect(clampIndex(meta, "z", -5)).toBe(0);
    expect(clampIndex(meta, "z", 1000)).toBe(171);
    expect(clampIndex(meta, "z", 13.4)).toBe(13);
  });
});
