import { describe, expect, it } from "vitest";
import { buildScene, compositeGrayRgba, type UrlSource } from "../src/overlay.js";
import { initialState, Store } from "../src/state.js";
import type { VolumeMeta } from "../src/geometry.js";

const meta: VolumeMeta = {
  dims: [60, 80, 100],
  spacing_mm: [0.5, 0.5, 0.5],
  origin_mm: [0, 0, 0],
};

const urls: UrlSource = {
  sliceUrl: (axis, index, w) => `slice:${axis}:${index}:${w?.join("-") ?? "auto"}`,
  maskSliceUrl: (name, axis, index) => `mask:${name}:${axis}:${index}`,
};

describe("scene planning", () => {
  it("overlay off: the scene is the plain slice", () => {
    const store = new Store(meta);
    const ops = buildScene(store.get(), meta, urls);
    expect(ops).toEqual([
      { kind: "slice", url: "slice:z:50:0-700", width: 60, height: 80 },
    ]);
  });

  it("toggling an overlay adds exactly one mask op", () => {
    const store = new Store(meta);
    store.toggleOverlay("L1_body");
    const ops = buildScene(store.get(), meta, urls);
    expect(ops).toHaveLength(2);
    expect(ops[1]).toEqual({ kind: "mask", name: "L1_body", url: "mask:L1_body:z:50" });
    store.toggleOverlay("L1_body");
    expect(buildScene(store.get(), meta, urls)).toHaveLength(1);
  });

  it("renders landmark markers near the current slice only", () => {
    const store = new Store(meta);
    store.update({
      report: {
        levels: {
          L1: { landmarks: { M1: [10, 10, 25.0], M2: [10, 20, 25.0] } },
          L2: { landmarks: { M1: [10, 10, 60.0] } },
        },
      },
      index: 50, // world z = 25.0
    });
    const ops = buildScene(store.get(), meta, urls);
    const markers = ops.filter((o) => o.kind === "marker");
    expect(markers.map((m) => (m as { label: string }).label).sort()).toEqual([
      "L1 M1",
      "L1 M2",
    ]);
  });

  it("composites an empty mask to a pixel-identical image", () => {
    const base = new Uint8ClampedArray([0, 50, 100, 255]);
    const empty = new Uint8ClampedArray(16); // all transparent
    const out = compositeGrayRgba(base, empty, 2, 2);
    for (let i = 0; i < 4; i++) {
      expect(out[3 * i]).toBe(base[i]);
      expect(out[3 * i + 1]).toBe(base[i]);
      expect(out[3 * i + 2]).toBe(base[i]);
    }
  });

  it("composites opaque overlay pixels over the base", () => {
    const base = new Uint8ClampedArray([100]);
    const overlay = new Uint8ClampedArray([255, 80, 40, 255]);
    const out = compositeGrayRgba(base, overlay, 1, 1);
    expect([...out]).toEqual([255, 80, 40]);
  });
});

describe("state store", () => {
  it("clamps slice indices and keeps relative position across axes", () => {
    const store = new Store(meta);
    store.update({ index: 99 });
    expect(store.get().index).toBe(99);
    store.update({ index: 500 });
    expect(store.get().index).toBe(99);
    store.setAxis("x");
    expect(store.get().index).toBe(59); // same relative position
  });

  it("starts at the central axial slice", () => {
    expect(initialState(meta).index).toBe(50);
  });
});
