// Browser entry point: wires the store, API client and canvas together.

import { ApiClient } from "./api.js";
import { clampIndex, sliceCount, sliceSize, type Axis } from "./geometry.js";
import { buildScene } from "./overlay.js";
import { pollJob } from "./poll.js";
import { markSeed } from "./seeds.js";
import { Store, seedsPayload } from "./state.js";

const MASK_KINDS = ["body", "trabecular", "voi_cylinder", "voi_pacman"];

async function start(): Promise<void> {
  const base = (window as unknown as { VQCT_BASE?: string }).VQCT_BASE ?? "";
  const api = new ApiClient(base);
  const meta = await api.getMeta();
  const store = new Store(meta);

  const canvas = document.getElementById("view") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d")!;
  const axisSel = document.getElementById("axis") as HTMLSelectElement;
  const slider = document.getElementById("slice") as HTMLInputElement;
  const runBtn = document.getElementById("run") as HTMLButtonElement;
  const status = document.getElementById("status") as HTMLElement;
  const overlayBox = document.getElementById("overlays") as HTMLElement;
  const reportPre = document.getElementById("report") as HTMLElement;

  const images = new Map<string, HTMLImageElement>();

  function image(url: string): HTMLImageElement {
    let img = images.get(url);
    if (!img) {
      img = new Image();
      img.src = url;
      img.onload = () => render();
      images.set(url, img);
    }
    return img;
  }

  function render(): void {
    const state = store.get();
    const { width, height } = sliceSize(meta, state.axis);
    canvas.width = width;
    canvas.height = height;
    for (const op of buildScene(state, meta, api)) {
      if (op.kind === "slice" || op.kind === "mask") {
        const img = image(op.kind === "slice" ? op.url : op.url);
        if (img.complete) ctx.drawImage(img, 0, 0);
      } else {
        ctx.strokeStyle = op.kind === "seed" ? "#20d020" : "#40c0ff";
        ctx.beginPath();
        ctx.arc(op.col, op.row, 4, 0, 2 * Math.PI);
        ctx.stroke();
        ctx.fillStyle = ctx.strokeStyle;
        ctx.font = "10px sans-serif";
        const label = op.kind === "seed" ? op.name : op.label;
        ctx.fillText(label, op.col + 6, op.row - 6);
      }
    }
    slider.max = String(sliceCount(meta, state.axis) - 1);
    slider.value = String(state.index);
  }

  function rebuildOverlayToggles(): void {
    const report = store.get().report as { levels?: Record<string, unknown> } | null;
    overlayBox.innerHTML = "";
    if (!report?.levels) return;
    for (const level of Object.keys(report.levels)) {
      for (const kind of MASK_KINDS) {
        const name = `${level}_${kind}`;
        const label = document.createElement("label");
        const box = document.createElement("input");
        box.type = "checkbox";
        box.onchange = () => store.toggleOverlay(name);
        label.append(box, ` ${name} `);
        overlayBox.append(label);
      }
    }
  }

  axisSel.onchange = () => store.setAxis(axisSel.value as Axis);
  slider.oninput = () => store.update({ index: clampIndex(meta, store.get().axis, Number(slider.value)) });

  canvas.onclick = async (ev) => {
    const rect = canvas.getBoundingClientRect();
    const col = ((ev.clientX - rect.left) / rect.width) * canvas.width;
    const row = ((ev.clientY - rect.top) / rect.height) * canvas.height;
    const state = store.get();
    const result = markSeed(state.seeds, meta, state.axis, state.index, col, row);
    store.update({ seeds: result.seeds });
    await api.postSeeds(seedsPayload(result.seeds));
    const echoed = await api.getSeeds();
    status.textContent = `${echoed.levels.length} seed(s) stored`;
  };

  runBtn.onclick = async () => {
    try {
      const { job_id } = await api.startRun();
      status.textContent = `running ${job_id}...`;
      await pollJob(api, job_id, (s) => {
        status.textContent = `${s.stage} (${s.percent}%)`;
      });
      const report = await api.getReport();
      store.update({ report });
      rebuildOverlayToggles();
      reportPre.textContent = JSON.stringify(report, null, 2);
      status.textContent = "done";
    } catch (err) {
      status.textContent = String(err);
    }
  };

  store.subscribe(() => render());
  render();
}

start().catch((err) => {
  document.body.textContent = `failed to start viewer: ${err}`;
});
