// Page wiring: two lockstep viewports, label buttons, presets, status panel.

import { ApiClient } from "./api.js";
import { OrbitCamera, PresetName } from "./camera.js";
import { AnnotationFlow } from "./flow.js";
import { frameObject, renderViewport } from "./renderer.js";
import { StatusPoller } from "./status.js";
import type { LabelChoice, PairPayload } from "./types.js";

const api = new ApiClient("");
const camera = new OrbitCamera();

const canvasA = document.getElementById("viewport-a") as HTMLCanvasElement;
const canvasB = document.getElementById("viewport-b") as HTMLCanvasElement;
const banner = document.getElementById("banner")!;
const retryButton = document.getElementById("retry") as HTMLButtonElement;
const statusFields = {
  step: document.getElementById("status-step")!,
  archive: document.getElementById("status-archive")!,
  labels: document.getElementById("status-labels")!,
  version: document.getElementById("status-version")!,
  stale: document.getElementById("status-stale")!,
};

let currentPair: PairPayload | null = null;

function draw(): void {
  if (currentPair === null) return;
  renderViewport(canvasA.getContext("2d")!, camera,
                 currentPair.object_points, currentPair.grasps.a);
  renderViewport(canvasB.getContext("2d")!, camera,
                 currentPair.object_points, currentPair.grasps.b);
}

const flow = new AnnotationFlow(api, {
  onPair: (pair) => {
    currentPair = pair;
    frameObject(camera, pair.object_points);
    document.getElementById("pair-id")!.textContent = pair.pair_id;
    draw();
  },
  onState: (state, message) => {
    document.body.dataset.flow = state;
    if (state === "error" || state === "retry") {
      banner.textContent = message ?? state;
      banner.classList.remove("hidden");
      retryButton.classList.toggle("hidden", state !== "retry");
    } else {
      banner.classList.add("hidden");
      retryButton.classList.add("hidden");
    }
    for (const id of ["choose-a", "choose-b", "choose-similar"]) {
      (document.getElementById(id) as HTMLButtonElement).disabled = state !== "ready";
    }
  },
});

for (const [id, choice] of [["choose-a", "A"], ["choose-b", "B"],
                            ["choose-similar", "similar"]] as [string, LabelChoice][]) {
  document.getElementById(id)!.addEventListener("click", () => void flow.submit(choice));
}
retryButton.addEventListener("click", () => void flow.retry());

for (const name of ["front", "side", "top"] as PresetName[]) {
  document.getElementById(`preset-${name}`)!.addEventListener("click", () => {
    camera.applyPreset(name);
    draw();
  });
}

// shared orbit controls: dragging either canvas moves both viewports
for (const canvas of [canvasA, canvasB]) {
  let dragging = false;
  let last: [number, number] = [0, 0];
  canvas.addEventListener("mousedown", (ev) => {
    dragging = true;
    last = [ev.clientX, ev.clientY];
  });
  window.addEventListener("mouseup", () => { dragging = false; });
  window.addEventListener("mousemove", (ev) => {
    if (!dragging) return;
    camera.orbit((ev.clientX - last[0]) * 0.01, (ev.clientY - last[1]) * 0.01);
    last = [ev.clientX, ev.clientY];
    draw();
  });
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    camera.zoom(ev.deltaY > 0 ? 1.1 : 1 / 1.1);
    draw();
  }, { passive: false });
}

const poller = new StatusPoller(api, ({ payload, stale }) => {
  if (payload !== null) {
    statusFields.step.textContent = String(payload.run_step);
    statusFields.archive.textContent = String(payload.archive_size);
    statusFields.labels.textContent = String(payload.labels_collected);
    statusFields.version.textContent = String(payload.reward_model_version);
  }
  statusFields.stale.classList.toggle("hidden", !stale);
});

poller.start();
void flow.loadNext();
