/**
 * DOM wiring for the studio: paint a mask over an uploaded photo, pick a
 * reference image or dial the eight attribute sliders, request completions,
 * and iterate. All model math happens in the service; this file only moves
 * pixels and JSON around.
 */

import { ServiceClient, ServiceError } from "./api.js";
import { rasterizeStrokes, Stroke } from "./mask.js";
import { base64ToBytes, bytesToBase64 } from "./png.js";
import {
  EditSession,
  GalleryEntry,
  requestCompletion,
  SLIDER_MAX,
  SLIDER_MIN,
  sweepAttribute,
  TRAINED_RANGE,
} from "./session.js";

const ATTRIBUTES = [
  "Bushy_Eyebrows",
  "Mouth_Slightly_Open",
  "Big_Lips",
  "Male",
  "Mustache",
  "Smiling",
  "Wearing_Lipstick",
  "No_Beard",
];

const client = new ServiceClient("");
let session: EditSession;
let resolution = 64;
let brushWidth = 12;
let painting: Stroke | null = null;
let inFlight: AbortController | null = null;

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

function status(text: string, isError = false): void {
  const el = $("status");
  el.textContent = text;
  el.classList.toggle("error", isError);
}

async function init(): Promise<void> {
  try {
    const health = await client.health();
    if (health.status !== "ok" || !health.resolution) {
      status("service has no checkpoint loaded; load one via /v1/admin/load", true);
      resolution = 64;
    } else {
      resolution = health.resolution;
      status(`checkpoint ${health.checkpoint_id} at ${resolution}px`);
    }
  } catch {
    status("cannot reach the inference service", true);
  }
  session = new EditSession(resolution);
  buildSliders();
  wireCanvas();
  wireControls();
  redraw();
}

function buildSliders(): void {
  const host = $("sliders");
  host.innerHTML = "";
  ATTRIBUTES.forEach((name, i) => {
    const row = document.createElement("label");
    row.className = "slider-row";
    row.title = `trained range is ${TRAINED_RANGE[0]}..${TRAINED_RANGE[1]}; beyond extrapolates`;
    const span = document.createElement("span");
    span.textContent = name.replaceAll("_", " ");
    const input = document.createElement("input");
    input.type = "range";
    input.min = String(SLIDER_MIN);
    input.max = String(SLIDER_MAX);
    input.step = "0.05";
    input.value = String(session.sliders[i]);
    input.dataset.index = String(i);
    const value = document.createElement("code");
    value.textContent = input.value;
    input.addEventListener("input", () => {
      session.setSlider(i, Number(input.value));
      value.textContent = Number(input.value).toFixed(2);
    });
    row.append(span, input, value);
    host.append(row);
  });
}

function refreshSliders(): void {
  document.querySelectorAll<HTMLInputElement>("#sliders input").forEach((input) => {
    const i = Number(input.dataset.index);
    input.value = String(session.sliders[i]);
    (input.nextElementSibling as HTMLElement).textContent = session.sliders[i].toFixed(2);
  });
}

function canvasPoint(ev: PointerEvent): [number, number] {
  const canvas = $("paint") as HTMLCanvasElement;
  const rect = canvas.getBoundingClientRect();
  return [
    ((ev.clientX - rect.left) / rect.width) * resolution,
    ((ev.clientY - rect.top) / rect.height) * resolution,
  ];
}

function wireCanvas(): void {
  const canvas = $("paint") as HTMLCanvasElement;
  canvas.width = resolution;
  canvas.height = resolution;
  canvas.addEventListener("pointerdown", (ev) => {
    canvas.setPointerCapture(ev.pointerId);
    painting = { points: [canvasPoint(ev)], width: brushWidth };
    redraw();
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (!painting) return;
    painting.points.push(canvasPoint(ev));
    redraw();
  });
  const finish = () => {
    if (painting) {
      session.mask.addStroke(painting);
      painting = null;
      redraw();
    }
  };
  canvas.addEventListener("pointerup", finish);
  canvas.addEventListener("pointercancel", finish);
}

function redraw(): void {
  const canvas = $("paint") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d")!;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const source = $("source") as HTMLImageElement;
  if (source.src) ctx.drawImage(source, 0, 0, resolution, resolution);

  // the displayed raster comes from the same stroke replay that feeds the
  // service, so what you see is exactly what gets exported
  const strokes = session.mask.strokeList();
  if (painting) strokes.push(painting);
  const raster = rasterizeStrokes(resolution, resolution, strokes);

  const shade = ctx.createImageData(resolution, resolution);
  for (let i = 0; i < raster.length; i++) {
    shade.data[i * 4 + 3] = raster[i] === 0 ? 160 : 0; // darken holes
  }
  const overlay = document.createElement("canvas");
  overlay.width = resolution;
  overlay.height = resolution;
  overlay.getContext("2d")!.putImageData(shade, 0, 0);
  ctx.drawImage(overlay, 0, 0);
}

async function fileToB64(file: File): Promise<string> {
  const bytes = new Uint8Array(await file.arrayBuffer());
  return bytesToBase64(bytes);
}

function b64ToObjectUrl(b64: string): string {
  const bytes = base64ToBytes(b64);
  const copy = new Uint8Array(bytes.length);
  copy.set(bytes);
  const blob = new Blob([copy.buffer], { type: "image/png" });
  return URL.createObjectURL(blob);
}

function renderGallery(): void {
  const host = $("gallery");
  host.innerHTML = "";
  session.gallery.forEach((entry, i) => {
    host.append(tile(entry, `#${i}`));
  });
}

function tile(entry: GalleryEntry, label: string): HTMLElement {
  const card = document.createElement("figure");
  card.className = "tile";
  const img = document.createElement("img");
  img.src = b64ToObjectUrl(entry.image);
  const cap = document.createElement("figcaption");
  cap.textContent = `${label} seed ${entry.seed} mask ${entry.maskHash}`;
  const adopt = document.createElement("button");
  adopt.textContent = "adopt attrs";
  adopt.addEventListener("click", () => {
    session.adopt(entry);
    refreshSliders();
    $("mode-explicit").click();
  });
  card.append(img, cap, adopt);
  return card;
}

function renderFilmstrip(entries: GalleryEntry[]): void {
  const host = $("filmstrip");
  host.innerHTML = "";
  entries.forEach((entry, i) => host.append(tile(entry, `step ${i}`)));
}

function wireControls(): void {
  ($("upload") as HTMLInputElement).addEventListener("change", async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (!file) return;
    session.sourceImage = await fileToB64(file);
    const img = $("source") as HTMLImageElement;
    img.src = b64ToObjectUrl(session.sourceImage);
    img.onload = redraw;
  });
  ($("reference-upload") as HTMLInputElement).addEventListener("change", async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (!file) return;
    session.referenceImage = await fileToB64(file);
    try {
      const res = await client.extract(session.referenceImage);
      res.attributes.forEach((v, i) => session.setSlider(i, v));
      refreshSliders();
      status("extracted attributes from reference");
    } catch (err) {
      surface(err);
    }
  });

  ($("brush") as HTMLInputElement).addEventListener("input", (ev) => {
    brushWidth = Number((ev.target as HTMLInputElement).value);
  });
  $("undo").addEventListener("click", () => {
    session.mask.undo();
    redraw();
  });
  $("redo").addEventListener("click", () => {
    session.mask.redo();
    redraw();
  });
  $("clear").addEventListener("click", () => {
    session.mask.clear();
    redraw();
  });

  for (const mode of ["reference", "explicit", "random"] as const) {
    $(`mode-${mode}`).addEventListener("click", () => {
      session.mode = mode;
      document
        .querySelectorAll(".mode-tabs button")
        .forEach((b) => b.classList.toggle("active", b.id === `mode-${mode}`));
    });
  }

  $("complete").addEventListener("click", async () => {
    inFlight?.abort(); // later clicks cancel, by default
    inFlight = new AbortController();
    status("completing...");
    try {
      const entries = await requestCompletion(session, client, seedInput());
      renderGallery();
      status(`received ${entries.length} completion(s), seed ${entries[0]?.seed}`);
    } catch (err) {
      surface(err);
    }
  });

  $("sweep").addEventListener("click", async () => {
    const index = Number(($("sweep-attr") as HTMLSelectElement).value);
    status("sweeping...");
    try {
      const entries = await sweepAttribute(session, client, index, 7);
      renderFilmstrip(entries);
      status(`filmstrip of ${entries.length} frames for ${ATTRIBUTES[index]}`);
    } catch (err) {
      surface(err);
    }
  });

  const select = $("sweep-attr") as HTMLSelectElement;
  ATTRIBUTES.forEach((name, i) => {
    const opt = document.createElement("option");
    opt.value = String(i);
    opt.textContent = name;
    select.append(opt);
  });

  $("export").addEventListener("click", () => {
    const blob = new Blob([session.exportJson()], { type: "application/json" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "studio-session.json";
    a.click();
  });
  ($("import") as HTMLInputElement).addEventListener("change", async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (!file) return;
    session = EditSession.importJson(await file.text());
    refreshSliders();
    renderGallery();
    redraw();
    status("session imported");
  });
}

function seedInput(): number | undefined {
  const raw = ($("seed") as HTMLInputElement).value.trim();
  return raw === "" ? undefined : Number(raw);
}

function surface(err: unknown): void {
  if (err instanceof ServiceError) {
    status(`service error ${err.status}: ${err.detail}`, true);
  } else {
    status(String(err), true);
  }
}

init();
