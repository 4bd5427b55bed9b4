/**
 * Edit-session state: source image, mask strokes, attribute sliders, result
 * gallery. Every gallery entry stores the (attributes, seed, mask hash) that
 * produced it, so any result can be regenerated from its stored request.
 * Sessions serialize to plain JSON for export/import; nothing persists
 * server-side.
 */

import { MaskLayer, Stroke, maskHash } from "./mask.js";
import { maskToPngBase64 } from "./png.js";
import {
  CompletionRequest,
  CompletionResponse,
  ServiceClient,
  SweepRequest,
} from "./api.js";

export type Mode = "reference" | "explicit" | "random";

export interface GalleryEntry {
  image: string; // base64 PNG as returned by the service
  attributes: number[];
  seed: number;
  mode: Mode;
  maskHash: string;
  sweepIndex?: number;
}

export interface SessionJson {
  version: 1;
  resolution: number;
  sourceImage: string | null;
  referenceImage: string | null;
  strokes: Stroke[];
  mode: Mode;
  sliders: number[];
  gallery: GalleryEntry[];
}

export const SLIDER_MIN = -1;
export const SLIDER_MAX = 2;
export const TRAINED_RANGE: [number, number] = [0, 1];

export class EditSession {
  readonly mask: MaskLayer;
  sourceImage: string | null = null;
  referenceImage: string | null = null;
  mode: Mode = "explicit";
  sliders: number[] = new Array(8).fill(0.5);
  gallery: GalleryEntry[] = [];

  constructor(readonly resolution: number) {
    this.mask = new MaskLayer(resolution, resolution);
  }

  setSlider(index: number, value: number): void {
    if (index < 0 || index >= 8) throw new Error(`slider index ${index} out of range`);
    this.sliders[index] = Math.min(SLIDER_MAX, Math.max(SLIDER_MIN, value));
  }

  maskPayload(): { b64: string; hash: string } {
    const raster = this.mask.rasterize();
    return {
      b64: maskToPngBase64(raster, this.mask.width, this.mask.height),
      hash: maskHash(raster),
    };
  }

  /** The request a gallery entry would need to be regenerated, seed included. */
  requestFor(seed?: number, k?: number, sweep?: SweepRequest): CompletionRequest {
    if (!this.sourceImage) throw new Error("no source image loaded");
    const req: CompletionRequest = {
      image: this.sourceImage,
      mask: this.maskPayload().b64,
      mode: this.mode,
      seed,
      sweep,
    };
    if (this.mode === "explicit") req.attributes = [...this.sliders];
    if (this.mode === "reference") {
      if (!this.referenceImage) throw new Error("reference mode needs a reference image");
      req.reference_image = this.referenceImage;
    }
    if (this.mode === "random") req.k = k ?? 3;
    return req;
  }

  ingest(response: CompletionResponse, sweepIndex?: number): GalleryEntry[] {
    const hash = this.maskPayload().hash;
    const entries = response.images.map((image, i) => ({
      image,
      attributes: [...response.attributes_used[i]],
      seed: response.seed,
      mode: this.mode,
      maskHash: hash,
      ...(sweepIndex !== undefined ? { sweepIndex } : {}),
    }));
    this.gallery.push(...entries);
    return entries;
  }

  /** Feed a gallery entry's attribute vector back into the sliders. */
  adopt(entry: GalleryEntry): void {
    if (entry.attributes.length !== 8) throw new Error("gallery entry has no attribute vector");
    this.sliders = [...entry.attributes];
    this.mode = "explicit";
  }

  exportJson(): string {
    const state: SessionJson = {
      version: 1,
      resolution: this.resolution,
      sourceImage: this.sourceImage,
      referenceImage: this.referenceImage,
      strokes: this.mask.strokeList(),
      mode: this.mode,
      sliders: [...this.sliders],
      gallery: this.gallery.map((e) => ({ ...e })),
    };
    return JSON.stringify(state);
  }

  static importJson(text: string): EditSession {
    const state = JSON.parse(text) as SessionJson;
    if (state.version !== 1) throw new Error(`unsupported session version ${state.version}`);
    const session = new EditSession(state.resolution);
    session.sourceImage = state.sourceImage;
    session.referenceImage = state.referenceImage;
    session.mode = state.mode;
    session.sliders = [...state.sliders];
    session.gallery = state.gallery.map((e) => ({ ...e }));
    for (const stroke of state.strokes) session.mask.addStroke(stroke);
    return session;
  }
}

/** Run one completion for the session's mode and add results to the gallery. */
export async function requestCompletion(
  session: EditSession,
  client: ServiceClient,
  seed?: number,
  k?: number,
): Promise<GalleryEntry[]> {
  const response = await client.complete(session.requestFor(seed, k));
  return session.ingest(response);
}

/** Issue an intensity sweep for one attribute; returns the filmstrip entries. */
export async function sweepAttribute(
  session: EditSession,
  client: ServiceClient,
  index: number,
  steps = 7,
  from = SLIDER_MIN,
  to = SLIDER_MAX,
  seed?: number,
): Promise<GalleryEntry[]> {
  if (session.mode === "random") throw new Error("sweep needs explicit or reference mode");
  const response = await client.complete(
    session.requestFor(seed, undefined, { index, from, to, steps }),
  );
  return session.ingest(response, index);
}
