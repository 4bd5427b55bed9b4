/**
 * Stroke-based hole mask with undo/redo.
 *
 * The data mask is always produced by replaying the stroke list through the
 * pure rasterizer below; the canvas is only a view. Convention matches the
 * service: 1 = valid (kept) pixel, 0 = hole.
 */

export interface Stroke {
  points: Array<[number, number]>;
  width: number;
}

/** Stamp round-capped strokes as holes onto an all-valid grid. */
export function rasterizeStrokes(
  width: number,
  height: number,
  strokes: readonly Stroke[],
): Uint8Array {
  const mask = new Uint8Array(width * height).fill(1);
  for (const stroke of strokes) {
    const r = Math.max(stroke.width / 2, 0.5);
    const pts = stroke.points.length === 1
      ? [stroke.points[0], stroke.points[0]]
      : stroke.points;
    for (let i = 0; i + 1 < pts.length; i++) {
      stampSegment(mask, width, height, pts[i], pts[i + 1], r);
    }
  }
  return mask;
}

function stampSegment(
  mask: Uint8Array,
  width: number,
  height: number,
  [x0, y0]: [number, number],
  [x1, y1]: [number, number],
  radius: number,
): void {
  const length = Math.hypot(x1 - x0, y1 - y0);
  const steps = Math.max(1, Math.ceil(length * 2)); // <= half-pixel spacing
  for (let s = 0; s <= steps; s++) {
    const t = s / steps;
    stampDisc(mask, width, height, x0 + (x1 - x0) * t, y0 + (y1 - y0) * t, radius);
  }
}

function stampDisc(
  mask: Uint8Array,
  width: number,
  height: number,
  cx: number,
  cy: number,
  radius: number,
): void {
  const r2 = radius * radius;
  const xMin = Math.max(0, Math.floor(cx - radius));
  const xMax = Math.min(width - 1, Math.ceil(cx + radius));
  const yMin = Math.max(0, Math.floor(cy - radius));
  const yMax = Math.min(height - 1, Math.ceil(cy + radius));
  for (let y = yMin; y <= yMax; y++) {
    for (let x = xMin; x <= xMax; x++) {
      const dx = x + 0.5 - cx;
      const dy = y + 0.5 - cy;
      if (dx * dx + dy * dy <= r2) mask[y * width + x] = 0;
    }
  }
}

export class MaskLayer {
  readonly width: number;
  readonly height: number;
  private strokes: Stroke[] = [];
  private undone: Stroke[] = [];

  constructor(width: number, height: number) {
    this.width = width;
    this.height = height;
  }

  get strokeCount(): number {
    return this.strokes.length;
  }

  strokeList(): Stroke[] {
    // deep copy so callers cannot bypass undo history
    return this.strokes.map((s) => ({ width: s.width, points: s.points.map((p) => [...p] as [number, number]) }));
  }

  addStroke(stroke: Stroke): void {
    if (stroke.points.length === 0) return;
    this.strokes.push({
      width: stroke.width,
      points: stroke.points.map((p) => [...p] as [number, number]),
    });
    this.undone = []; // a new stroke invalidates the redo branch
  }

  undo(): boolean {
    const s = this.strokes.pop();
    if (!s) return false;
    this.undone.push(s);
    return true;
  }

  redo(): boolean {
    const s = this.undone.pop();
    if (!s) return false;
    this.strokes.push(s);
    return true;
  }

  clear(): void {
    this.strokes = [];
    this.undone = [];
  }

  rasterize(): Uint8Array {
    return rasterizeStrokes(this.width, this.height, this.strokes);
  }

  holeRatio(): number {
    const m = this.rasterize();
    let holes = 0;
    for (const v of m) if (v === 0) holes++;
    return holes / m.length;
  }
}

/** FNV-1a hash of the raster, used to key gallery entries to their mask. */
export function maskHash(raster: Uint8Array): string {
  let h = 0x811c9dc5;
  for (const v of raster) {
    h ^= v;
    h = Math.imul(h, 0x01000193);
  }
  return (h >>> 0).toString(16).padStart(8, "0");
}
