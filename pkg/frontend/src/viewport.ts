/** The single canvas<->normalized coordinate mapping layer.
 *
 * Geometry is stored exclusively in normalized [0,1] image coordinates; zoom
 * and pan live only here, so no drawn primitive ever depends on the current
 * view transform.
 */

import { Pt } from "./types.js";

export class Viewport {
  zoom = 1;
  panX = 0; // canvas-pixel offset of the image origin
  panY = 0;

  constructor(
    public canvasWidth: number,
    public canvasHeight: number,
    public imageScale: number, // canvas pixels per image unit at zoom 1
  ) {}

  /** Canvas pixel -> normalized image coordinates. */
  toNormalized(cx: number, cy: number): Pt {
    const s = this.imageScale * this.zoom;
    return [(cx - this.panX) / s, (cy - this.panY) / s];
  }

  /** Normalized image coordinates -> canvas pixel. */
  toCanvas(p: Pt): Pt {
    const s = this.imageScale * this.zoom;
    return [p[0] * s + this.panX, p[1] * s + this.panY];
  }

  /** Zoom about a canvas-space anchor so the point under the cursor stays put. */
  zoomAt(cx: number, cy: number, factor: number) {
    const before = this.toNormalized(cx, cy);
    this.zoom = Math.min(16, Math.max(0.25, this.zoom * factor));
    const after = this.toCanvas(before);
    this.panX += cx - after[0];
    this.panY += cy - after[1];
  }

  panBy(dx: number, dy: number) {
    this.panX += dx;
    this.panY += dy;
  }

  reset() {
    this.zoom = 1;
    this.panX = 0;
    this.panY = 0;
  }
}
