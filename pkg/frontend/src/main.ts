/** Canvas annotation app: slot list, drawing tools, refine overlay, save. */

import { ApiClient, ApiError } from "./api.js";
import { AnnotationSession } from "./session.js";
import { Draft, Pt, SchemaInfo } from "./types.js";
import { Viewport } from "./viewport.js";

const SLOT_COLORS = [
  "#e6194b", "#3cb44b", "#4363d8", "#f58231",
  "#911eb4", "#42d4f4", "#f032e6", "#9a6324",
];

class App {
  private api = new ApiClient();
  private schema!: SchemaInfo;
  private session: AnnotationSession | null = null;
  private image: HTMLImageElement | null = null;
  private pending: string[] = [];
  private viewport = new Viewport(640, 640, 640);
  private refinePreview: { slotId: string; polyline: Pt[] } | null = null;
  private lastSavedVersion = new Map<string, number>();

  private canvas = document.getElementById("canvas") as HTMLCanvasElement;
  private slotList = document.getElementById("slots") as HTMLElement;
  private statusEl = document.getElementById("status") as HTMLElement;
  private saveBtn = document.getElementById("save") as HTMLButtonElement;
  private refineBtn = document.getElementById("refine") as HTMLButtonElement;
  private undoBtn = document.getElementById("undo") as HTMLButtonElement;
  private acceptBtn = document.getElementById("accept") as HTMLButtonElement;
  private rejectBtn = document.getElementById("reject") as HTMLButtonElement;

  async start() {
    this.schema = await this.api.schema();
    this.pending = await this.api.pendingImages();
    this.wireEvents();
    if (this.pending.length === 0) {
      this.status("no pending images — everything is annotated");
      return;
    }
    await this.loadImage(this.pending[0]);
  }

  private async loadImage(imageId: string) {
    this.session = new AnnotationSession(imageId, this.schema);
    this.refinePreview = null;
    this.image = await this.fetchImage(imageId);
    this.viewport.reset();
    this.viewport.imageScale = this.canvas.width;
    this.status(`annotating ${imageId} (${this.pending.length} pending)`);
    this.render();
  }

  private fetchImage(imageId: string): Promise<HTMLImageElement> {
    return new Promise((resolve, reject) => {
      const img = new Image();
      img.onload = () => resolve(img);
      img.onerror = () => reject(new Error(`failed to load image ${imageId}`));
      img.src = this.api.imageUrl(imageId);
    });
  }

  private status(msg: string, isError = false) {
    this.statusEl.textContent = msg;
    this.statusEl.className = isError ? "status error" : "status";
  }

  // -------------------------------------------------------------- events

  private wireEvents() {
    this.canvas.addEventListener("click", (e) => this.onClick(e));
    this.canvas.addEventListener("dblclick", (e) => {
      e.preventDefault();
      this.onCloseRegion();
    });
    this.canvas.addEventListener("wheel", (e) => {
      e.preventDefault();
      const r = this.canvas.getBoundingClientRect();
      this.viewport.zoomAt(e.clientX - r.left, e.clientY - r.top, e.deltaY < 0 ? 1.2 : 1 / 1.2);
      this.render();
    });
    let dragging = false;
    let last: Pt = [0, 0];
    this.canvas.addEventListener("mousedown", (e) => {
      if (e.button === 1 || e.shiftKey) {
        dragging = true;
        last = [e.clientX, e.clientY];
        e.preventDefault();
      }
    });
    window.addEventListener("mousemove", (e) => {
      if (!dragging) return;
      this.viewport.panBy(e.clientX - last[0], e.clientY - last[1]);
      last = [e.clientX, e.clientY];
      this.render();
    });
    window.addEventListener("mouseup", () => (dragging = false));

    window.addEventListener("keydown", (e) => {
      if (e.target instanceof HTMLInputElement) return;
      const k = e.key.toLowerCase();
      if (k >= "1" && k <= "9") this.onSelectIndex(Number(k));
      else if (k === "z") this.onUndo();
      else if (k === "r") void this.onRefine();
      else if (k === "s") void this.onSave();
      else if (k === "enter") this.onCloseRegion();
      else return;
      e.preventDefault();
    });

    this.saveBtn.addEventListener("click", () => void this.onSave());
    this.refineBtn.addEventListener("click", () => void this.onRefine());
    this.undoBtn.addEventListener("click", () => this.onUndo());
    this.acceptBtn.addEventListener("click", () => this.onAcceptRefine());
    this.rejectBtn.addEventListener("click", () => this.onRejectRefine());
  }

  private onClick(e: MouseEvent) {
    if (!this.session || e.shiftKey) return;
    const r = this.canvas.getBoundingClientRect();
    const p = this.viewport.toNormalized(e.clientX - r.left, e.clientY - r.top);
    const slot = this.session.slot(this.session.activeSlot)!;
    const result =
      slot.primitive_type === "point"
        ? this.session.placePoint(slot.slot_id, p)
        : this.session.addVertex(slot.slot_id, p);
    if (!result.ok) this.status(result.reason, true);
    else this.status(`drew on ${slot.slot_id}`);
    this.render();
  }

  private onSelectIndex(index: number) {
    if (!this.session) return;
    const r = this.session.selectSlotByIndex(index);
    if (r.ok) this.status(`active slot: ${this.session.activeSlot}`);
    this.render();
  }

  private onCloseRegion() {
    if (!this.session) return;
    const r = this.session.closeRegion(this.session.activeSlot);
    if (!r.ok) this.status(r.reason, true);
    this.render();
  }

  private onUndo() {
    if (!this.session) return;
    const r = this.session.undo();
    if (!r.ok) this.status(r.reason, true);
    this.render();
  }

  private async onRefine() {
    if (!this.session) return;
    const slotId = this.session.activeSlot;
    const polyline = this.session.refinablePolyline(slotId);
    if (!polyline) {
      this.status("active slot has no contour to refine", true);
      return;
    }
    try {
      const resp = await this.api.refine(this.session.imageId, polyline);
      if (!resp.snapped) {
        this.status("no refinement: polyline is not near a consistent edge");
        return;
      }
      this.refinePreview = { slotId, polyline: resp.polyline };
      this.status("refinement ready — accept or reject");
    } catch (err) {
      this.status(`refine failed: ${err instanceof Error ? err.message : err}`, true);
    }
    this.render();
  }

  private onAcceptRefine() {
    if (!this.session || !this.refinePreview) return;
    const { slotId, polyline } = this.refinePreview;
    const r = this.session.acceptRefinement(slotId, polyline);
    this.refinePreview = null;
    this.status(r.ok ? "refinement accepted" : r.reason, !r.ok);
    this.render();
  }

  private onRejectRefine() {
    if (!this.session || !this.refinePreview) return;
    this.session.rejectRefinement(this.refinePreview.slotId);
    this.refinePreview = null;
    this.status("refinement rejected — draft unchanged");
    this.render();
  }

  private async onSave() {
    if (!this.session) return;
    if (!this.session.canSave) {
      this.status(`cannot save — missing: ${this.session.incompleteSlots().join(", ")}`, true);
      return;
    }
    try {
      const record = this.session.toRecord();
      const resp = await this.api.saveAnnotation(record);
      const prior = this.lastSavedVersion.get(this.session.imageId);
      if (prior !== undefined && resp.version !== prior + 1) {
        this.status(
          `warning: version jumped ${prior} -> ${resp.version}; someone else edited this image`,
          true,
        );
      }
      this.lastSavedVersion.set(this.session.imageId, resp.version);
      this.session.markSaved();
      this.pending = this.pending.filter((id) => id !== this.session!.imageId);
      if (this.pending.length > 0) await this.loadImage(this.pending[0]);
      else {
        this.session = null;
        this.image = null;
        this.status("all images annotated");
        this.render();
      }
    } catch (err) {
      if (err instanceof ApiError) this.status(`save rejected: ${err.message}`, true);
      else this.status(`save failed: ${err instanceof Error ? err.message : err}`, true);
    }
  }

  // -------------------------------------------------------------- render

  private render() {
    const ctx = this.canvas.getContext("2d")!;
    ctx.fillStyle = "#202020";
    ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
    if (this.image) {
      const [x0, y0] = this.viewport.toCanvas([0, 0]);
      const [x1, y1] = this.viewport.toCanvas([1, 1]);
      ctx.imageSmoothingEnabled = false;
      ctx.drawImage(this.image, x0, y0, x1 - x0, y1 - y0);
    }
    if (this.session) {
      this.schema.slots.forEach((s, i) => {
        const d = this.session!.draft(s.slot_id);
        if (d) this.drawDraft(ctx, d, SLOT_COLORS[i % SLOT_COLORS.length]);
      });
      if (this.refinePreview) this.drawPolyline(ctx, this.refinePreview.polyline, "#ffff00", true);
    }
    this.renderSlotList();
    this.saveBtn.disabled = !this.session?.canSave;
    const hasPreview = this.refinePreview !== null;
    this.acceptBtn.style.display = hasPreview ? "" : "none";
    this.rejectBtn.style.display = hasPreview ? "" : "none";
  }

  private drawDraft(ctx: CanvasRenderingContext2D, d: Draft, color: string) {
    if (d.type === "point") {
      const [cx, cy] = this.viewport.toCanvas(d.position);
      ctx.strokeStyle = color;
      ctx.lineWidth = 2;
      ctx.beginPath();
      ctx.arc(cx, cy, 5, 0, 2 * Math.PI);
      ctx.stroke();
    } else if (d.type === "contour") {
      this.drawPolyline(ctx, d.vertices, color, false);
    } else {
      this.drawPolyline(ctx, d.closed ? [...d.boundary, d.boundary[0]] : d.boundary, color, false);
    }
  }

  private drawPolyline(
    ctx: CanvasRenderingContext2D,
    pts: Pt[],
    color: string,
    dashed: boolean,
  ) {
    if (pts.length === 0) return;
    ctx.strokeStyle = color;
    ctx.lineWidth = 2;
    ctx.setLineDash(dashed ? [6, 4] : []);
    ctx.beginPath();
    const [x0, y0] = this.viewport.toCanvas(pts[0]);
    ctx.moveTo(x0, y0);
    for (const p of pts.slice(1)) {
      const [x, y] = this.viewport.toCanvas(p);
      ctx.lineTo(x, y);
    }
    ctx.stroke();
    ctx.setLineDash([]);
    for (const p of pts) {
      const [x, y] = this.viewport.toCanvas(p);
      ctx.fillStyle = color;
      ctx.fillRect(x - 2, y - 2, 4, 4);
    }
  }

  private renderSlotList() {
    this.slotList.innerHTML = "";
    if (!this.session) return;
    this.schema.slots.forEach((s, i) => {
      const li = document.createElement("li");
      const missing = this.session!.incompleteSlots().includes(s.slot_id);
      li.textContent = `${i + 1}. ${s.name} [${s.primitive_type}] ${missing ? "•" : "✓"}`;
      li.style.color = SLOT_COLORS[i % SLOT_COLORS.length];
      if (s.slot_id === this.session!.activeSlot) li.className = "active";
      li.addEventListener("click", () => {
        this.session!.selectSlot(s.slot_id);
        this.render();
      });
      this.slotList.appendChild(li);
    });
  }
}

new App().start().catch((err) => {
  const el = document.getElementById("status");
  if (el) el.textContent = `startup failed: ${err instanceof Error ? err.message : err}`;
});
