/** Pure annotation-session state machine.
 *
 * All geometry here is normalized [0,1]; the canvas layer owns the only
 * pixel<->normalized mapping. Every mutation returns a status so the view can
 * surface blocked actions without this module touching the DOM.
 */

import {
  AnnotationDict,
  BindingDict,
  Draft,
  FORMAT_VERSION,
  Pt,
  SchemaInfo,
  SlotInfo,
} from "./types.js";

export type ActionResult = { ok: true } | { ok: false; reason: string };

interface UndoEntry {
  slotId: string;
  prior: Draft | null;
}

export class AnnotationSession {
  readonly imageId: string;
  readonly schema: SchemaInfo;
  activeSlot: string;
  dirty = false;
  private drafts = new Map<string, Draft>();
  private undoStack: UndoEntry[] = [];

  constructor(imageId: string, schema: SchemaInfo) {
    if (schema.slots.length === 0) throw new Error("schema has no slots");
    this.imageId = imageId;
    this.schema = schema;
    this.activeSlot = schema.slots[0].slot_id;
  }

  slot(slotId: string): SlotInfo | undefined {
    return this.schema.slots.find((s) => s.slot_id === slotId);
  }

  draft(slotId: string): Draft | null {
    return this.drafts.get(slotId) ?? null;
  }

  selectSlot(slotId: string): ActionResult {
    if (!this.slot(slotId)) return { ok: false, reason: `unknown slot ${slotId}` };
    this.activeSlot = slotId;
    return { ok: true };
  }

  /** Slot selected by 1-based keyboard index (number-key shortcut). */
  selectSlotByIndex(index: number): ActionResult {
    const s = this.schema.slots[index - 1];
    if (!s) return { ok: false, reason: `no slot #${index}` };
    return this.selectSlot(s.slot_id);
  }

  private push(slotId: string) {
    const prior = this.drafts.get(slotId);
    this.undoStack.push({ slotId, prior: prior ? structuredClone(prior) : null });
    this.dirty = true;
  }

  private static inUnit(p: Pt): boolean {
    return p[0] >= 0 && p[0] <= 1 && p[1] >= 0 && p[1] <= 1;
  }

  /** Point tool: one click places (or replaces) the point draft. */
  placePoint(slotId: string, p: Pt): ActionResult {
    const slot = this.slot(slotId);
    if (!slot) return { ok: false, reason: `unknown slot ${slotId}` };
    if (slot.primitive_type !== "point")
      return { ok: false, reason: `slot ${slotId} takes a ${slot.primitive_type}, not a point` };
    if (!AnnotationSession.inUnit(p)) return { ok: false, reason: "point outside the image" };
    this.push(slotId);
    this.drafts.set(slotId, { type: "point", position: [p[0], p[1]] });
    return { ok: true };
  }

  /** Contour/region tool: append one vertex to the open draft. */
  addVertex(slotId: string, p: Pt): ActionResult {
    const slot = this.slot(slotId);
    if (!slot) return { ok: false, reason: `unknown slot ${slotId}` };
    if (slot.primitive_type === "point")
      return { ok: false, reason: `slot ${slotId} takes a point; click once instead` };
    if (!AnnotationSession.inUnit(p)) return { ok: false, reason: "vertex outside the image" };
    const existing = this.drafts.get(slotId);
    this.push(slotId);
    if (slot.primitive_type === "contour") {
      const vertices = existing?.type === "contour" ? [...existing.vertices] : [];
      vertices.push([p[0], p[1]]);
      this.drafts.set(slotId, { type: "contour", vertices, refined: false });
    } else {
      const prior = existing?.type === "region" && !existing.closed ? existing.boundary : [];
      this.drafts.set(slotId, { type: "region", boundary: [...prior, [p[0], p[1]]], closed: false });
    }
    return { ok: true };
  }

  /** Region tool: close the polygon; needs >= 3 vertices. */
  closeRegion(slotId: string): ActionResult {
    const slot = this.slot(slotId);
    if (!slot || slot.primitive_type !== "region")
      return { ok: false, reason: `slot ${slotId} is not a region slot` };
    const d = this.drafts.get(slotId);
    if (!d || d.type !== "region" || d.closed)
      return { ok: false, reason: "no open polygon to close" };
    if (d.boundary.length < 3)
      return { ok: false, reason: "a polygon needs at least 3 vertices" };
    this.push(slotId);
    this.drafts.set(slotId, { type: "region", boundary: [...d.boundary], closed: true });
    return { ok: true };
  }

  undo(): ActionResult {
    const entry = this.undoStack.pop();
    if (!entry) return { ok: false, reason: "nothing to undo" };
    if (entry.prior === null) this.drafts.delete(entry.slotId);
    else this.drafts.set(entry.slotId, entry.prior);
    return { ok: true };
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  /** Contour draft eligible for server-side refinement (>= 2 vertices). */
  refinablePolyline(slotId: string): Pt[] | null {
    const d = this.drafts.get(slotId);
    if (d?.type === "contour" && d.vertices.length >= 2) return d.vertices.map((v) => [v[0], v[1]]);
    return null;
  }

  /** Accept a snapped polyline from the server; replaces the draft. */
  acceptRefinement(slotId: string, snapped: Pt[]): ActionResult {
    const d = this.drafts.get(slotId);
    if (d?.type !== "contour") return { ok: false, reason: "no contour draft to refine" };
    if (snapped.length < 2) return { ok: false, reason: "refined polyline too short" };
    this.push(slotId);
    this.drafts.set(slotId, {
      type: "contour",
      vertices: snapped.map((v) => [v[0], v[1]]),
      refined: true,
    });
    return { ok: true };
  }

  /** Reject is a strict no-op: the draft object is left untouched. */
  rejectRefinement(_slotId: string): ActionResult {
    return { ok: true };
  }

  /** Slots still missing a complete draft (open regions count as missing). */
  incompleteSlots(): string[] {
    return this.schema.slots
      .filter((s) => {
        const d = this.drafts.get(s.slot_id);
        if (!d) return true;
        if (d.type === "contour") return d.vertices.length < 2;
        if (d.type === "region") return !d.closed;
        return false;
      })
      .map((s) => s.slot_id);
  }

  get canSave(): boolean {
    return this.incompleteSlots().length === 0;
  }

  /** Serialize to the annotation wire format; only legal when complete. */
  toRecord(annotator = "annotator-ui"): AnnotationDict {
    if (!this.canSave) throw new Error(`incomplete slots: ${this.incompleteSlots().join(", ")}`);
    const bindings: BindingDict[] = this.schema.slots
      .map((s) => {
        const d = this.drafts.get(s.slot_id)!;
        if (d.type === "point")
          return {
            slot_id: s.slot_id,
            type: "point" as const,
            coords: [d.position],
            kind: "generic",
            strength: 0.0,
          };
        if (d.type === "contour")
          return { slot_id: s.slot_id, type: "contour" as const, coords: d.vertices, closed: false };
        return { slot_id: s.slot_id, type: "region" as const, coords: d.boundary };
      })
      .sort((a, b) => (a.slot_id < b.slot_id ? -1 : 1));
    return {
      format_version: FORMAT_VERSION,
      image_id: this.imageId,
      schema_name: this.schema.class_name,
      annotator,
      refined: this.schema.slots.some((s) => {
        const d = this.drafts.get(s.slot_id);
        return d?.type === "contour" && d.refined;
      }),
      bindings,
    };
  }

  markSaved() {
    this.dirty = false;
  }
}
