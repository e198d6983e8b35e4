/** Shared wire types mirroring the HTTP API. All coordinates normalized [0,1]. */

export type PrimitiveType = "point" | "contour" | "region";

export interface SlotInfo {
  slot_id: string;
  name: string;
  primitive_type: PrimitiveType;
}

export interface SchemaInfo {
  class_name: string;
  relation_tier: string;
  slots: SlotInfo[];
}

export type Pt = [number, number];

export interface PointDraft {
  type: "point";
  position: Pt;
}

export interface ContourDraft {
  type: "contour";
  vertices: Pt[];
  /** true once an accepted edge-snap refinement replaced the vertices */
  refined: boolean;
}

export interface RegionDraft {
  type: "region";
  boundary: Pt[];
  closed: boolean;
}

export type Draft = PointDraft | ContourDraft | RegionDraft;

/** Serialized binding entry as the annotation format expects it. */
export interface BindingDict {
  slot_id: string;
  type: PrimitiveType;
  coords: Pt[];
  kind?: string;
  strength?: number;
  closed?: boolean;
}

export interface AnnotationDict {
  format_version: string;
  image_id: string;
  schema_name: string;
  annotator: string;
  refined: boolean;
  bindings: BindingDict[];
}

export interface RefineResponse {
  polyline: Pt[];
  snapped: boolean;
}

export const FORMAT_VERSION = "1.0";
