/** DTOs mirroring the annotation service's JSON bodies. */

export interface SlideSummary {
  slide_id: string;
  maceration_id: string;
  genus: string | null;
  width_px: number;
  height_px: number;
  plane_count: number;
  pixel_scale_um: number;
}

export interface SlideDetail extends SlideSummary {
  tile_size: number;
  levels: number[];
  annotation_count: number;
  pending_count: number;
  genera: string[];
}

export type Source = "human" | "predicted" | "corrected";
export type Review = "pending" | "accepted" | "rejected";

export interface AnnotationRecord {
  annotation_id: string;
  slide_id: string;
  /** [x_min, y_min, x_max, y_max] in level-0 pixels */
  bbox: [number, number, number, number];
  genus: string | null;
  confidence: number | null;
  source: Source;
  review: Review;
  version: number;
}

export type CorrectionAction = "accept" | "adjust" | "reject";

export interface CorrectionRequest {
  annotation_id: string;
  expected_version: number;
  action: CorrectionAction;
  bbox?: [number, number, number, number];
  genus?: string;
  reviewer: string;
}

export interface ServiceError {
  code: string;
  message: string;
  current?: AnnotationRecord;
}
