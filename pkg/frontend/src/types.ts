// Wire format of the study service HTTP API.

export type Choice = 'A' | 'B';

/** One comparison as the (blinded) session endpoint returns it. */
export interface ComparisonRef {
  id: string;
  media: {
    a: string;
    b: string;
    original: string;
  };
}

export interface SessionPayload {
  rater_id: string;
  comparisons: ComparisonRef[];
}

/** Body of POST /api/response. */
export interface ResponseBody {
  rater_id: string;
  comparison_id: string;
  choice: Choice;
  flips: number;
  pauses: number;
  answer_time_ms: number;
}

/** Object URLs of prefetched clips, ready for in-place switching. */
export interface ComparisonMedia {
  a: string;
  b: string;
  original: string;
}
