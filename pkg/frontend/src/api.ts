// Client for the study service: session assignment, media prefetch, and
// response submission with retries.
//
// Submission is idempotent on (rater_id, comparison_id): the server answers
// 409 for a duplicate, which a retrying client treats as "already recorded".

import type { ResponseBody, SessionPayload } from './types.js';

export class StudyApi {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchFn: typeof fetch = (...args) => fetch(...args),
    private readonly retryDelayMs: number = 250,
  ) {}

  async fetchSession(raterId: string): Promise<SessionPayload> {
    const res = await this.fetchFn(
      `${this.baseUrl}/api/session?rater_id=${encodeURIComponent(raterId)}`,
    );
    if (!res.ok) throw new Error(`session request failed: ${res.status}`);
    return (await res.json()) as SessionPayload;
  }

  /** Download one clip and hand back an object URL for a video element. */
  async fetchMediaUrl(path: string): Promise<string> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`);
    if (!res.ok) throw new Error(`media request failed: ${res.status}`);
    return URL.createObjectURL(await res.blob());
  }

  /**
   * Post one response, retrying transient failures.  A 409 means an earlier
   * attempt already landed, so it counts as success.
   */
  async postResponse(body: ResponseBody, maxAttempts = 3): Promise<void> {
    let lastError: unknown = null;
    for (let attempt = 0; attempt < maxAttempts; attempt++) {
      if (attempt > 0) await delay(this.retryDelayMs * attempt);
      try {
        const res = await this.fetchFn(`${this.baseUrl}/api/response`, {
          method: 'POST',
          headers: { 'content-type': 'application/json' },
          body: JSON.stringify(body),
        });
        if (res.ok || res.status === 409) return;
        if (res.status >= 400 && res.status < 500) {
          throw new Error(`response rejected: ${res.status}`);
        }
        lastError = new Error(`response failed: ${res.status}`);
      } catch (err) {
        if (err instanceof Error && err.message.startsWith('response rejected')) throw err;
        lastError = err;
      }
    }
    throw lastError instanceof Error ? lastError : new Error('response submission failed');
  }
}

function delay(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
