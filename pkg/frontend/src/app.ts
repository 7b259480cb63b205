// Session orchestration: walk the rater through their assigned comparisons
// in order, one at a time, with no back-navigation; submit each forced
// choice with its telemetry; end on a completion screen with a receipt.
//
// Clips for both candidates and the original are prefetched before a
// comparison is shown so in-place toggling never waits on the network.  A
// comparison whose media fails to load is skipped locally (the service's
// wire format has no skip channel; an unanswered comparison is equivalent).

import { StudyApi } from './api.js';
import { ComparisonView } from './comparison-view.js';
import type { ComparisonMedia, ComparisonRef, SessionPayload } from './types.js';

export interface SessionOutcome {
  submitted: string[];
  skipped: string[];
}

export class SessionRunner {
  private view: ComparisonView | null = null;
  private index = 0;
  private session: SessionPayload | null = null;
  private media: ComparisonMedia | null = null;
  private readonly outcome: SessionOutcome = { submitted: [], skipped: [] };

  constructor(
    private readonly api: StudyApi,
    private readonly raterId: string,
    private readonly container: HTMLElement,
    private readonly doc: Document = document,
    private readonly now: () => number = () => Date.now(),
  ) {}

  async start(): Promise<SessionOutcome> {
    this.session = await this.api.fetchSession(this.raterId);
    await this.advance();
    return this.outcome;
  }

  /** The comparison currently on screen (null once complete). */
  get current(): ComparisonRef | null {
    if (!this.session || this.index >= this.session.comparisons.length) return null;
    return this.session.comparisons[this.index];
  }

  get activeView(): ComparisonView | null {
    return this.view;
  }

  /** Submit the current selection; rejects when nothing is selected. */
  async submit(): Promise<void> {
    const comparison = this.current;
    if (!comparison || !this.view) throw new Error('no active comparison');
    const choice = this.view.selected;
    if (choice === null) {
      throw new Error('forced choice: select a version before submitting');
    }
    const telemetry = this.view.telemetry();
    await this.api.postResponse({
      rater_id: this.raterId,
      comparison_id: comparison.id,
      choice,
      flips: telemetry.flips,
      pauses: telemetry.pauses,
      answer_time_ms: telemetry.answerTimeMs,
    });
    this.outcome.submitted.push(comparison.id);
    this.index += 1;
    await this.advance();
  }

  private async advance(): Promise<void> {
    this.view?.dispose();
    this.view = null;
    while (this.current) {
      const comparison = this.current;
      try {
        this.media = {
          a: await this.api.fetchMediaUrl(comparison.media.a),
          b: await this.api.fetchMediaUrl(comparison.media.b),
          original: await this.api.fetchMediaUrl(comparison.media.original),
        };
      } catch {
        this.outcome.skipped.push(comparison.id);
        this.index += 1;
        continue;
      }
      this.view = new ComparisonView(this.container, 'a', this.doc, this.now);
      this.view.present(this.media);
      return;
    }
    this.renderCompletion();
  }

  private renderCompletion(): void {
    const done = this.doc.createElement('div');
    done.className = 'completion';
    const receipt = `${this.raterId}:${this.outcome.submitted.length}:${this.now()}`;
    done.innerHTML = `
      <h2>All comparisons answered</h2>
      <p>Thank you! Your session receipt:</p>
      <code class="receipt">${receipt}</code>`;
    this.container.appendChild(done);
  }
}
