// The side-by-side comparison instrument.
//
// Left pane: the two candidate clips stacked in place, exactly one visible;
// toggling swaps visibility without touching sources or playback position,
// so the switch is seamless at the current frame.  Right pane: the original,
// always visible and never replaced.  Flip/pause counters and the answer
// clock feed the telemetry of the eventual submission.

import type { Choice, ComparisonMedia } from './types.js';

export const INSTRUCTIONS =
  'Toggle between the two versions of the left video and pick the one ' +
  'closest to the original on the right. You may pause at any time.';

export interface ViewTelemetry {
  flips: number;
  pauses: number;
  answerTimeMs: number;
}

export class ComparisonView {
  readonly root: HTMLElement;
  private readonly videoA: HTMLVideoElement;
  private readonly videoB: HTMLVideoElement;
  private readonly videoOriginal: HTMLVideoElement;
  private visible: 'a' | 'b';
  private flipCount = 0;
  private pauseCount = 0;
  private startedAt: number | null = null;
  private pausedNow = false;
  private selectedChoice: Choice | null = null;
  private readonly now: () => number;

  constructor(
    container: HTMLElement,
    initialVisible: 'a' | 'b' = 'a',
    doc: Document = document,
    now: () => number = () => Date.now(),
  ) {
    this.visible = initialVisible;
    this.now = now;
    this.root = doc.createElement('div');
    this.root.className = 'comparison';
    this.root.innerHTML = `
      <p class="instructions">${INSTRUCTIONS}</p>
      <div class="pane pane-left">
        <video data-slot="a" loop muted playsinline></video>
        <video data-slot="b" loop muted playsinline></video>
        <button data-action="toggle">Switch version</button>
      </div>
      <div class="pane pane-right">
        <video data-slot="original" loop muted playsinline></video>
        <span class="label">Original</span>
      </div>
      <div class="controls">
        <button data-action="pause">Pause</button>
        <button data-action="choose-visible">This version is closest</button>
      </div>`;
    this.videoA = this.root.querySelector('video[data-slot="a"]') as HTMLVideoElement;
    this.videoB = this.root.querySelector('video[data-slot="b"]') as HTMLVideoElement;
    this.videoOriginal = this.root.querySelector(
      'video[data-slot="original"]',
    ) as HTMLVideoElement;
    (this.root.querySelector('[data-action="toggle"]') as HTMLElement).addEventListener(
      'click',
      () => this.toggle(),
    );
    (this.root.querySelector('[data-action="pause"]') as HTMLElement).addEventListener(
      'click',
      () => this.togglePause(),
    );
    (this.root.querySelector('[data-action="choose-visible"]') as HTMLElement).addEventListener(
      'click',
      () => this.select(this.visible === 'a' ? 'A' : 'B'),
    );
    container.appendChild(this.root);
  }

  /** Load the prefetched clips and start synchronized looping playback. */
  present(media: ComparisonMedia): void {
    this.videoA.src = media.a;
    this.videoB.src = media.b;
    this.videoOriginal.src = media.original;
    for (const video of this.videos()) {
      video.loop = true;
      video.muted = true;
    }
    this.applyVisibility();
    this.playAll();
    this.startedAt = this.now();
  }

  /** Swap which candidate is visible, in place; never reloads or re-seeks. */
  toggle(): void {
    this.visible = this.visible === 'a' ? 'b' : 'a';
    this.flipCount += 1;
    this.applyVisibility();
  }

  /** Pause (counted) or resume (not counted); positions are preserved. */
  togglePause(): void {
    if (this.pausedNow) {
      this.playAll();
      this.pausedNow = false;
    } else {
      for (const video of this.videos()) video.pause();
      this.pauseCount += 1;
      this.pausedNow = true;
    }
  }

  select(choice: Choice): void {
    this.selectedChoice = choice;
    this.root.dataset.selected = choice;
  }

  get selected(): Choice | null {
    return this.selectedChoice;
  }

  get visibleSlot(): 'a' | 'b' {
    return this.visible;
  }

  /** Telemetry for submission; throws if nothing was selected (forced choice). */
  telemetry(): ViewTelemetry {
    if (this.selectedChoice === null) {
      throw new Error('forced choice: select a version before submitting');
    }
    if (this.startedAt === null) {
      throw new Error('comparison was never presented');
    }
    return {
      flips: this.flipCount,
      pauses: this.pauseCount,
      answerTimeMs: Math.max(0, this.now() - this.startedAt),
    };
  }

  dispose(): void {
    this.root.remove();
  }

  private videos(): HTMLVideoElement[] {
    return [this.videoA, this.videoB, this.videoOriginal];
  }

  private applyVisibility(): void {
    // visibility swap only: sources and currentTime stay untouched
    this.videoA.style.display = this.visible === 'a' ? '' : 'none';
    this.videoB.style.display = this.visible === 'b' ? '' : 'none';
  }

  private playAll(): void {
    for (const video of this.videos()) {
      // jsdom and some browsers return undefined instead of a promise
      void Promise.resolve(video.play() as unknown).catch(() => undefined);
    }
  }
}
