// Session state machine: one clip at a time, a score must be chosen (and the
// clip heard once, when the policy demands it) before submitting; a failed
// submission keeps all state so the rater can retry.

import { MosApi, SessionPayload, PlaylistClip } from "./api.js";

export const SCORE_LABELS: ReadonlyArray<[number, string]> = [
  [1, "Bad"],
  [2, "Poor"],
  [3, "Fair"],
  [4, "Good"],
  [5, "Excellent"],
];

export type Score = 1 | 2 | 3 | 4 | 5;

export interface ControllerOptions {
  // Require one full playback before the clip can be scored.
  requireFullListen?: boolean;
}

export class SessionController {
  readonly session: SessionPayload;
  private readonly api: MosApi;
  private readonly requireFullListen: boolean;
  private position: number;
  private selected: Score | null = null;
  private listened = false;
  private readonly submitted = new Set<string>();
  private lastError: string | null = null;

  constructor(api: MosApi, session: SessionPayload, options: ControllerOptions = {}) {
    this.api = api;
    this.session = session;
    this.requireFullListen = options.requireFullListen ?? true;
    for (const clipId of session.rated) {
      this.submitted.add(clipId);
    }
    // resume at the first unrated clip, in playlist order
    this.position = session.playlist.findIndex((c) => !this.submitted.has(c.clip_id));
    if (this.position < 0) {
      this.position = session.playlist.length;
    }
  }

  current(): PlaylistClip | null {
    return this.isComplete() ? null : this.session.playlist[this.position];
  }

  isComplete(): boolean {
    return this.position >= this.session.playlist.length;
  }

  progress(): { done: number; total: number } {
    return { done: this.submitted.size, total: this.session.playlist.length };
  }

  selectedScore(): Score | null {
    return this.selected;
  }

  error(): string | null {
    return this.lastError;
  }

  selectScore(score: number): void {
    if (![1, 2, 3, 4, 5].includes(score)) {
      throw new Error(`score must be 1..5, got ${score}`);
    }
    this.selected = score as Score;
  }

  markListened(): void {
    this.listened = true;
  }

  hasListened(): boolean {
    return this.listened || !this.requireFullListen;
  }

  canSubmit(): boolean {
    return !this.isComplete() && this.selected !== null && this.hasListened();
  }

  /** Submit the selected score; advance on success, keep state on failure. */
  async submitAndAdvance(): Promise<boolean> {
    const clip = this.current();
    if (clip === null || !this.canSubmit() || this.selected === null) {
      return false;
    }
    try {
      await this.api.submitRating(this.session.session_id, clip.clip_id, this.selected);
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
      return false;
    }
    this.lastError = null;
    this.submitted.add(clip.clip_id);
    this.selected = null;
    this.listened = false;
    this.position += 1;
    return true;
  }
}

export async function startSession(
  api: MosApi,
  raterId: string,
  options: ControllerOptions = {},
): Promise<SessionController> {
  const session = await api.fetchSession(raterId);
  return new SessionController(api, session, options);
}
