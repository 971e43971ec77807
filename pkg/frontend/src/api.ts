// HTTP client for the listening-test service. The payloads are blinded:
// nothing here ever sees which system produced a clip.

export interface PlaylistClip {
  clip_id: string;
  name: string;
  url: string;
}

export interface SessionPayload {
  session_id: string;
  rater_id: string;
  order_seed: number;
  playlist: PlaylistClip[];
  rated: string[];
}

export interface RatingAck {
  ok: boolean;
  replaced: boolean;
}

export class ApiError extends Error {
  readonly status: number;

  constructor(status: number, message: string) {
    super(message);
    this.status = status;
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class MosApi {
  private readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl = "", fetchImpl: FetchLike = (...args) => fetch(...args)) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.fetchImpl = fetchImpl;
  }

  async fetchSession(raterId: string): Promise<SessionPayload> {
    const resp = await this.fetchImpl(
      `${this.baseUrl}/api/session?rater=${encodeURIComponent(raterId)}`,
    );
    if (!resp.ok) {
      throw new ApiError(resp.status, `session request failed (${resp.status})`);
    }
    return (await resp.json()) as SessionPayload;
  }

  clipUrl(clip: PlaylistClip): string {
    return `${this.baseUrl}${clip.url}`;
  }

  async submitRating(sessionId: string, clipId: string, score: number): Promise<RatingAck> {
    const resp = await this.fetchImpl(`${this.baseUrl}/api/rating`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ session_id: sessionId, clip_id: clipId, score }),
    });
    if (!resp.ok) {
      let detail = `rating rejected (${resp.status})`;
      try {
        const body = (await resp.json()) as { message?: string };
        if (body.message) detail = body.message;
      } catch {
        // non-JSON error body; keep the generic message
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as RatingAck;
  }
}
