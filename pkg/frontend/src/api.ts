/**
 * Typed client for the campaign service HTTP API.
 *
 * The client is deliberately thin: every method maps to one endpoint and
 * returns the decoded JSON body.  Transport failures surface as rejected
 * promises with the original error; HTTP-level failures (anything outside
 * 2xx) reject with an ApiError carrying the status code so callers can
 * distinguish a stale assignment (409/404) from a broken network.
 */

export type Verdict = "YES" | "NO" | "UNSURE";

export interface Assignment {
  status: "OK";
  question_id: string;
  image_id: string;
  image_url: string;
  /** Normalized point coordinates in [0, 1], pixel-center convention. */
  x: number;
  y: number;
  class_id: number;
  class_name: string;
  round: number;
  lease_seconds: number;
}

export interface NoWork {
  status: "NO_WORK";
}

export type NextResponse = Assignment | NoWork;

export interface Progress {
  questions_total: number;
  answered: number;
  points_resolved: { yes: number; no: number; unresolved: number };
  mean_latency_ms: number | null;
}

export interface AnswerPayload {
  question_id: string;
  annotator: string;
  verdict: Verdict;
  latency_ms: number;
}

export class ApiError extends Error {
  readonly status: number;

  constructor(status: number, message: string) {
    super(message);
    this.name = "ApiError";
    this.status = status;
  }
}

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
  text(): Promise<string>;
}>;

export class ApiClient {
  private readonly base: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl: string, fetchFn?: FetchLike) {
    // Trailing slash stripped so path joins stay predictable.
    this.base = baseUrl.replace(/\/+$/, "");
    const fallback = globalThis.fetch as unknown as FetchLike;
    this.fetchFn = fetchFn ?? fallback;
  }

  /** Absolute URL for a server-relative path such as an image_url. */
  resolve(path: string): string {
    if (/^https?:\/\//.test(path)) return path;
    return this.base + (path.startsWith("/") ? path : "/" + path);
  }

  async nextQuestion(annotator: string): Promise<NextResponse> {
    const url =
      this.base + "/api/next?annotator=" + encodeURIComponent(annotator);
    const res = await this.fetchFn(url);
    if (!res.ok) throw new ApiError(res.status, await safeText(res));
    return (await res.json()) as NextResponse;
  }

  async submitAnswer(payload: AnswerPayload): Promise<void> {
    const res = await this.fetchFn(this.base + "/api/answer", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (!res.ok) throw new ApiError(res.status, await safeText(res));
    await res.json();
  }

  async progress(): Promise<Progress> {
    const res = await this.fetchFn(this.base + "/api/progress");
    if (!res.ok) throw new ApiError(res.status, await safeText(res));
    return (await res.json()) as Progress;
  }
}

async function safeText(res: { text(): Promise<string> }): Promise<string> {
  try {
    return await res.text();
  } catch {
    return "";
  }
}
