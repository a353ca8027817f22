/**
 * Session controller for the annotation UI.
 *
 * Framework-free state machine so the full behaviour is testable without a
 * browser: the view layer injects a render callback, a clock, and a
 * scheduler.  Invariants enforced here rather than in the DOM code:
 *
 *  - exactly one active question; a second input for the same question is a
 *    silent no-op (the phase flips to "submitting" synchronously on the
 *    first accepted input);
 *  - no answer is ever sent for a question that has not finished rendering;
 *    the latency timer starts at render-complete, not at fetch time;
 *  - at most one /api/next request in flight; an answer submission and the
 *    prefetch of the following question may overlap, but renders happen in
 *    strict fetch order;
 *  - NO_WORK lands on a done screen with no timers armed;
 *  - transport failures raise a retry banner with exponential backoff;
 *    stale-assignment responses (409/404) show a transient notice and the
 *    question is refreshed without blocking.
 *
 * Every state transition is appended to an event log so tests can assert
 * ordering properties instead of trusting the implementation.
 */

import {
  Assignment,
  ApiError,
  AnswerPayload,
  NextResponse,
  Progress,
  Verdict,
} from "./api.js";

export type Phase = "idle" | "loading" | "question" | "submitting" | "done" | "error";

export type Modality = "click" | "key";

export interface ViewState {
  phase: Phase;
  assignment: Assignment | null;
  /** Instruction banner; shown once per session until the first input. */
  showInstructions: boolean;
  /** Transient, non-blocking notice (stale assignment and similar). */
  notice: string | null;
  /** Blocking retry banner text when the service is unreachable. */
  errorBanner: string | null;
  retryInMs: number | null;
  /** Answers accepted this session. */
  answeredHere: number;
  /** Last campaign-wide progress snapshot, if any. */
  progress: Progress | null;
}

export interface LogEntry {
  at: number;
  event:
    | "fetch"
    | "no-work"
    | "rendered"
    | "input"
    | "submit"
    | "submit-ok"
    | "submit-stale"
    | "submit-error"
    | "fetch-error"
    | "retry-scheduled"
    | "instructions-shown";
  questionId?: string;
  detail?: string;
}

export const INSTRUCTION_TEXT =
  "simply answer based on your own beliefs. No need to overthink the question.";

const RETRY_BASE_MS = 1000;
const RETRY_MAX_MS = 30000;

export interface ControllerApi {
  nextQuestion(annotator: string): Promise<NextResponse>;
  submitAnswer(payload: AnswerPayload): Promise<void>;
  progress(): Promise<Progress>;
}

export interface ControllerDeps {
  api: ControllerApi;
  annotator: string;
  /** Monotonic clock in milliseconds (performance.now in the browser). */
  now(): number;
  /** setTimeout-like hook; injected so tests control backoff timing. */
  schedule(fn: () => void, delayMs: number): void;
  render(state: ViewState): void;
  /** True when the instruction banner was already shown this session. */
  instructionsSeen?: () => boolean;
  markInstructionsSeen?: () => void;
}

export class AnnotationController {
  private readonly deps: ControllerDeps;
  private readonly log: LogEntry[] = [];

  private phase: Phase = "idle";
  private assignment: Assignment | null = null;
  private renderedAt: number | null = null;
  private showInstructions = false;
  private notice: string | null = null;
  private errorBanner: string | null = null;
  private retryInMs: number | null = null;
  private answeredHere = 0;
  private progress: Progress | null = null;
  private retryDelay = RETRY_BASE_MS;

  constructor(deps: ControllerDeps) {
    this.deps = deps;
  }

  eventLog(): readonly LogEntry[] {
    return this.log;
  }

  state(): ViewState {
    return {
      phase: this.phase,
      assignment: this.assignment,
      showInstructions: this.showInstructions,
      notice: this.notice,
      errorBanner: this.errorBanner,
      retryInMs: this.retryInMs,
      answeredHere: this.answeredHere,
      progress: this.progress,
    };
  }

  async start(): Promise<void> {
    const seen = this.deps.instructionsSeen?.() ?? false;
    if (!seen) {
      this.showInstructions = true;
      this.deps.markInstructionsSeen?.();
      this.record("instructions-shown");
    }
    await this.refreshProgress();
    await this.fetchAndRenderNext();
  }

  /**
   * View callback once the question image has actually painted.  Starts the
   * latency timer; inputs before this are ignored.
   */
  questionRendered(questionId: string): void {
    if (this.phase !== "question") return;
    if (!this.assignment || this.assignment.question_id !== questionId) return;
    if (this.renderedAt !== null) return;
    this.renderedAt = this.deps.now();
    this.record("rendered", questionId);
  }

  /**
   * Handle one YES/NO/UNSURE input.  Returns true when the input was
   * accepted; repeated or premature inputs return false and change nothing.
   */
  answer(verdict: Verdict, modality: Modality): boolean {
    if (this.phase !== "question") return false;
    if (this.assignment === null || this.renderedAt === null) return false;

    const assignment = this.assignment;
    const latency = Math.max(1, Math.round(this.deps.now() - this.renderedAt));
    this.phase = "submitting";
    this.notice = null;
    this.showInstructions = false;
    this.record("input", assignment.question_id, `${verdict}/${modality}`);
    this.emit();

    void this.submitAndAdvance(assignment, verdict, latency);
    return true;
  }

  private async submitAndAdvance(
    assignment: Assignment,
    verdict: Verdict,
    latency: number,
    prefetch?: Promise<NextResponse | null>,
  ): Promise<void> {
    const payload: AnswerPayload = {
      question_id: assignment.question_id,
      annotator: this.deps.annotator,
      verdict,
      latency_ms: latency,
    };

    // Prefetch may overlap the submission; the result is only used on the
    // clean path and only when it is a genuinely different open question.
    // Retries pass a settled placeholder so only one /api/next request is
    // ever in flight.
    if (prefetch === undefined) {
      prefetch = this.deps.api
        .nextQuestion(this.deps.annotator)
        .catch(() => null);
    }

    this.record("submit", assignment.question_id);
    try {
      await this.deps.api.submitAnswer(payload);
    } catch (err) {
      if (err instanceof ApiError && (err.status === 409 || err.status === 404)) {
        // Stale assignment: somebody else answered it or the lease lapsed.
        // Not an error for the annotator; mention it and move on.
        this.record("submit-stale", assignment.question_id, String(err.status));
        this.notice =
          err.status === 409
            ? "That question was already answered elsewhere; here is the next one."
            : "That question expired; here is the next one.";
        await prefetch; // settle; result discarded, its lease may be tainted
        await this.fetchAndRenderNext();
        return;
      }
      // Transport failure: the answer may or may not have reached the
      // server.  Retry with backoff; a 409 on retry means it did land.
      this.record("submit-error", assignment.question_id, String(err));
      this.scheduleRetry(() =>
        this.submitAndAdvance(assignment, verdict, latency, Promise.resolve(null)),
      );
      return;
    }

    this.record("submit-ok", assignment.question_id);
    this.answeredHere += 1;
    this.retryDelay = RETRY_BASE_MS;
    await this.refreshProgress();

    const next = await prefetch;
    if (
      next !== null &&
      next.status === "OK" &&
      next.question_id !== assignment.question_id
    ) {
      this.showQuestion(next);
      return;
    }
    // Prefetch unusable: failed, raced to NO_WORK before our answer could
    // spawn a follow-up question, or re-issued the question just answered.
    await this.fetchAndRenderNext();
  }

  private async fetchAndRenderNext(): Promise<void> {
    this.phase = "loading";
    this.assignment = null;
    this.renderedAt = null;
    this.emit();

    this.record("fetch");
    let res: NextResponse;
    try {
      res = await this.deps.api.nextQuestion(this.deps.annotator);
    } catch (err) {
      this.record("fetch-error", undefined, String(err));
      this.scheduleRetry(() => this.fetchAndRenderNext());
      return;
    }

    if (res.status === "NO_WORK") {
      this.record("no-work");
      this.phase = "done";
      this.assignment = null;
      this.renderedAt = null;
      this.errorBanner = null;
      this.retryInMs = null;
      this.emit();
      return;
    }
    this.showQuestion(res);
  }

  private showQuestion(assignment: Assignment): void {
    this.phase = "question";
    this.assignment = assignment;
    this.renderedAt = null;
    this.errorBanner = null;
    this.retryInMs = null;
    this.retryDelay = RETRY_BASE_MS;
    this.emit();
  }

  private scheduleRetry(action: () => void): void {
    const delay = this.retryDelay;
    this.retryDelay = Math.min(this.retryDelay * 2, RETRY_MAX_MS);
    this.phase = "error";
    this.errorBanner = "Cannot reach the annotation server. Retrying shortly.";
    this.retryInMs = delay;
    this.record("retry-scheduled", undefined, `${delay}ms`);
    this.emit();
    this.deps.schedule(() => {
      this.errorBanner = null;
      this.retryInMs = null;
      action();
    }, delay);
  }

  private async refreshProgress(): Promise<void> {
    try {
      this.progress = await this.deps.api.progress();
    } catch {
      // A stale counter never blocks annotation.
    }
  }

  private record(event: LogEntry["event"], questionId?: string, detail?: string): void {
    const entry: LogEntry = { at: this.deps.now(), event };
    if (questionId !== undefined) entry.questionId = questionId;
    if (detail !== undefined) entry.detail = detail;
    this.log.push(entry);
  }

  private emit(): void {
    this.deps.render(this.state());
  }
}
