/**
 * State machine for the preference study.
 *
 * One instance drives one annotator session: it pulls questions from the
 * server, holds the worst-to-best ordering the annotator builds up, and
 * submits it. Question ids are never invented locally; every transition out
 * of the ranking phase is acknowledged by the server first.
 */
import { ApiClient, ApiError, Question } from "./api.js";

/** 1 is worst, 3 is best. */
export type Rank = 1 | 2 | 3;

export interface Slot {
  id: string;
  url: string;
  rank: Rank | null;
}

export type Phase =
  | "idle"
  | "loading"
  | "ranking"
  | "submitting"
  | "done"
  | "error";

export class StudySession {
  phase: Phase = "idle";
  question: Question | null = null;
  slots: Slot[] = [];
  answered = 0;
  total = 0;
  lastError: string | null = null;
  private inFlight = false;

  constructor(
    private readonly api: ApiClient,
    readonly session: string,
  ) {}

  /** Fetch the next question; flips to "done" once the pool is exhausted. */
  async load(): Promise<void> {
    if (this.inFlight) return;
    this.inFlight = true;
    this.phase = "loading";
    this.lastError = null;
    try {
      const q = await this.api.nextQuestion(this.session);
      this.question = q;
      this.slots = q.drawingIds.map((id, i) => ({
        id,
        url: q.drawingUrls[i] ?? "",
        rank: null,
      }));
      this.answered = q.answered;
      this.total = q.total;
      this.phase = "ranking";
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.question = null;
        this.slots = [];
        this.phase = "done";
      } else {
        this.lastError = String(err instanceof Error ? err.message : err);
        this.phase = "error";
      }
    } finally {
      this.inFlight = false;
    }
  }

  /**
   * Assign a rank to a slot. If another slot already holds that rank the
   * two swap, so each rank has at most one owner and keyboard users can
   * re-rank freely without clearing first.
   */
  setRank(slotIndex: number, rank: Rank): void {
    if (this.phase !== "ranking" && this.phase !== "error") return;
    const slot = this.slots[slotIndex];
    if (!slot) return;
    const holder = this.slots.find((s) => s.rank === rank);
    if (holder && holder !== slot) holder.rank = slot.rank;
    slot.rank = rank;
  }

  get canSubmit(): boolean {
    return (
      this.slots.length === 3 && this.slots.every((s) => s.rank !== null)
    );
  }

  /** Served ids sorted worst first, or null until fully ranked. */
  orderedIds(): string[] | null {
    if (!this.canSubmit) return null;
    return [...this.slots]
      .sort((a, b) => (a.rank as number) - (b.rank as number))
      .map((s) => s.id);
  }

  /**
   * Post the current ordering. A concurrent call while one is already in
   * flight is a no-op, so a double click can never log two answers. On a
   * replay conflict the server already has this answer; the session
   * reconciles from the server's progress instead of resubmitting. Any
   * other failure keeps the ordering intact so a retry resubmits it as-is.
   */
  async submit(): Promise<void> {
    const order = this.orderedIds();
    if (order === null || this.question === null) return;
    if (this.inFlight || this.phase === "submitting") return;
    this.inFlight = true;
    this.phase = "submitting";
    this.lastError = null;
    try {
      const ack = await this.api.submitAnswer(
        this.session,
        this.question.questionId,
        order,
      );
      this.answered = ack.answered;
      this.total = ack.total;
      this.clearQuestion();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        const p = await this.api.progress(this.session);
        this.answered = p.answered;
        this.total = p.total;
        this.clearQuestion();
      } else {
        this.lastError = String(err instanceof Error ? err.message : err);
        this.phase = "error";
      }
    } finally {
      this.inFlight = false;
    }
  }

  private clearQuestion(): void {
    this.question = null;
    this.slots = [];
    this.phase = "idle";
  }
}
