/**
 * Typed client for the drawing server's JSON API.
 *
 * Every method returns parsed, camelCased data or throws ApiError with the
 * HTTP status and the server's detail message. The fetch implementation is
 * injectable so tests can run against a stub or a live server alike.
 */
import { z } from "zod";

export type Vec3 = [number, number, number];

export interface Question {
  questionId: string;
  style: string;
  drawingIds: string[];
  drawingUrls: string[];
  answered: number;
  total: number;
}

export interface StyleProgress {
  answered: number;
  total: number;
}

export interface Progress {
  session: string;
  answered: number;
  total: number;
  byStyle: Record<string, StyleProgress>;
}

export interface ScoreRow {
  id: string;
  style: string;
  raw: number;
  normalized: number;
  nAppearances: number;
}

export interface Health {
  status: string;
  modelLoaded: boolean;
  pool: number;
  questions: number;
}

export interface Generated {
  png: Uint8Array;
  echoedVector: Vec3;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

const healthSchema = z.object({
  status: z.string(),
  model_loaded: z.boolean(),
  pool: z.number(),
  questions: z.number(),
});

const questionSchema = z.object({
  question_id: z.string(),
  style: z.string(),
  drawing_ids: z.array(z.string()).length(3),
  drawing_urls: z.array(z.string()).length(3),
  answered: z.number(),
  total: z.number(),
});

const answerAckSchema = z.object({
  accepted: z.literal(true),
  progress: z.object({ answered: z.number(), total: z.number() }),
});

const progressSchema = z.object({
  session: z.string(),
  answered: z.number(),
  total: z.number(),
  by_style: z.record(
    z.string(),
    z.object({ answered: z.number(), total: z.number() }),
  ),
});

const scoresSchema = z.object({
  scores: z.array(
    z.object({
      id: z.string(),
      style: z.string(),
      raw: z.number(),
      normalized: z.number(),
      n_appearances: z.number(),
    }),
  ),
});

const photosSchema = z.object({ photos: z.array(z.string()) });

async function detailOf(res: Response): Promise<string> {
  try {
    const body = (await res.json()) as { detail?: unknown };
    if (typeof body.detail === "string") return body.detail;
    return JSON.stringify(body.detail ?? body);
  } catch {
    return res.statusText || `HTTP ${res.status}`;
  }
}

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  /** Absolute URL for a server-relative path such as a drawing_urls entry. */
  resolve(path: string): string {
    return new URL(path, this.baseUrl).toString();
  }

  imageUrl(imageId: string): string {
    return this.resolve(`/api/image/${encodeURIComponent(imageId)}`);
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const res = await this.fetchImpl(this.resolve(path), init);
    if (!res.ok) throw new ApiError(res.status, await detailOf(res));
    return res;
  }

  private async getJson<T>(path: string, schema: z.ZodType<T>): Promise<T> {
    const res = await this.request(path);
    return schema.parse(await res.json());
  }

  async health(): Promise<Health> {
    const h = await this.getJson("/api/health", healthSchema);
    return {
      status: h.status,
      modelLoaded: h.model_loaded,
      pool: h.pool,
      questions: h.questions,
    };
  }

  async photos(): Promise<string[]> {
    return (await this.getJson("/api/photos", photosSchema)).photos;
  }

  /** Next unanswered question for the session. 409 means the pool is done. */
  async nextQuestion(session: string): Promise<Question> {
    const q = await this.getJson(
      `/api/study/next?session=${encodeURIComponent(session)}`,
      questionSchema,
    );
    return {
      questionId: q.question_id,
      style: q.style,
      drawingIds: q.drawing_ids,
      drawingUrls: q.drawing_urls,
      answered: q.answered,
      total: q.total,
    };
  }

  /**
   * Submit a ranking. `order` lists the served drawing ids worst first and
   * best last; the server rejects anything that is not a permutation of the
   * ids it served for this question.
   */
  async submitAnswer(
    session: string,
    questionId: string,
    order: string[],
  ): Promise<{ answered: number; total: number }> {
    const res = await this.request("/api/study/answer", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ session, question_id: questionId, order }),
    });
    return answerAckSchema.parse(await res.json()).progress;
  }

  async progress(session: string): Promise<Progress> {
    const p = await this.getJson(
      `/api/study/progress?session=${encodeURIComponent(session)}`,
      progressSchema,
    );
    return {
      session: p.session,
      answered: p.answered,
      total: p.total,
      byStyle: p.by_style,
    };
  }

  async scores(): Promise<ScoreRow[]> {
    const s = await this.getJson("/api/study/scores", scoresSchema);
    return s.scores.map((row) => ({
      id: row.id,
      style: row.style,
      raw: row.raw,
      normalized: row.normalized,
      nAppearances: row.n_appearances,
    }));
  }

  /**
   * Render a photo under a style vector. Returns the PNG bytes together
   * with the vector the server echoes back in its response header, which
   * callers compare against what they sent.
   */
  async generate(photoId: string, style: Vec3): Promise<Generated> {
    const res = await this.request("/api/generate", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ photo_id: photoId, style }),
    });
    const echoed = res.headers.get("x-style-vector");
    if (echoed === null) throw new ApiError(500, "missing style echo header");
    const parts = echoed.split(",").map(Number);
    if (parts.length !== 3 || parts.some(Number.isNaN)) {
      throw new ApiError(500, `unparseable style echo ${echoed}`);
    }
    return {
      png: new Uint8Array(await res.arrayBuffer()),
      echoedVector: parts as Vec3,
    };
  }
}
