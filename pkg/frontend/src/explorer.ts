/**
 * State machine for the style explorer: a photo, three style sliders, the
 * latest generation, and a history that can replay any earlier request.
 */
import { ApiClient, ApiError, Vec3 } from "./api.js";

export const PRESETS: Record<string, Vec3> = {
  e1: [1, 0, 0],
  e2: [0, 1, 0],
  e3: [0, 0, 1],
  blend: [0, 0.5, 0.5],
};

export interface HistoryEntry {
  photoId: string;
  vector: Vec3;
  echoedVector: Vec3;
  png: Uint8Array;
}

const ECHO_TOLERANCE = 1e-6;

function vectorsMatch(a: Vec3, b: Vec3): boolean {
  return a.every((x, i) => Math.abs(x - b[i]!) <= ECHO_TOLERANCE);
}

export class Explorer {
  vector: Vec3 = [1, 0, 0];
  photoId: string | null = null;
  latest: HistoryEntry | null = null;
  history: HistoryEntry[] = [];
  banner: string | null = null;
  busy = false;

  constructor(private readonly api: ApiClient) {}

  setSlider(index: 0 | 1 | 2, value: number): void {
    this.vector[index] = Math.min(1, Math.max(0, value));
  }

  applyPreset(name: keyof typeof PRESETS): void {
    const preset = PRESETS[name];
    if (preset) this.vector = [...preset] as Vec3;
  }

  /**
   * Request a drawing for the current photo and sliders. Slider values are
   * normalized to sum to one and written back, so what the page shows is
   * exactly what was sent; a mismatch against the server's echoed vector is
   * surfaced in the banner rather than silently accepted.
   */
  async generate(): Promise<HistoryEntry | null> {
    if (this.busy) return null;
    this.banner = null;
    if (this.photoId === null) {
      this.banner = "select a photo first";
      return null;
    }
    const sum = this.vector[0] + this.vector[1] + this.vector[2];
    if (sum <= 0) {
      this.banner = "style weights must not all be zero";
      return null;
    }
    this.vector = this.vector.map((x) => x / sum) as Vec3;
    this.busy = true;
    try {
      const out = await this.api.generate(this.photoId, this.vector);
      if (!vectorsMatch(out.echoedVector, this.vector)) {
        this.banner = `server echoed ${out.echoedVector.join(",")} for ${this.vector.join(",")}`;
      }
      const entry: HistoryEntry = {
        photoId: this.photoId,
        vector: [...this.vector] as Vec3,
        echoedVector: out.echoedVector,
        png: out.png,
      };
      this.latest = entry;
      this.history.push(entry);
      return entry;
    } catch (err) {
      if (err instanceof ApiError && err.status === 503) {
        this.banner = "model unavailable: the server has no generator loaded";
      } else {
        this.banner = String(err instanceof Error ? err.message : err);
      }
      return null;
    } finally {
      this.busy = false;
    }
  }

  /** Restore a history entry's photo and vector, then regenerate. */
  async revisit(index: number): Promise<HistoryEntry | null> {
    const entry = this.history[index];
    if (!entry) return null;
    this.photoId = entry.photoId;
    this.vector = [...entry.vector] as Vec3;
    return this.generate();
  }
}
