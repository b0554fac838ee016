/**
 * DOM wiring for the studio page. All behavior lives in the state machines;
 * this file only reflects their state into the document and forwards events.
 */
import { ApiClient } from "./api.js";
import { Explorer, PRESETS } from "./explorer.js";
import { Rank, StudySession } from "./study.js";

const RANK_LABELS: Record<number, string> = { 1: "worst", 2: "middle", 3: "best" };

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function pngUrl(bytes: Uint8Array): string {
  return URL.createObjectURL(new Blob([bytes.slice().buffer], { type: "image/png" }));
}

function fmtVec(v: readonly number[]): string {
  return v.map((x) => x.toFixed(3)).join(", ");
}

class StudyView {
  private cursor = 0;

  constructor(
    private readonly study: StudySession,
    private readonly api: ApiClient,
  ) {
    el("study-start").addEventListener("click", () => void this.advance());
    el("study-submit").addEventListener("click", () => void this.submit());
    el<HTMLInputElement>("study-reference-toggle").addEventListener(
      "change",
      (ev) => {
        const on = (ev.target as HTMLInputElement).checked;
        el("study-reference").hidden = !on;
      },
    );
    document.addEventListener("keydown", (ev) => this.onKey(ev));
    this.render();
  }

  private onKey(ev: KeyboardEvent): void {
    if (el("tab-study").hidden) return;
    if (ev.key === "ArrowLeft") this.cursor = Math.max(0, this.cursor - 1);
    else if (ev.key === "ArrowRight") this.cursor = Math.min(2, this.cursor + 1);
    else if (ev.key === "1" || ev.key === "2" || ev.key === "3") {
      this.study.setRank(this.cursor, Number(ev.key) as Rank);
    } else if (ev.key === "Enter" && this.study.canSubmit) {
      void this.submit();
      return;
    } else return;
    ev.preventDefault();
    this.render();
  }

  private async advance(): Promise<void> {
    await this.study.load();
    this.cursor = 0;
    this.render();
  }

  private async submit(): Promise<void> {
    await this.study.submit();
    this.render();
    if (this.study.phase === "idle") await this.advance();
    this.render();
  }

  private render(): void {
    const s = this.study;
    el("study-progress").textContent =
      s.total > 0 ? `${s.answered} of ${s.total} answered` : "";
    el("study-status").textContent =
      s.phase === "done"
        ? "all questions answered, thank you"
        : s.lastError ?? "";
    el<HTMLButtonElement>("study-submit").disabled = !s.canSubmit;
    const row = el("study-slots");
    row.replaceChildren();
    s.slots.forEach((slot, i) => {
      const fig = document.createElement("figure");
      fig.className = "slot" + (i === this.cursor ? " cursor" : "");
      const img = document.createElement("img");
      img.src = this.api.resolve(slot.url);
      img.alt = slot.id;
      const cap = document.createElement("figcaption");
      cap.textContent = slot.rank === null ? "unranked" : RANK_LABELS[slot.rank]!;
      fig.append(img, cap);
      fig.addEventListener("click", () => {
        this.cursor = i;
        this.render();
      });
      row.append(fig);
    });
  }
}

class ExplorerView {
  constructor(
    private readonly explorer: Explorer,
    private readonly api: ApiClient,
  ) {
    for (const name of Object.keys(PRESETS)) {
      el(`preset-${name}`).addEventListener("click", () => {
        this.explorer.applyPreset(name);
        this.render();
      });
    }
    for (const i of [0, 1, 2] as const) {
      el<HTMLInputElement>(`slider-${i}`).addEventListener("input", (ev) => {
        this.explorer.setSlider(i, Number((ev.target as HTMLInputElement).value));
        this.render();
      });
    }
    el("explorer-generate").addEventListener("click", () => void this.generate());
    el<HTMLSelectElement>("photo-select").addEventListener("change", (ev) => {
      this.explorer.photoId = (ev.target as HTMLSelectElement).value || null;
    });
    void this.loadPhotos();
    this.render();
  }

  private async loadPhotos(): Promise<void> {
    const select = el<HTMLSelectElement>("photo-select");
    try {
      for (const id of await this.api.photos()) {
        const opt = document.createElement("option");
        opt.value = id;
        opt.textContent = id;
        select.append(opt);
      }
    } catch (err) {
      this.explorer.banner = String(err instanceof Error ? err.message : err);
      this.render();
    }
  }

  private async generate(): Promise<void> {
    await this.explorer.generate();
    this.render();
  }

  private render(): void {
    const x = this.explorer;
    for (const i of [0, 1, 2] as const) {
      el<HTMLInputElement>(`slider-${i}`).value = String(x.vector[i]);
      el(`slider-${i}-value`).textContent = x.vector[i].toFixed(3);
    }
    el("explorer-banner").textContent = x.banner ?? "";
    el("vector-sent").textContent = fmtVec(x.vector);
    el("vector-echoed").textContent = x.latest
      ? fmtVec(x.latest.echoedVector)
      : "(none yet)";
    if (x.latest) el<HTMLImageElement>("explorer-image").src = pngUrl(x.latest.png);
    const list = el("explorer-history");
    list.replaceChildren();
    x.history.forEach((entry, i) => {
      const item = document.createElement("li");
      const thumb = document.createElement("img");
      thumb.src = pngUrl(entry.png);
      thumb.title = `${entry.photoId} @ ${fmtVec(entry.vector)}`;
      item.append(thumb);
      item.addEventListener("click", () => {
        void this.explorer.revisit(i).then(() => this.render());
      });
      list.append(item);
    });
  }
}

function switchTab(name: "study" | "explorer"): void {
  el("tab-study").hidden = name !== "study";
  el("tab-explorer").hidden = name !== "explorer";
  el("nav-study").classList.toggle("active", name === "study");
  el("nav-explorer").classList.toggle("active", name === "explorer");
}

function boot(): void {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("api") ?? `${window.location.protocol}//${window.location.hostname}:8754`;
  const api = new ApiClient(base);
  const session = params.get("session") ?? `annotator-${Math.random().toString(36).slice(2, 8)}`;
  el("session-name").textContent = session;
  new StudyView(new StudySession(api, session), api);
  new ExplorerView(new Explorer(api), api);
  el("nav-study").addEventListener("click", () => switchTab("study"));
  el("nav-explorer").addEventListener("click", () => switchTab("explorer"));
  switchTab("study");
}

boot();
