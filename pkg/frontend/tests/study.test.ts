import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { StudySession } from "../src/study.js";
import { Handler, jsonResponse, stubServer } from "./stubs.js";

function questionBody(qid: string, ids: string[], answered = 0) {
  return {
    question_id: qid,
    style: "style1",
    drawing_ids: ids,
    drawing_urls: ids.map((i) => `/api/image/${i}`),
    answered,
    total: 6,
  };
}

function session(routes: Record<string, Handler>) {
  const srv = stubServer(routes);
  const api = new ApiClient("http://test.local:9", srv.fetch);
  return { study: new StudySession(api, "s1"), srv };
}

describe("loading", () => {
  it("moves to ranking with three unranked slots", async () => {
    const { study } = session({
      "GET /api/study/next": () => jsonResponse(questionBody("s1/0", ["a", "b", "c"])),
    });
    await study.load();
    expect(study.phase).toBe("ranking");
    expect(study.slots.map((s) => s.id)).toEqual(["a", "b", "c"]);
    expect(study.slots.every((s) => s.rank === null)).toBe(true);
    expect(study.canSubmit).toBe(false);
  });

  it("flips to done when the pool is exhausted", async () => {
    const { study } = session({
      "GET /api/study/next": () => jsonResponse({ detail: "exhausted" }, 409),
    });
    await study.load();
    expect(study.phase).toBe("done");
    expect(study.question).toBeNull();
  });

  it("surfaces network failures as an error phase", async () => {
    const api = new ApiClient("http://test.local:9", (() =>
      Promise.reject(new Error("connection refused"))) as typeof fetch);
    const study = new StudySession(api, "s1");
    await study.load();
    expect(study.phase).toBe("error");
    expect(study.lastError).toMatch(/connection refused/);
  });
});

describe("ranking", () => {
  async function ranked() {
    const { study, srv } = session({
      "GET /api/study/next": () => jsonResponse(questionBody("s1/0", ["a", "b", "c"])),
      "POST /api/study/answer": () =>
        jsonResponse({ accepted: true, progress: { answered: 1, total: 6 } }),
    });
    await study.load();
    return { study, srv };
  }

  it("enables submit only when all three slots are ordered", async () => {
    const { study } = await ranked();
    study.setRank(0, 2);
    expect(study.canSubmit).toBe(false);
    study.setRank(1, 1);
    expect(study.canSubmit).toBe(false);
    study.setRank(2, 3);
    expect(study.canSubmit).toBe(true);
    expect(study.orderedIds()).toEqual(["b", "a", "c"]);
  });

  it("swaps ranks instead of duplicating them", async () => {
    const { study } = await ranked();
    study.setRank(0, 1);
    study.setRank(1, 1);
    expect(study.slots[0]?.rank).toBeNull();
    expect(study.slots[1]?.rank).toBe(1);
    study.setRank(0, 2);
    study.setRank(2, 3);
    study.setRank(1, 3);
    expect(study.slots[1]?.rank).toBe(3);
    expect(study.slots[2]?.rank).toBe(1);
    expect(study.orderedIds()).toEqual(["c", "a", "b"]);
  });

  it("ignores ranks for out-of-range slots", async () => {
    const { study } = await ranked();
    study.setRank(7, 1);
    expect(study.slots.every((s) => s.rank === null)).toBe(true);
  });
});

describe("submission", () => {
  it("posts the worst-first order and advances on ack", async () => {
    const { study, srv } = session({
      "GET /api/study/next": () => jsonResponse(questionBody("s1/0", ["a", "b", "c"])),
      "POST /api/study/answer": () =>
        jsonResponse({ accepted: true, progress: { answered: 1, total: 6 } }),
    });
    await study.load();
    study.setRank(0, 3);
    study.setRank(1, 2);
    study.setRank(2, 1);
    await study.submit();
    expect(study.phase).toBe("idle");
    expect(study.answered).toBe(1);
    const post = srv.calls.find((c) => c.init?.method === "POST");
    expect(JSON.parse(String(post?.init?.body)).order).toEqual(["c", "b", "a"]);
  });

  it("logs exactly one answer for overlapping submits", async () => {
    let posts = 0;
    const { study } = session({
      "GET /api/study/next": () => jsonResponse(questionBody("s1/0", ["a", "b", "c"])),
      "POST /api/study/answer": async () => {
        posts += 1;
        await new Promise((r) => setTimeout(r, 20));
        return jsonResponse({ accepted: true, progress: { answered: 1, total: 6 } });
      },
    });
    await study.load();
    study.setRank(0, 1);
    study.setRank(1, 2);
    study.setRank(2, 3);
    await Promise.all([study.submit(), study.submit(), study.submit()]);
    expect(posts).toBe(1);
  });

  it("reconciles from server progress on a replay conflict", async () => {
    let posts = 0;
    const { study } = session({
      "GET /api/study/next": () => jsonResponse(questionBody("s1/0", ["a", "b", "c"])),
      "POST /api/study/answer": () => {
        posts += 1;
        return jsonResponse({ detail: "already answered" }, 409);
      },
      "GET /api/study/progress": () =>
        jsonResponse({ session: "s1", answered: 1, total: 6, by_style: {} }),
    });
    await study.load();
    study.setRank(0, 1);
    study.setRank(1, 2);
    study.setRank(2, 3);
    await study.submit();
    expect(posts).toBe(1);
    expect(study.phase).toBe("idle");
    expect(study.answered).toBe(1);
  });

  it("keeps the ordering for retry after a network failure", async () => {
    let fail = true;
    const srv = stubServer({
      "GET /api/study/next": () => jsonResponse(questionBody("s1/0", ["a", "b", "c"])),
      "POST /api/study/answer": () => {
        if (fail) throw new Error("socket hang up");
        return jsonResponse({ accepted: true, progress: { answered: 1, total: 6 } });
      },
    });
    const api = new ApiClient("http://test.local:9", srv.fetch);
    const study = new StudySession(api, "s1");
    await study.load();
    study.setRank(0, 2);
    study.setRank(1, 3);
    study.setRank(2, 1);
    await study.submit();
    expect(study.phase).toBe("error");
    expect(study.orderedIds()).toEqual(["c", "a", "b"]);
    fail = false;
    await study.submit();
    expect(study.phase).toBe("idle");
    const posts = srv.calls.filter((c) => c.init?.method === "POST");
    expect(posts).toHaveLength(2);
    expect(JSON.parse(String(posts[1]?.init?.body)).order).toEqual(["c", "a", "b"]);
  });

  it("never submits a half-ranked triplet", async () => {
    const { study, srv } = session({
      "GET /api/study/next": () => jsonResponse(questionBody("s1/0", ["a", "b", "c"])),
    });
    await study.load();
    study.setRank(0, 1);
    await study.submit();
    expect(srv.calls.filter((c) => c.init?.method === "POST")).toHaveLength(0);
    expect(study.phase).toBe("ranking");
  });
});
