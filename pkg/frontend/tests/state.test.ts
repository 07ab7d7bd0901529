import { beforeEach, describe, expect, it } from "vitest";
import { ReviewApi } from "../src/api.js";
import { QueueController } from "../src/state.js";

interface Call {
  url: string;
  init?: RequestInit;
}

function makeItem(id: string, state = "pending", version = 1) {
  return {
    id,
    subject: "subj000",
    slice_id: "s000",
    organ: id.split("-").pop(),
    state,
    version,
    description: {
      organ: "spleen",
      shape: "oval",
      size: "moderate",
      location: "left",
      texture: "homogeneous",
      boundary: "sharp",
      adjacency: ["stomach"],
      free_summary: "ok",
    },
    raw_output: "{}",
    attempts: 1,
    history: [],
  };
}

/** Scriptable fake service: answers list/get/transition like the real API. */
class FakeService {
  calls: Call[] = [];
  items = new Map<string, ReturnType<typeof makeItem>>();
  transitionDelayMs = 0;
  failNext: { status: number; code: string; details?: unknown } | null = null;

  constructor(ids: string[]) {
    for (const id of ids) this.items.set(id, makeItem(id));
  }

  fetch = async (url: string, init?: RequestInit): Promise<Response> => {
    this.calls.push({ url, init });
    const respond = (status: number, body: unknown) =>
      new Response(JSON.stringify(body), {
        status,
        headers: { "Content-Type": "application/json" },
      });

    const u = new URL(url, "http://test");
    if (u.pathname === "/api/items" && (!init || !init.method)) {
      const state = u.searchParams.get("state");
      const items = [...this.items.values()].filter((i) => !state || i.state === state);
      return respond(200, {
        data: { items, total: items.length, page: 1, page_size: 20 },
        error: null,
      });
    }
    const transition = u.pathname.match(/^\/api\/items\/([^/]+)\/transition$/);
    if (transition && init?.method === "POST") {
      if (this.transitionDelayMs) {
        await new Promise((r) => setTimeout(r, this.transitionDelayMs));
      }
      if (this.failNext) {
        const f = this.failNext;
        this.failNext = null;
        return respond(f.status, {
          data: null,
          error: { code: f.code, message: f.code, details: f.details ?? null },
        });
      }
      const item = this.items.get(decodeURIComponent(transition[1]))!;
      const body = JSON.parse(String(init.body));
      item.state =
        body.action === "approve" ? "approved" : body.action === "revise" ? "revised" : "regen_requested";
      item.version += 1;
      return respond(200, { data: item, error: null });
    }
    const single = u.pathname.match(/^\/api\/items\/([^/]+)$/);
    if (single) {
      const item = this.items.get(decodeURIComponent(single[1]));
      if (!item) {
        return respond(404, { data: null, error: { code: "not_found", message: "nope", details: null } });
      }
      return respond(200, { data: item, error: null });
    }
    return respond(500, { data: null, error: { code: "boom", message: "unhandled", details: null } });
  };

  transitionCalls(): Call[] {
    return this.calls.filter((c) => c.url.includes("/transition"));
  }
}

function controllerFor(service: FakeService) {
  const api = new ReviewApi("http://test", service.fetch);
  return new QueueController(api);
}

describe("QueueController", () => {
  let service: FakeService;

  beforeEach(() => {
    service = new FakeService(["i-a", "i-b", "i-c"]);
  });

  it("loads the pending queue and auto-selects the first item", async () => {
    const ctl = controllerFor(service);
    await ctl.loadQueue("pending", 1);
    expect(ctl.state.total).toBe(3);
    expect(ctl.state.active?.id).toBe("i-a");
  });

  it("blocks an invalid revision before any network call", async () => {
    const ctl = controllerFor(service);
    await ctl.loadQueue("pending", 1);
    const before = service.transitionCalls().length;
    ctl.startRevision();
    ctl.setField("shape", "");
    const ok = await ctl.submitRevision();
    expect(ok).toBe(false);
    expect(service.transitionCalls().length).toBe(before); // nothing sent
    expect(ctl.state.fieldErrors.shape).toBeTruthy();
  });

  it("sends exactly one idempotency-keyed call per action (double-click guard)", async () => {
    const ctl = controllerFor(service);
    await ctl.loadQueue("pending", 1);
    service.transitionDelayMs = 30;
    const results = await Promise.all([ctl.approve(), ctl.approve(), ctl.approve()]);
    expect(results.filter(Boolean)).toHaveLength(1);
    const calls = service.transitionCalls();
    expect(calls).toHaveLength(1);
    const body = JSON.parse(String(calls[0].init?.body));
    expect(body.idempotency_key).toBeTruthy();
  });

  it("distinct actions carry distinct idempotency keys", async () => {
    const ctl = controllerFor(service);
    await ctl.loadQueue("pending", 1);
    await ctl.approve();
    await ctl.approve(); // next item auto-selected, separate action
    const keys = service
      .transitionCalls()
      .map((c) => JSON.parse(String(c.init?.body)).idempotency_key);
    expect(new Set(keys).size).toBe(keys.length);
  });

  it("approve removes the item from the pending queue without a reload", async () => {
    const ctl = controllerFor(service);
    await ctl.loadQueue("pending", 1);
    const listCallsBefore = service.calls.filter((c) => c.url.includes("/api/items?")).length;
    await ctl.approve();
    expect(ctl.state.items.map((i) => i.id)).toEqual(["i-b", "i-c"]);
    expect(ctl.state.active?.id).toBe("i-b"); // advanced to next pending
    const listCallsAfter = service.calls.filter((c) => c.url.includes("/api/items?")).length;
    expect(listCallsAfter).toBe(listCallsBefore);
  });

  it("handles 409 by refreshing the item and banneringing", async () => {
    const ctl = controllerFor(service);
    await ctl.loadQueue("pending", 1);
    service.failNext = { status: 409, code: "stale_version" };
    const ok = await ctl.approve();
    expect(ok).toBe(false);
    expect(ctl.state.banner).toContain("changed");
    expect(ctl.state.active?.id).toBe("i-a"); // refreshed, still selected
  });

  it("maps 422 violations onto field errors", async () => {
    const ctl = controllerFor(service);
    await ctl.loadQueue("pending", 1);
    ctl.startRevision();
    ctl.setField("shape", "round");
    service.failNext = {
      status: 422,
      code: "invalid_revision",
      details: ["field 'shape' must be nonempty"],
    };
    const ok = await ctl.submitRevision();
    expect(ok).toBe(false);
    expect(ctl.state.fieldErrors.shape).toBeTruthy();
  });

  it("overlay URL reflects toggles and persists across navigation", async () => {
    const ctl = controllerFor(service);
    await ctl.loadQueue("pending", 1);
    expect(ctl.overlayUrl()).toContain("mask=true");
    ctl.toggleOverlay("mask");
    expect(ctl.overlayUrl()).toContain("mask=false");
    ctl.toggleOverlay("center");
    await ctl.selectOffset(1);
    const url = ctl.overlayUrl()!;
    expect(url).toContain("i-b");
    expect(url).toContain("mask=false");
    expect(url).toContain("center=true");
  });

  it("pagination boundary: lastPage derives from total", async () => {
    const ctl = controllerFor(service);
    await ctl.loadQueue("pending", 1);
    expect(ctl.lastPage).toBe(1);
    ctl.state.total = 45;
    expect(ctl.lastPage).toBe(3);
  });
});
