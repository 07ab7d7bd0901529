// Typed client for the review service. All JSON endpoints use the
// {data, error} envelope; non-2xx responses raise ApiError with the server's
// error code and details.

export interface ItemSummary {
  id: string;
  subject: string;
  slice_id: string;
  organ: string;
  state: string;
  version: number;
  description: Record<string, unknown> | null;
  raw_output: string;
  attempts: number;
}

export interface ReviewItem extends ItemSummary {
  history: { ts: number; actor: string; action: string; payload: unknown }[];
}

export interface QueuePage {
  items: ItemSummary[];
  total: number;
  page: number;
  page_size: number;
}

export type TransitionAction = "approve" | "revise" | "regenerate";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public details: unknown = null
  ) {
    super(message);
  }
}

interface Envelope<T> {
  data: T | null;
  error: { code: string; message: string; details: unknown } | null;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ReviewApi {
  constructor(
    public baseUrl: string,
    private fetchImpl: FetchLike = (...args) => fetch(...args),
    private actor: string = "annotator"
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchImpl(`${this.baseUrl}${path}`, {
        ...init,
        headers: {
          "Content-Type": "application/json",
          "X-Actor": this.actor,
          ...(init?.headers ?? {}),
        },
      });
    } catch (err) {
      throw new ApiError(0, "network", `service unreachable: ${err}`);
    }
    const body = (await resp.json()) as Envelope<T>;
    if (!resp.ok || body.error) {
      const e = body.error ?? { code: "unknown", message: `HTTP ${resp.status}`, details: null };
      throw new ApiError(resp.status, e.code, e.message, e.details);
    }
    return body.data as T;
  }

  listItems(state: string | null, page: number, pageSize: number): Promise<QueuePage> {
    const params = new URLSearchParams({ page: String(page), page_size: String(pageSize) });
    if (state) params.set("state", state);
    return this.request<QueuePage>(`/api/items?${params}`);
  }

  getItem(id: string): Promise<ReviewItem> {
    return this.request<ReviewItem>(`/api/items/${encodeURIComponent(id)}`);
  }

  transition(
    id: string,
    action: TransitionAction,
    idempotencyKey: string,
    payload?: Record<string, unknown>,
    version?: number
  ): Promise<ReviewItem> {
    return this.request<ReviewItem>(`/api/items/${encodeURIComponent(id)}/transition`, {
      method: "POST",
      body: JSON.stringify({
        action,
        payload: payload ?? null,
        idempotency_key: idempotencyKey,
        version: version ?? null,
      }),
    });
  }

  overlayUrl(id: string, toggles: { mask: boolean; bbox: boolean; center: boolean }): string {
    const params = new URLSearchParams({
      mask: String(toggles.mask),
      bbox: String(toggles.bbox),
      center: String(toggles.center),
    });
    return `${this.baseUrl}/api/items/${encodeURIComponent(id)}/overlay?${params}`;
  }

  async fetchOverlay(
    id: string,
    toggles: { mask: boolean; bbox: boolean; center: boolean }
  ): Promise<ArrayBuffer> {
    const resp = await this.fetchImpl(this.overlayUrl(id, toggles));
    if (!resp.ok) throw new ApiError(resp.status, "overlay", `overlay fetch failed`);
    return resp.arrayBuffer();
  }

  async health(): Promise<{ status: string; counts: Record<string, number> }> {
    return this.request<{ status: string; counts: Record<string, number> }>(`/api/health`);
  }
}

let keyCounter = 0;

export function newIdempotencyKey(): string {
  keyCounter += 1;
  const rand =
    typeof crypto !== "undefined" && "randomUUID" in crypto
      ? crypto.randomUUID()
      : Math.random().toString(36).slice(2);
  return `ui-${Date.now()}-${keyCounter}-${rand}`;
}
