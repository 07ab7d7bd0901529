// Queue controller: the single place UI events funnel through. Guarantees
// one idempotency-keyed API call per user action (re-entrancy guarded), client
// validation before any revise call, and 409 recovery by refreshing the item.

import {
  ApiError,
  ItemSummary,
  ReviewApi,
  ReviewItem,
  TransitionAction,
  newIdempotencyKey,
} from "./api.js";
import { validateDescription, Violation } from "./validate.js";

export interface OverlayToggles {
  mask: boolean;
  bbox: boolean;
  center: boolean;
}

export interface QueueState {
  items: ItemSummary[];
  total: number;
  page: number;
  pageSize: number;
  stateFilter: string | null;
  active: ReviewItem | null;
  toggles: OverlayToggles;
  editBuffer: Record<string, unknown> | null;
  fieldErrors: Record<string, string>;
  banner: string | null;
  busy: boolean;
}

export class QueueController {
  state: QueueState = {
    items: [],
    total: 0,
    page: 1,
    pageSize: 20,
    stateFilter: "pending",
    active: null,
    toggles: { mask: true, bbox: true, center: false },
    editBuffer: null,
    fieldErrors: {},
    banner: null,
    busy: false,
  };

  networkCalls = 0; // incremented once per transition actually sent

  constructor(
    private api: ReviewApi,
    private onChange: (s: QueueState) => void = () => {}
  ) {}

  private emit() {
    this.onChange(this.state);
  }

  // -- queue ---------------------------------------------------------------

  async loadQueue(stateFilter: string | null = this.state.stateFilter, page = 1): Promise<void> {
    try {
      const data = await this.api.listItems(stateFilter, page, this.state.pageSize);
      this.state.items = data.items;
      this.state.total = data.total;
      this.state.page = data.page;
      this.state.stateFilter = stateFilter;
      this.state.banner = null;
      if (!this.state.active && data.items.length > 0) {
        await this.selectItem(data.items[0].id);
        return;
      }
    } catch (err) {
      this.state.banner = err instanceof ApiError ? err.message : String(err);
    }
    this.emit();
  }

  get lastPage(): number {
    return Math.max(1, Math.ceil(this.state.total / this.state.pageSize));
  }

  async selectItem(id: string): Promise<void> {
    try {
      this.state.active = await this.api.getItem(id);
      this.state.editBuffer = null;
      this.state.fieldErrors = {};
    } catch (err) {
      this.state.banner = err instanceof ApiError ? err.message : String(err);
    }
    this.emit();
  }

  async selectOffset(delta: number): Promise<void> {
    const ids = this.state.items.map((i) => i.id);
    if (ids.length === 0) return;
    const current = this.state.active ? ids.indexOf(this.state.active.id) : -1;
    const next = Math.min(ids.length - 1, Math.max(0, current + delta));
    if (next !== current) await this.selectItem(ids[next]);
  }

  // -- overlays --------------------------------------------------------------

  toggleOverlay(kind: keyof OverlayToggles): void {
    this.state.toggles[kind] = !this.state.toggles[kind];
    this.emit();
  }

  overlayUrl(): string | null {
    if (!this.state.active) return null;
    return this.api.overlayUrl(this.state.active.id, this.state.toggles);
  }

  // -- revision buffer ---------------------------------------------------------

  startRevision(): void {
    if (!this.state.active) return;
    this.state.editBuffer = { ...(this.state.active.description ?? {}) };
    this.state.fieldErrors = {};
    this.emit();
  }

  setField(name: string, value: unknown): void {
    if (!this.state.editBuffer) return;
    this.state.editBuffer[name] = value;
    delete this.state.fieldErrors[name];
    this.emit();
  }

  cancelRevision(): void {
    this.state.editBuffer = null;
    this.state.fieldErrors = {};
    this.emit();
  }

  // -- decisions ----------------------------------------------------------------

  async approve(): Promise<boolean> {
    return this.decide("approve");
  }

  async regenerate(): Promise<boolean> {
    return this.decide("regenerate");
  }

  async submitRevision(): Promise<boolean> {
    if (!this.state.editBuffer) return false;
    const violations = validateDescription(this.state.editBuffer);
    if (violations.length > 0) {
      this.state.fieldErrors = fieldErrorMap(violations);
      this.state.banner = "revision blocked: fix the highlighted fields";
      this.emit();
      return false; // no network call
    }
    return this.decide("revise", this.state.editBuffer);
  }

  private async decide(
    action: TransitionAction,
    payload?: Record<string, unknown>
  ): Promise<boolean> {
    const item = this.state.active;
    if (!item || this.state.busy) return false; // double-click guard
    this.state.busy = true;
    this.emit();
    try {
      this.networkCalls += 1;
      const updated = await this.api.transition(
        item.id,
        action,
        newIdempotencyKey(),
        payload,
        item.version
      );
      this.state.editBuffer = null;
      this.state.fieldErrors = {};
      this.state.banner = null;
      await this.afterDecision(updated);
      return true;
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // someone else moved the item: refresh and re-prompt
        this.state.banner = "item changed on the server; review the latest version";
        await this.selectItem(item.id);
      } else if (err instanceof ApiError && err.status === 422) {
        this.state.fieldErrors = fieldErrorMap(violationsFromDetails(err.details));
        this.state.banner = "server rejected the revision payload";
      } else {
        this.state.banner = err instanceof ApiError ? err.message : String(err);
      }
      return false;
    } finally {
      this.state.busy = false;
      this.emit();
    }
  }

  private async afterDecision(updated: ReviewItem): Promise<void> {
    // decided items leave the pending queue without a full reload
    if (this.state.stateFilter && updated.state !== this.state.stateFilter) {
      this.state.items = this.state.items.filter((i) => i.id !== updated.id);
      this.state.total = Math.max(0, this.state.total - 1);
    } else {
      this.state.items = this.state.items.map((i) =>
        i.id === updated.id ? { ...i, state: updated.state, version: updated.version } : i
      );
    }
    const next = this.state.items.find((i) => i.state === "pending");
    if (next) {
      await this.selectItem(next.id);
    } else {
      this.state.active = null;
      this.emit();
    }
  }

  /** Poll a regen-requested item until the worker returns it to pending. */
  async awaitRegeneration(id: string, tries = 20, delayMs = 250): Promise<ReviewItem | null> {
    for (let i = 0; i < tries; i++) {
      const item = await this.api.getItem(id);
      if (item.state === "pending") return item;
      await new Promise((r) => setTimeout(r, delayMs));
    }
    return null;
  }
}

function fieldErrorMap(violations: Violation[]): Record<string, string> {
  const map: Record<string, string> = {};
  for (const v of violations) map[v.field || "_"] = v.message;
  return map;
}

function violationsFromDetails(details: unknown): Violation[] {
  if (!Array.isArray(details)) return [{ field: "_", message: String(details ?? "invalid") }];
  return details.map((d) => {
    const text = String(d);
    const m = text.match(/field '([^']+)'/);
    return { field: m ? m[1] : "_", message: text };
  });
}
