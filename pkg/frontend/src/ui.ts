// DOM wiring: renders the queue list, the overlay viewer, the description
// panel / revision form, and binds the keyboard shortcuts
// (A approve, R revise, G regenerate, arrows navigate, M/B/C toggles).

import { QueueController, QueueState } from "./state.js";
import { descriptionFields } from "./validate.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text !== undefined) node.textContent = text;
  return node;
}

export class ReviewView {
  private root: HTMLElement;

  constructor(root: HTMLElement, private controller: QueueController) {
    this.root = root;
    document.addEventListener("keydown", (ev) => this.onKey(ev));
  }

  render(state: QueueState): void {
    this.root.replaceChildren();

    if (state.banner) {
      this.root.appendChild(el("div", { class: "banner" }, state.banner));
    }

    const layout = el("div", { class: "layout" });
    layout.appendChild(this.queuePanel(state));
    layout.appendChild(this.viewerPanel(state));
    layout.appendChild(this.descriptionPanel(state));
    this.root.appendChild(layout);
  }

  private queuePanel(state: QueueState): HTMLElement {
    const panel = el("section", { class: "queue" });
    panel.appendChild(el("h2", {}, `Queue (${state.total})`));

    const filter = el("select", { id: "state-filter" });
    for (const opt of ["pending", "approved", "revised", "regen_requested", ""]) {
      const option = el("option", { value: opt }, opt || "all");
      if (opt === (state.stateFilter ?? "")) option.selected = true;
      filter.appendChild(option);
    }
    filter.addEventListener("change", () =>
      this.controller.loadQueue(filter.value || null, 1)
    );
    panel.appendChild(filter);

    const list = el("ul", { class: "items" });
    for (const item of state.items) {
      const li = el(
        "li",
        { class: item.id === state.active?.id ? "active" : "", "data-id": item.id },
        `${item.subject}/${item.slice_id}/${item.organ}`
      );
      li.appendChild(el("span", { class: `badge badge-${item.state}` }, item.state));
      li.addEventListener("click", () => this.controller.selectItem(item.id));
      list.appendChild(li);
    }
    panel.appendChild(list);

    const nav = el("div", { class: "pager" });
    const prev = el("button", { id: "prev-page" }, "prev");
    const next = el("button", { id: "next-page" }, "next");
    prev.disabled = state.page <= 1;
    next.disabled = state.page >= this.controller.lastPage;
    prev.addEventListener("click", () =>
      this.controller.loadQueue(state.stateFilter, state.page - 1)
    );
    next.addEventListener("click", () =>
      this.controller.loadQueue(state.stateFilter, state.page + 1)
    );
    nav.append(prev, el("span", {}, ` ${state.page}/${this.controller.lastPage} `), next);
    panel.appendChild(nav);
    return panel;
  }

  private viewerPanel(state: QueueState): HTMLElement {
    const panel = el("section", { class: "viewer" });
    if (!state.active) {
      panel.appendChild(el("p", {}, "no item selected"));
      return panel;
    }
    const url = this.controller.overlayUrl();
    const img = el("img", { id: "overlay", alt: "slice overlay" });
    if (url) {
      img.src = url;
      img.addEventListener("error", () => {
        img.removeAttribute("src");
        img.alt = "overlay unavailable";
      });
    }
    panel.appendChild(img);

    const toggles = el("div", { class: "toggles" });
    for (const kind of ["mask", "bbox", "center"] as const) {
      const label = el("label", {}, ` ${kind} `);
      const box = el("input", { type: "checkbox", id: `toggle-${kind}` });
      box.checked = state.toggles[kind];
      box.addEventListener("change", () => this.controller.toggleOverlay(kind));
      label.prepend(box);
      toggles.appendChild(label);
    }
    panel.appendChild(toggles);
    return panel;
  }

  private descriptionPanel(state: QueueState): HTMLElement {
    const panel = el("section", { class: "description" });
    const item = state.active;
    if (!item) return panel;

    panel.appendChild(el("h2", {}, `${item.organ} — ${item.state} (v${item.version})`));

    if (state.editBuffer) {
      panel.appendChild(this.revisionForm(state));
      return panel;
    }

    const pre = el("pre", { class: "payload" },
      item.description ? JSON.stringify(item.description, null, 2) : item.raw_output);
    panel.appendChild(pre);

    const actions = el("div", { class: "actions" });
    const approve = el("button", { id: "approve" }, "Approve (A)");
    approve.disabled = state.busy || item.state !== "pending" || !item.description;
    approve.addEventListener("click", () => this.controller.approve());
    const revise = el("button", { id: "revise" }, "Revise (R)");
    revise.disabled = state.busy || item.state !== "pending";
    revise.addEventListener("click", () => this.controller.startRevision());
    const regen = el("button", { id: "regenerate" }, "Regenerate (G)");
    regen.disabled = state.busy || item.state !== "pending";
    regen.addEventListener("click", () => this.controller.regenerate());
    actions.append(approve, revise, regen);
    panel.appendChild(actions);
    return panel;
  }

  private revisionForm(state: QueueState): HTMLElement {
    const form = el("form", { class: "revision" });
    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      this.controller.submitRevision();
    });
    for (const field of descriptionFields) {
      const row = el("div", { class: "field" });
      row.appendChild(el("label", { for: `field-${field}` }, field));
      const value = state.editBuffer?.[field];
      const input = el("input", { id: `field-${field}`, type: "text" });
      input.value = Array.isArray(value) ? value.join(", ") : String(value ?? "");
      input.addEventListener("input", () => {
        this.controller.setField(
          field,
          field === "adjacency"
            ? input.value.split(",").map((s) => s.trim()).filter(Boolean)
            : input.value
        );
      });
      row.appendChild(input);
      const err = state.fieldErrors[field];
      if (err) row.appendChild(el("span", { class: "error" }, err));
      form.appendChild(row);
    }
    const submit = el("button", { type: "submit", id: "submit-revision" }, "Submit revision");
    submit.disabled = state.busy;
    const cancel = el("button", { type: "button", id: "cancel-revision" }, "Cancel");
    cancel.addEventListener("click", () => this.controller.cancelRevision());
    form.append(submit, cancel);
    return form;
  }

  private onKey(ev: KeyboardEvent): void {
    if (ev.target instanceof HTMLInputElement || ev.target instanceof HTMLSelectElement) return;
    switch (ev.key.toLowerCase()) {
      case "a":
        this.controller.approve();
        break;
      case "r":
        this.controller.startRevision();
        break;
      case "g":
        this.controller.regenerate();
        break;
      case "arrowdown":
        this.controller.selectOffset(1);
        break;
      case "arrowup":
        this.controller.selectOffset(-1);
        break;
      case "m":
        this.controller.toggleOverlay("mask");
        break;
      case "b":
        this.controller.toggleOverlay("bbox");
        break;
      case "c":
        this.controller.toggleOverlay("center");
        break;
    }
  }
}
