/**
 * Demo page: a form to point at a broker and a flexible grid of tiles,
 * each tile one broker-stream element plus one video-io element. Every
 * capability is reachable without writing code: publish, subscribe by raw
 * or hashed name, mute, webhook pings, and tile removal (which stops the
 * underlying stream attachment).
 *
 * Opening the page with ?sub=<stream> creates a subscribe tile on load.
 */

import { buildSrc } from "./address.js";
import { hashName, isHashedRef } from "./wire.js";
import { BrokerStreamElement } from "./broker-stream.js";

export interface TileOptions {
  base: string;
  stream: string;
  mode: "publish" | "subscribe";
  token?: string;
  ping?: string;
}

let tileCounter = 0;

export function makeTile(doc: Document, opts: TileOptions): HTMLElement {
  const id = `tile-stream-${++tileCounter}`;
  const tile = doc.createElement("div");
  tile.className = "tile";

  const streamEl = doc.createElement("broker-stream") as BrokerStreamElement;
  streamEl.id = id;
  streamEl.setAttribute("src", buildSrc(opts.base, opts.stream, opts.token));
  if (opts.ping) streamEl.setAttribute("ping", opts.ping);

  const vio = doc.createElement("video-io");
  vio.setAttribute("for", id);
  vio.setAttribute("controls", "");
  vio.setAttribute(opts.mode, "true");

  const caption = doc.createElement("div");
  caption.className = "caption";
  const label = doc.createElement("span");
  label.textContent = `${opts.mode} ${opts.stream}`;
  caption.appendChild(label);

  if (opts.mode === "publish" && !isHashedRef(opts.stream)) {
    // Publishers can hand out the digest form so subscribers never see
    // the raw name.
    const share = doc.createElement("button");
    share.type = "button";
    share.textContent = "hashed ref";
    share.addEventListener("click", async () => {
      const ref = await hashName(opts.stream);
      label.textContent = ref;
    });
    caption.appendChild(share);
  }

  const close = doc.createElement("button");
  close.type = "button";
  close.className = "close";
  close.textContent = "remove";
  close.addEventListener("click", () => tile.remove());
  caption.appendChild(close);

  tile.appendChild(streamEl);
  tile.appendChild(vio);
  tile.appendChild(caption);
  return tile;
}

export function defaultBase(loc: { protocol: string; host: string }): string {
  if (!loc.host) return "ws://127.0.0.1:8787";
  return `${loc.protocol === "https:" ? "wss:" : "ws:"}//${loc.host}`;
}

export function boot(doc: Document, loc: { protocol: string; host: string; search: string }): void {
  const grid = doc.getElementById("grid");
  const form = doc.getElementById("controls") as HTMLFormElement | null;
  if (grid === null || form === null) return;

  const input = (name: string) => form.querySelector<HTMLInputElement>(`[name=${name}]`);
  const baseInput = input("base");
  if (baseInput !== null && !baseInput.value) baseInput.value = defaultBase(loc);

  const add = (mode: "publish" | "subscribe") => {
    const stream = input("stream")?.value.trim();
    if (!stream) return;
    const opts: TileOptions = {
      base: baseInput?.value.trim() || defaultBase(loc),
      stream,
      mode,
      token: input("token")?.value.trim() || undefined,
      ping: input("ping")?.value.trim() || undefined,
    };
    try {
      grid.appendChild(makeTile(doc, opts));
    } catch (e) {
      const status = doc.getElementById("form-status");
      if (status !== null) status.textContent = String(e instanceof Error ? e.message : e);
    }
  };

  form.querySelector("[data-action=publish]")?.addEventListener("click", () => add("publish"));
  form.querySelector("[data-action=subscribe]")?.addEventListener("click", () => add("subscribe"));
  form.addEventListener("submit", (ev) => ev.preventDefault());

  const sub = new URLSearchParams(loc.search).get("sub");
  if (sub) {
    grid.appendChild(
      makeTile(doc, { base: defaultBase(loc), stream: sub, mode: "subscribe" }),
    );
  }
}
