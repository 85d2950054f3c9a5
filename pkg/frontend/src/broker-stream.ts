/**
 * <broker-stream src="ws://host:port/room/1?token=..."> is the named
 * stream element for the signaling broker. It owns one websocket, speaks
 * the wire grammar, and drives attached video-io components through the
 * stream interface: publish, subscribe, stop, addTracks, removeTracks.
 *
 * One websocket per element; the element takes one role, fixed by the
 * first publish() or subscribe() call and released by stop().
 */

import { parseSrc, StreamLocator } from "./address.js";
import {
  decode,
  encode,
  Envelope,
  MessageKind,
  TrackInfo,
  trackFromDict,
  trackToDict,
  WireError,
} from "./wire.js";

/** The component surface the stream element drives (the signaling side
 * of video-io); any object with these members can attach. */
export interface VideoIoLike extends EventTarget {
  /** Apply a counterpart's signaling payload (offer, answer, candidate).
   * selfEp is this session's endpoint id in the service's namespace. */
  apply(data: string, from: string, selfEp: string): void;
  /** Start a peer link toward a counterpart endpoint (publisher side). */
  createPeerConnection(counterpart: string, selfEp: string): void;
  /** Advertised local tracks, for the publish announcement. */
  trackDescriptors(): TrackInfo[];
  /** Remote track list changed. */
  onRemoteTracks(tracks: TrackInfo[]): void;
  /** A counterpart endpoint left. */
  onPeerGone(endpoint: string): void;
  /** Service reported an error for this attachment. */
  onServiceError(code: string, detail: string): void;
  /** Data-channel text arrived. */
  onMessage(text: string): void;
  /** Publisher signalled an upcoming pause or play. */
  onPauseHint(which: "pause" | "play"): void;
  /** The signaling transport dropped; peer links are void. */
  onTransportDown(): void;
}

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export type StreamState =
  | "idle"
  | "connecting"
  | "ready"
  | "waiting"
  | "live"
  | "stopped"
  | "error";

const RECONNECT_BASE_MS = 500;
const RECONNECT_MAX_ATTEMPTS = 5;

interface SignalDetail {
  data: string;
  to: string;
  type: "offer" | "answer" | "candidate";
}

const KIND_FOR_TYPE: Record<SignalDetail["type"], MessageKind> = {
  offer: "OFFER",
  answer: "ANSWER",
  candidate: "CANDIDATE",
};

export class BrokerStreamElement extends HTMLElement {
  static observedAttributes = ["src"];

  /** Injectable for tests; the default opens a real websocket. */
  static createSocket: SocketFactory = (url) => new WebSocket(url) as unknown as SocketLike;

  socket: SocketLike | null = null;
  ep: string | null = null;
  streamRole: "publisher" | "subscriber" | null = null;
  state: StreamState = "idle";
  /** Every inbound line, verbatim, for debugging and privacy audits. */
  capture: string[] = [];

  private locator: StreamLocator | null = null;
  private publisherVio: VideoIoLike | null = null;
  private subscriberVios: VideoIoLike[] = [];
  private seqs = new Map<string, number>();
  private announced = false;
  private pendingOps: Array<() => void> = [];
  private remoteTracks = new Map<string, TrackInfo>();
  private reconnectAttempts = 0;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private signalListeners = new Map<VideoIoLike, (ev: Event) => void>();

  connectedCallback(): void {
    this.style.display = "none";
  }

  disconnectedCallback(): void {
    this.teardown("stopped");
  }

  attributeChangedCallback(_name: string, oldValue: string | null, newValue: string | null): void {
    if (oldValue !== null && oldValue !== newValue) {
      // A new locator voids the old session entirely.
      this.teardown("idle");
    }
  }

  /** The stream reference this element is bound to, from src. */
  get stream(): string | null {
    return this.locator?.stream ?? this.tryLocator()?.stream ?? null;
  }

  // -- stream interface --------------------------------------------------

  publish(vio: VideoIoLike): void {
    if (this.streamRole === "subscriber") {
      vio.onServiceError("RoleError", "element is already subscribing; use a separate stream element");
      return;
    }
    if (this.publisherVio !== null && this.publisherVio !== vio) {
      vio.onServiceError("RoleError", "element already has a publisher");
      return;
    }
    this.streamRole = "publisher";
    this.publisherVio = vio;
    this.listenForSignals(vio);
    this.ensureSocket();
  }

  subscribe(vio: VideoIoLike): void {
    if (this.streamRole === "publisher") {
      vio.onServiceError("RoleError", "element is already publishing; use a separate stream element");
      return;
    }
    this.streamRole = "subscriber";
    if (!this.subscriberVios.includes(vio)) this.subscriberVios.push(vio);
    this.listenForSignals(vio);
    if (this.remoteTracks.size > 0) vio.onRemoteTracks([...this.remoteTracks.values()]);
    this.ensureSocket();
  }

  stop(vio: VideoIoLike): void {
    this.unlistenForSignals(vio);
    if (this.publisherVio === vio) {
      this.publisherVio = null;
    } else {
      this.subscriberVios = this.subscriberVios.filter((v) => v !== vio);
    }
    if (this.publisherVio === null && this.subscriberVios.length === 0) {
      this.teardown("stopped");
    }
  }

  addTracks(tracks: TrackInfo[]): void {
    this.op(() =>
      this.sendEnvelope("TRACKS_ADDED", JSON.stringify({ tracks: tracks.map(trackToDict) })),
    );
  }

  removeTracks(labels: string[]): void {
    this.op(() => this.sendEnvelope("TRACKS_REMOVED", JSON.stringify({ labels })));
  }

  /** Data-channel text: publisher to all subscribers, subscriber to the
   * publisher. Routed by the broker, so it works before media connects. */
  sendText(text: string): void {
    this.op(() => this.sendEnvelope("TEXT", text));
  }

  // -- socket lifecycle --------------------------------------------------

  private tryLocator(): StreamLocator | null {
    const src = this.getAttribute("src");
    if (!src) return null;
    try {
      return parseSrc(src);
    } catch {
      return null;
    }
  }

  private ensureSocket(): void {
    if (this.socket !== null) return;
    const src = this.getAttribute("src");
    if (!src) {
      this.fail("ValidationError", "broker-stream needs a src attribute");
      return;
    }
    try {
      this.locator = parseSrc(src);
    } catch (e) {
      this.fail("ValidationError", e instanceof WireError ? e.message : String(e));
      return;
    }
    this.openSocket();
  }

  private openSocket(): void {
    if (this.locator === null) return;
    this.setState("connecting");
    this.announced = false;
    this.ep = null;
    this.seqs.clear();
    const socket = (this.constructor as typeof BrokerStreamElement).createSocket(this.locator.wsEndpoint);
    this.socket = socket;
    socket.onmessage = (ev) => this.onLine(ev.data);
    socket.onclose = () => this.onSocketDown(socket);
    socket.onerror = () => this.onSocketDown(socket);
  }

  private onSocketDown(socket: SocketLike): void {
    if (this.socket !== socket) return; // stale handler after teardown
    this.socket = null;
    this.everyVio((v) => v.onTransportDown());
    if (this.streamRole === null || this.state === "stopped" || this.state === "error") return;
    if (this.reconnectAttempts >= RECONNECT_MAX_ATTEMPTS) {
      this.fail("TransportError", `gave up after ${this.reconnectAttempts} reconnect attempts`);
      return;
    }
    const delay = RECONNECT_BASE_MS * 2 ** this.reconnectAttempts;
    this.reconnectAttempts += 1;
    this.setState("connecting");
    this.reconnectTimer = setTimeout(() => {
      this.reconnectTimer = null;
      if (this.streamRole !== null && this.socket === null) this.openSocket();
    }, delay);
  }

  private teardown(finalState: StreamState): void {
    if (this.reconnectTimer !== null) {
      clearTimeout(this.reconnectTimer);
      this.reconnectTimer = null;
    }
    const socket = this.socket;
    this.socket = null;
    if (socket !== null) {
      if (this.announced && this.ep !== null) {
        try {
          this.sendOn(socket, "STOP", "");
        } catch {
          // the socket may already be closed; teardown continues
        }
      }
      socket.onclose = null;
      socket.onerror = null;
      socket.close();
    }
    for (const vio of [...this.signalListeners.keys()]) this.unlistenForSignals(vio);
    this.publisherVio = null;
    this.subscriberVios = [];
    this.streamRole = null;
    this.ep = null;
    this.announced = false;
    this.pendingOps = [];
    this.remoteTracks.clear();
    this.reconnectAttempts = 0;
    this.setState(finalState);
  }

  private fail(code: string, detail: string): void {
    this.everyVio((v) => v.onServiceError(code, detail));
    this.setState("error");
    const socket = this.socket;
    this.socket = null;
    if (socket !== null) {
      socket.onclose = null;
      socket.onerror = null;
      socket.close();
    }
    this.streamRole = null;
    this.announced = false;
  }

  private setState(state: StreamState): void {
    if (this.state === state) return;
    this.state = state;
    this.setAttribute("state", state);
    this.dispatchEvent(new CustomEvent("statechange", { detail: { state } }));
  }

  // -- outbound ----------------------------------------------------------

  private nextSeq(stream: string): number {
    const n = this.seqs.get(stream) ?? 0;
    this.seqs.set(stream, n + 1);
    return n;
  }

  private sendOn(socket: SocketLike, kind: MessageKind, payload: string, to?: string): void {
    if (this.locator === null || this.ep === null) return;
    const env: Envelope = {
      stream: this.locator.stream,
      from: this.ep,
      kind,
      seq: this.nextSeq(this.locator.stream),
      payload,
    };
    if (to !== undefined) env.to = to;
    socket.send(encode(env));
  }

  private sendEnvelope(kind: MessageKind, payload: string, to?: string): void {
    if (this.socket === null) return;
    this.sendOn(this.socket, kind, payload, to);
  }

  private op(fn: () => void): void {
    if (this.announced && this.socket !== null) {
      fn();
    } else {
      this.pendingOps.push(fn);
    }
  }

  private announce(): void {
    if (this.streamRole === "publisher" && this.publisherVio !== null) {
      const body: Record<string, unknown> = {
        tracks: this.publisherVio.trackDescriptors().map(trackToDict),
      };
      const ping = this.getAttribute("ping");
      if (ping) body.ping = ping;
      this.sendEnvelope("PUBLISH", JSON.stringify(body));
    } else if (this.streamRole === "subscriber") {
      const ping = this.getAttribute("ping");
      this.sendEnvelope("SUBSCRIBE", ping ? JSON.stringify({ ping }) : "");
      this.setState("waiting");
    }
    this.announced = true;
    const ops = this.pendingOps;
    this.pendingOps = [];
    for (const fn of ops) fn();
  }

  // -- inbound -----------------------------------------------------------

  private onLine(line: string): void {
    this.capture.push(line);
    let env: Envelope;
    try {
      env = decode(line);
    } catch {
      return; // not ours to report; the broker logs client errors
    }
    switch (env.kind) {
      case "EVENT":
        this.onEvent(env);
        break;
      case "ERROR": {
        const body = this.parseDict(env.payload);
        this.onError(String(body.code ?? "error"), String(body.detail ?? ""));
        break;
      }
      case "OFFER":
        for (const vio of this.subscriberVios) vio.apply(env.payload, env.from, this.ep ?? "");
        break;
      case "ANSWER":
      case "CANDIDATE":
        this.publisherVio?.apply(env.payload, env.from, this.ep ?? "");
        if (env.kind === "CANDIDATE") {
          for (const vio of this.subscriberVios) vio.apply(env.payload, env.from, this.ep ?? "");
        }
        break;
      case "TEXT":
        this.everyVio((v) => v.onMessage(env.payload));
        break;
      case "PAUSE_HINT": {
        const which = env.payload === "play" ? "play" : "pause";
        this.everyVio((v) => v.onPauseHint(which));
        break;
      }
      case "TRACKS_ADDED": {
        const body = this.parseDict(env.payload);
        const incoming = Array.isArray(body.tracks) ? body.tracks : [];
        for (const d of incoming) {
          try {
            const t = trackFromDict(d as Record<string, unknown>);
            this.remoteTracks.set(t.label, t);
          } catch {
            // a malformed track entry is dropped, the rest still apply
          }
        }
        this.pushRemoteTracks();
        break;
      }
      case "TRACKS_REMOVED": {
        const body = this.parseDict(env.payload);
        const labels: unknown[] = Array.isArray(body.labels) ? body.labels : [];
        for (const label of labels) this.remoteTracks.delete(String(label));
        this.pushRemoteTracks();
        break;
      }
      default:
        break; // PUBLISH/SUBSCRIBE/STOP never reach a client
    }
  }

  private onEvent(env: Envelope): void {
    const body = this.parseDict(env.payload);
    switch (body.event) {
      case "welcome":
        this.ep = String(body.endpoint);
        this.reconnectAttempts = 0;
        this.setState("ready");
        this.announce();
        break;
      case "subscriber-joined":
        this.publisherVio?.createPeerConnection(String(body.endpoint), this.ep ?? "");
        this.setState("live");
        break;
      case "publisher-live": {
        this.remoteTracks.clear();
        const tracks = Array.isArray(body.tracks) ? body.tracks : [];
        for (const d of tracks) {
          try {
            const t = trackFromDict(d as Record<string, unknown>);
            this.remoteTracks.set(t.label, t);
          } catch {
            // skip malformed entries
          }
        }
        this.pushRemoteTracks();
        this.setState("live");
        break;
      }
      case "peer-gone":
        this.everyVio((v) => v.onPeerGone(String(body.endpoint)));
        if (this.streamRole === "subscriber") {
          this.remoteTracks.clear();
          this.setState("waiting");
        }
        break;
      default:
        break;
    }
  }

  private onError(code: string, detail: string): void {
    this.everyVio((v) => v.onServiceError(code, detail));
    const voided =
      (code === "PublisherConflict" && this.streamRole === "publisher") ||
      (code === "StreamUnknown" && this.streamRole === "subscriber");
    if (voided) this.fail(code, detail);
  }

  private parseDict(payload: string): Record<string, unknown> {
    if (!payload) return {};
    try {
      const value = JSON.parse(payload);
      return typeof value === "object" && value !== null && !Array.isArray(value)
        ? (value as Record<string, unknown>)
        : {};
    } catch {
      return {};
    }
  }

  private pushRemoteTracks(): void {
    const tracks = [...this.remoteTracks.values()];
    for (const vio of this.subscriberVios) vio.onRemoteTracks(tracks);
  }

  private everyVio(fn: (v: VideoIoLike) => void): void {
    if (this.publisherVio !== null) fn(this.publisherVio);
    for (const vio of this.subscriberVios) fn(vio);
  }

  // -- signaling data from attached components ---------------------------

  private listenForSignals(vio: VideoIoLike): void {
    if (this.signalListeners.has(vio)) return;
    const handler = (ev: Event) => {
      const detail = (ev as CustomEvent<SignalDetail>).detail;
      if (!detail || typeof detail.data !== "string" || !detail.to) return;
      const kind = KIND_FOR_TYPE[detail.type];
      if (kind === undefined) return;
      this.op(() => this.sendEnvelope(kind, detail.data, detail.to));
    };
    this.signalListeners.set(vio, handler);
    vio.addEventListener("data", handler);
  }

  private unlistenForSignals(vio: VideoIoLike): void {
    const handler = this.signalListeners.get(vio);
    if (handler !== undefined) {
      vio.removeEventListener("data", handler);
      this.signalListeners.delete(vio);
    }
  }
}
