/**
 * <video-io> publishes or plays one named stream. The supported attribute
 * subset is for, publish, subscribe, controls, muted; the element attaches
 * to the stream element named by "for" and drives it through publish,
 * subscribe and stop.
 *
 * Signaling payloads ride as opaque JSON through the stream element:
 * {link, type, n, from, sdp, tracks?} for offers and answers, and
 * {link, type, n, from, candidate} for trickle candidates. Real session
 * descriptions go into "sdp" unchanged; a counterpart that produces
 * non-SDP blobs (a simulated endpoint) still completes the handshake,
 * with media marked unavailable.
 */

import { TrackInfo } from "./wire.js";
import { VideoIoLike } from "./broker-stream.js";

export interface StreamElementLike {
  publish(vio: VideoIoLike): void;
  subscribe(vio: VideoIoLike): void;
  stop(vio: VideoIoLike): void;
  addTracks?(tracks: TrackInfo[]): void;
  removeTracks?(labels: string[]): void;
  sendText?(text: string): void;
}

export interface MediaTrackLike {
  kind: string;
  label: string;
  enabled: boolean;
  stop(): void;
}

export interface MediaStreamLike {
  getTracks(): MediaTrackLike[];
  getAudioTracks(): MediaTrackLike[];
  getVideoTracks(): MediaTrackLike[];
}

export interface SessionDescriptionLike {
  type: string;
  sdp?: string;
}

export interface PeerConnectionLike {
  addTrack?(track: MediaTrackLike, stream: MediaStreamLike): void;
  createOffer(): Promise<SessionDescriptionLike>;
  createAnswer(): Promise<SessionDescriptionLike>;
  setLocalDescription(desc: SessionDescriptionLike): Promise<void>;
  setRemoteDescription(desc: SessionDescriptionLike): Promise<void>;
  addIceCandidate(candidate: unknown): Promise<void>;
  close(): void;
  onicecandidate: ((ev: { candidate: unknown }) => void) | null;
  ontrack: ((ev: { streams: MediaStreamLike[] }) => void) | null;
}

interface LinkState {
  id: string;
  counterpart: string;
  side: "offerer" | "answerer";
  pc: PeerConnectionLike | null;
  n: number;
  state: "offer-sent" | "offer-received" | "connected" | "closed";
  /** False when the counterpart's blobs are not real session descriptions. */
  realMedia: boolean;
}

/** Real SDP starts with a version line; anything else is an opaque blob
 * from a non-browser counterpart. */
function looksLikeSdp(blob: unknown): blob is string {
  return typeof blob === "string" && blob.startsWith("v=");
}

function boolAttr(el: HTMLElement, name: string): boolean {
  const value = el.getAttribute(name);
  return value !== null && value !== "false";
}

let instanceCounter = 0;

export class VideoIoElement extends HTMLElement implements VideoIoLike {
  static observedAttributes = ["for", "publish", "subscribe", "controls", "muted"];

  /** Injectable capture and peer-connection factories, for tests and for
   * pages that want to supply their own constraints. */
  static getUserMediaImpl: (constraints: object) => Promise<MediaStreamLike> = (constraints) =>
    navigator.mediaDevices.getUserMedia(constraints as MediaStreamConstraints) as unknown as Promise<MediaStreamLike>;
  static createPeerConnectionImpl: () => PeerConnectionLike = () =>
    new RTCPeerConnection() as unknown as PeerConnectionLike;

  /** Peer connections, in creation order. */
  pc: PeerConnectionLike[] = [];
  localStream: MediaStreamLike | null = null;

  mode: "publish" | "subscribe" | null = null;
  status = "idle";
  remoteTrackList: TrackInfo[] = [];

  private links = new Map<string, LinkState>();
  private streamEl: StreamElementLike | null = null;
  private video!: HTMLVideoElement;
  private statusLine!: HTMLElement;
  private muteButton!: HTMLButtonElement;
  private started = false;
  private instanceId = `vio-${++instanceCounter}`;
  private linkCounter = 0;
  private playingState = false;
  private remote: MediaStreamLike | null = null;

  constructor() {
    super();
    const root = this.attachShadow({ mode: "open" });
    root.innerHTML = `
      <style>
        :host { display: inline-block; background: #111; color: #ddd;
                font: 12px system-ui, sans-serif; border-radius: 6px;
                overflow: hidden; min-width: 200px; }
        video { display: block; width: 100%; aspect-ratio: 4 / 3;
                background: #000; object-fit: cover; }
        .bar { display: flex; gap: 6px; align-items: center;
               padding: 4px 6px; }
        .status { flex: 1; white-space: nowrap; overflow: hidden;
                  text-overflow: ellipsis; }
        :host([state="error"]) .status { color: #f66; }
        button { font: inherit; }
        button[hidden] { display: none; }
      </style>
      <video autoplay playsinline></video>
      <div class="bar">
        <span class="status">idle</span>
        <button class="mute" hidden type="button">mute</button>
      </div>
    `;
    this.video = root.querySelector("video") as HTMLVideoElement;
    this.statusLine = root.querySelector(".status") as HTMLElement;
    this.muteButton = root.querySelector(".mute") as HTMLButtonElement;
    this.muteButton.addEventListener("click", () => {
      if (boolAttr(this, "muted")) this.removeAttribute("muted");
      else this.setAttribute("muted", "");
    });
    this.video.addEventListener("play", () => this.setPlaying(true));
    this.video.addEventListener("pause", () => this.setPlaying(false));
  }

  connectedCallback(): void {
    if (!this.started) this.start();
  }

  disconnectedCallback(): void {
    this.stop();
  }

  attributeChangedCallback(name: string, oldValue: string | null, newValue: string | null): void {
    if (oldValue === newValue) return;
    if (name === "muted") {
      this.applyMuted();
      this.propertyChange("muted", oldValue !== null, newValue !== null);
    } else if (name === "controls") {
      this.muteButton.hidden = !boolAttr(this, "controls");
    } else if ((name === "publish" || name === "subscribe" || name === "for") && this.started) {
      // Mode or target changed underneath a running element: restart.
      this.stop();
      this.start();
    }
  }

  // -- application surface ----------------------------------------------

  get playing(): boolean {
    return this.playingState;
  }

  /** The remote stream, set by the subscribe path; assigning it renders. */
  set remoteStream(stream: MediaStreamLike | null) {
    this.remote = stream;
    (this.video as unknown as { srcObject: unknown }).srcObject = stream;
    if (stream !== null) this.setStatus("live");
  }

  /** Data-channel text; publisher to all subscribers, subscriber to the
   * publisher. */
  send(text: string): void {
    this.streamEl?.sendText?.(text);
  }

  // -- lifecycle ---------------------------------------------------------

  start(): void {
    this.started = true;
    const wantPublish = boolAttr(this, "publish");
    const wantSubscribe = boolAttr(this, "subscribe");
    if (wantPublish && wantSubscribe) {
      this.enterError("ValidationError", "at most one of publish/subscribe per element");
      return;
    }
    if (!wantPublish && !wantSubscribe) {
      this.setStatus("idle");
      return;
    }
    const target = this.getAttribute("for");
    const streamEl = target ? (this.ownerDocument.getElementById(target) as unknown) : null;
    if (!streamEl || typeof (streamEl as StreamElementLike).publish !== "function") {
      this.enterError("ValidationError", `no stream element with id ${JSON.stringify(target)}`);
      return;
    }
    this.streamEl = streamEl as StreamElementLike;
    if (wantPublish) {
      this.mode = "publish";
      this.startPublish();
    } else {
      this.mode = "subscribe";
      this.setStatus("waiting");
      this.video.muted = boolAttr(this, "muted");
      this.streamEl.subscribe(this);
    }
  }

  stop(): void {
    this.started = false;
    this.streamEl?.stop(this);
    this.streamEl = null;
    for (const link of this.links.values()) this.closeLink(link);
    this.links.clear();
    this.pc = [];
    if (this.localStream !== null) {
      for (const track of this.localStream.getTracks()) track.stop();
      this.localStream = null;
    }
    this.remoteStream = null;
    this.mode = null;
    this.setStatus("stopped");
  }

  private startPublish(): void {
    this.setStatus("requesting devices");
    const constraints = { audio: true, video: true };
    VideoIoElement.getUserMediaImpl(constraints).then(
      (stream) => {
        if (!this.started || this.mode !== "publish") {
          for (const track of stream.getTracks()) track.stop();
          return;
        }
        this.localStream = stream;
        this.applyMuted();
        this.video.muted = true; // local preview must not feed back
        (this.video as unknown as { srcObject: unknown }).srcObject = stream;
        this.setStatus("publishing");
        this.streamEl?.publish(this);
      },
      (err) => {
        this.enterError("PermissionDenied", err instanceof Error ? err.message : String(err));
      },
    );
  }

  private applyMuted(): void {
    const muted = boolAttr(this, "muted");
    if (this.mode === "publish" && this.localStream !== null) {
      for (const track of this.localStream.getAudioTracks()) track.enabled = !muted;
    } else {
      this.video.muted = muted;
    }
    this.muteButton.textContent = muted ? "unmute" : "mute";
  }

  private setStatus(text: string): void {
    this.status = text;
    this.statusLine.textContent = text;
  }

  private enterError(code: string, detail: string): void {
    this.setAttribute("state", "error");
    this.setStatus(`error: ${code}${detail ? " " + detail : ""}`);
    this.dispatchEvent(new CustomEvent("error", { detail: { code, detail } }));
  }

  private setPlaying(playing: boolean): void {
    if (this.playingState === playing) return;
    this.playingState = playing;
    this.propertyChange("playing", !playing, playing);
    this.dispatchEvent(new Event(playing ? "play" : "pause"));
  }

  private propertyChange(property: string, oldValue: unknown, newValue: unknown): void {
    this.dispatchEvent(new CustomEvent("propertyChange", { detail: { property, oldValue, newValue } }));
  }

  // -- track advertising -------------------------------------------------

  trackDescriptors(): TrackInfo[] {
    if (this.localStream === null) return [];
    const out: TrackInfo[] = [];
    const seen = new Set<string>();
    for (const track of this.localStream.getTracks()) {
      if (track.kind !== "audio" && track.kind !== "video") continue;
      let label = track.kind === "audio" ? "mic" : "cam";
      while (seen.has(label)) label += "+";
      seen.add(label);
      out.push({ kind: track.kind, label, enabled: track.enabled });
    }
    return out;
  }

  // -- signaling (driven by the stream element) --------------------------

  createPeerConnection(counterpart: string, selfEp: string): void {
    if (this.mode !== "publish" || this.localStream === null) return;
    // A re-joining counterpart supersedes its old link.
    for (const link of [...this.links.values()]) {
      if (link.counterpart === counterpart) {
        this.closeLink(link);
        this.links.delete(link.id);
      }
    }
    const id = `${selfEp || this.instanceId}#${this.linkCounter++}`;
    const pc = VideoIoElement.createPeerConnectionImpl();
    this.pc.push(pc);
    const link: LinkState = {
      id,
      counterpart,
      side: "offerer",
      pc,
      n: 0,
      state: "offer-sent",
      realMedia: true,
    };
    this.links.set(id, link);
    for (const track of this.localStream.getTracks()) {
      pc.addTrack?.(track, this.localStream);
    }
    pc.onicecandidate = (ev) => {
      if (ev.candidate) this.emitSignal(link, { type: "candidate", candidate: ev.candidate });
    };
    const tracks = this.trackDescriptors();
    pc.createOffer()
      .then(async (offer) => {
        await pc.setLocalDescription(offer);
        this.emitSignal(link, { type: "offer", from: selfEp, sdp: offer.sdp ?? "", tracks });
        this.setStatus(`publishing to ${this.links.size}`);
      })
      .catch((err) => this.enterError("OfferFailed", String(err)));
  }

  apply(data: string, from: string, selfEp = ""): void {
    let msg: Record<string, unknown>;
    try {
      msg = JSON.parse(data) as Record<string, unknown>;
    } catch {
      return;
    }
    const linkId = typeof msg.link === "string" ? msg.link : null;
    const type = msg.type;
    if (linkId === null || (type !== "offer" && type !== "answer" && type !== "candidate")) return;
    if (type === "offer") {
      this.applyOffer(linkId, msg, from, selfEp);
    } else if (type === "answer") {
      this.applyAnswer(linkId, msg);
    } else {
      this.applyCandidate(linkId, msg);
    }
  }

  private applyOffer(linkId: string, msg: Record<string, unknown>, from: string, selfEp: string): void {
    if (this.mode !== "subscribe" || this.links.has(linkId)) return;
    const counterpart = typeof msg.from === "string" ? msg.from : from;
    // A fresh offer from a (re)started publisher supersedes old links.
    for (const old of [...this.links.values()]) {
      if (old.counterpart === counterpart || old.state === "closed") {
        this.closeLink(old);
        this.links.delete(old.id);
      }
    }
    const realMedia = looksLikeSdp(msg.sdp);
    const link: LinkState = {
      id: linkId,
      counterpart,
      side: "answerer",
      pc: null,
      n: 0,
      state: "offer-received",
      realMedia,
    };
    this.links.set(linkId, link);
    if (Array.isArray(msg.tracks)) {
      this.onRemoteTracks(
        (msg.tracks as Array<Record<string, unknown>>).flatMap((d) => {
          const kind = d.kind;
          const label = d.label;
          if ((kind !== "audio" && kind !== "video" && kind !== "data") || typeof label !== "string") {
            return [];
          }
          return [{ kind, label, enabled: d.enabled === undefined ? true : Boolean(d.enabled) }];
        }),
      );
    }
    const answerFrom = selfEp || this.instanceId;
    if (!realMedia) {
      // Simulated publisher: complete the handshake, no media path.
      link.state = "connected";
      this.emitSignal(link, { type: "answer", from: answerFrom, sdp: `web-sdp:${linkId}:answer` });
      this.setStatus("connected (no media path)");
      return;
    }
    const pc = VideoIoElement.createPeerConnectionImpl();
    this.pc.push(pc);
    link.pc = pc;
    pc.ontrack = (ev) => {
      if (ev.streams.length > 0) this.remoteStream = ev.streams[0];
    };
    pc.onicecandidate = (ev) => {
      if (ev.candidate) this.emitSignal(link, { type: "candidate", candidate: ev.candidate });
    };
    pc.setRemoteDescription({ type: "offer", sdp: msg.sdp as string })
      .then(() => pc.createAnswer())
      .then(async (answer) => {
        await pc.setLocalDescription(answer);
        link.state = "connected";
        this.emitSignal(link, { type: "answer", from: answerFrom, sdp: answer.sdp ?? "" });
        this.setStatus("connecting media");
      })
      .catch((err) => this.enterError("AnswerFailed", String(err)));
  }

  private applyAnswer(linkId: string, msg: Record<string, unknown>): void {
    const link = this.links.get(linkId);
    if (link === undefined || link.side !== "offerer" || link.state === "connected") return;
    link.state = "connected";
    if (link.pc !== null && looksLikeSdp(msg.sdp)) {
      link.pc.setRemoteDescription({ type: "answer", sdp: msg.sdp as string }).catch(() => {
        link.realMedia = false;
      });
    } else if (link.pc !== null) {
      // Simulated subscriber answered: signaling done, media stays local.
      link.realMedia = false;
    }
    const connected = [...this.links.values()].filter((l) => l.state === "connected").length;
    this.setStatus(`publishing, ${connected} connected`);
  }

  private applyCandidate(linkId: string, msg: Record<string, unknown>): void {
    const link = this.links.get(linkId);
    if (link === undefined || link.pc === null || !link.realMedia) return;
    if (msg.candidate !== undefined && msg.candidate !== null) {
      link.pc.addIceCandidate(msg.candidate).catch(() => {
        // candidates from foreign transports are best-effort
      });
    }
  }

  private emitSignal(link: LinkState, fields: Record<string, unknown>): void {
    const payload = JSON.stringify({ link: link.id, type: fields.type, n: link.n++, ...fields });
    this.dispatchEvent(
      new CustomEvent("data", {
        detail: { data: payload, pc: link.pc, to: link.counterpart, type: fields.type },
      }),
    );
  }

  private closeLink(link: LinkState): void {
    link.state = "closed";
    if (link.pc !== null) {
      link.pc.onicecandidate = null;
      link.pc.ontrack = null;
      link.pc.close();
      this.pc = this.pc.filter((p) => p !== link.pc);
      link.pc = null;
    }
  }

  // -- service notifications --------------------------------------------

  onRemoteTracks(tracks: TrackInfo[]): void {
    this.remoteTrackList = tracks;
    if (this.mode === "subscribe") {
      const summary = tracks.map((t) => `${t.kind}:${t.label}`).join(", ");
      if (this.remote === null) this.setStatus(summary ? `tracks: ${summary}` : "waiting");
    }
    this.propertyChange("remoteTracks", null, tracks);
  }

  onPeerGone(endpoint: string): void {
    for (const link of [...this.links.values()]) {
      if (link.counterpart === endpoint) {
        this.closeLink(link);
        this.links.delete(link.id);
      }
    }
    if (this.mode === "subscribe") {
      this.remoteStream = null;
      this.remoteTrackList = [];
      this.setStatus("waiting");
    }
  }

  onServiceError(code: string, detail: string): void {
    this.enterError(code, detail);
  }

  onMessage(text: string): void {
    this.dispatchEvent(new CustomEvent("message", { detail: { data: text } }));
  }

  onPauseHint(which: "pause" | "play"): void {
    if (this.mode === "subscribe") {
      this.setStatus(which === "pause" ? "publisher pausing" : "live");
    }
  }

  onTransportDown(): void {
    for (const link of [...this.links.values()]) this.closeLink(link);
    this.links.clear();
    this.pc = [];
    if (this.mode === "subscribe") {
      this.remoteStream = null;
      this.setStatus("reconnecting");
    } else if (this.mode === "publish") {
      this.setStatus("reconnecting");
    }
  }
}
