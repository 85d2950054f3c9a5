// @vitest-environment happy-dom

import { afterEach, beforeEach, describe, expect, it } from "vitest";
import {
  MediaStreamLike,
  MediaTrackLike,
  PeerConnectionLike,
  SessionDescriptionLike,
  VideoIoElement,
} from "../src/video-io.js";
import { VideoIoLike } from "../src/broker-stream.js";

if (!customElements.get("video-io")) {
  customElements.define("video-io", VideoIoElement);
}

class FakeTrack implements MediaTrackLike {
  enabled = true;
  stopped = false;

  constructor(
    public kind: string,
    public label: string,
  ) {}

  stop(): void {
    this.stopped = true;
  }
}

// Extends the DOM class so happy-dom's srcObject setter accepts it; the
// track accessors are overridden to serve the fakes.
class FakeStream extends MediaStream implements MediaStreamLike {
  constructor(public fakeTracks: FakeTrack[]) {
    super();
  }

  override getTracks(): MediaStreamTrack[] {
    return this.fakeTracks as unknown as MediaStreamTrack[];
  }
  override getAudioTracks(): MediaStreamTrack[] {
    return this.fakeTracks.filter((t) => t.kind === "audio") as unknown as MediaStreamTrack[];
  }
  override getVideoTracks(): MediaStreamTrack[] {
    return this.fakeTracks.filter((t) => t.kind === "video") as unknown as MediaStreamTrack[];
  }
}

const REAL_SDP = "v=0\r\no=- 1 1 IN IP4 0.0.0.0\r\ns=-\r\nt=0 0\r\n";

class FakePc implements PeerConnectionLike {
  addedTracks: MediaTrackLike[] = [];
  remoteDescriptions: SessionDescriptionLike[] = [];
  candidates: unknown[] = [];
  closed = false;
  onicecandidate: ((ev: { candidate: unknown }) => void) | null = null;
  ontrack: ((ev: { streams: MediaStreamLike[] }) => void) | null = null;

  addTrack(track: MediaTrackLike): void {
    this.addedTracks.push(track);
  }
  createOffer(): Promise<SessionDescriptionLike> {
    return Promise.resolve({ type: "offer", sdp: REAL_SDP });
  }
  createAnswer(): Promise<SessionDescriptionLike> {
    return Promise.resolve({ type: "answer", sdp: REAL_SDP });
  }
  setLocalDescription(): Promise<void> {
    return Promise.resolve();
  }
  setRemoteDescription(desc: SessionDescriptionLike): Promise<void> {
    this.remoteDescriptions.push(desc);
    return Promise.resolve();
  }
  addIceCandidate(candidate: unknown): Promise<void> {
    this.candidates.push(candidate);
    return Promise.resolve();
  }
  close(): void {
    this.closed = true;
  }
}

interface StreamHost extends HTMLElement {
  published: VideoIoLike[];
  subscribed: VideoIoLike[];
  stopped: VideoIoLike[];
  texts: string[];
}

function makeStreamHost(id: string): StreamHost {
  const host = document.createElement("div") as unknown as StreamHost;
  host.id = id;
  host.published = [];
  host.subscribed = [];
  host.stopped = [];
  host.texts = [];
  Object.assign(host, {
    publish(vio: VideoIoLike) {
      host.published.push(vio);
    },
    subscribe(vio: VideoIoLike) {
      host.subscribed.push(vio);
    },
    stop(vio: VideoIoLike) {
      host.stopped.push(vio);
    },
    sendText(text: string) {
      host.texts.push(text);
    },
  });
  document.body.appendChild(host);
  return host;
}

function makeVideoIo(attrs: Record<string, string>): VideoIoElement {
  const el = document.createElement("video-io") as VideoIoElement;
  for (const [name, value] of Object.entries(attrs)) el.setAttribute(name, value);
  document.body.appendChild(el);
  return el;
}

function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

function signals(el: VideoIoElement): Array<Record<string, unknown>> {
  const out: Array<Record<string, unknown>> = [];
  el.addEventListener("data", (ev) => {
    const detail = (ev as CustomEvent<{ data: string; to: string }>).detail;
    out.push({ ...(JSON.parse(detail.data) as object), _to: detail.to });
  });
  return out;
}

let pcs: FakePc[] = [];
let capture: FakeStream;

beforeEach(() => {
  pcs = [];
  capture = new FakeStream([new FakeTrack("audio", "usb mic"), new FakeTrack("video", "webcam")]);
  VideoIoElement.getUserMediaImpl = () => Promise.resolve(capture);
  VideoIoElement.createPeerConnectionImpl = () => {
    const pc = new FakePc();
    pcs.push(pc);
    return pc;
  };
});

afterEach(() => {
  document.body.innerHTML = "";
});

describe("attributes", () => {
  it("rejects publish and subscribe on the same element", () => {
    const el = makeVideoIo({ publish: "true", subscribe: "true" });
    expect(el.getAttribute("state")).toBe("error");
    expect(el.status).toContain("ValidationError");
  });

  it("requires a resolvable for target", () => {
    const el = makeVideoIo({ publish: "true", for: "nowhere" });
    expect(el.getAttribute("state")).toBe("error");
    expect(el.status).toContain("nowhere");
  });

  it('treats publish="false" as absent', () => {
    makeStreamHost("s0");
    const el = makeVideoIo({ publish: "false", for: "s0" });
    expect(el.mode).toBeNull();
    expect(el.status).toBe("idle");
  });
});

describe("publishing", () => {
  it("captures devices, previews muted, then attaches to the stream", async () => {
    const host = makeStreamHost("s1");
    const el = makeVideoIo({ publish: "true", for: "s1" });
    await flush();
    expect(el.localStream).toBe(capture);
    expect(host.published).toEqual([el]);
    expect(el.status).toBe("publishing");
    const video = el.shadowRoot?.querySelector("video") as HTMLVideoElement;
    expect(video.muted).toBe(true);
  });

  it("advertises canonical track labels, deduplicated", async () => {
    capture = new FakeStream([
      new FakeTrack("audio", "a"),
      new FakeTrack("audio", "b"),
      new FakeTrack("video", "c"),
    ]);
    makeStreamHost("s1");
    const el = makeVideoIo({ publish: "true", for: "s1" });
    await flush();
    expect(el.trackDescriptors()).toEqual([
      { kind: "audio", label: "mic", enabled: true },
      { kind: "audio", label: "mic+", enabled: true },
      { kind: "video", label: "cam", enabled: true },
    ]);
  });

  it("reports capture refusal as PermissionDenied", async () => {
    VideoIoElement.getUserMediaImpl = () => Promise.reject(new Error("no devices"));
    makeStreamHost("s1");
    const el = makeVideoIo({ publish: "true", for: "s1" });
    await flush();
    expect(el.getAttribute("state")).toBe("error");
    expect(el.status).toContain("PermissionDenied");
  });

  it("mutes by disabling audio tracks, not the preview", async () => {
    makeStreamHost("s1");
    const el = makeVideoIo({ publish: "true", for: "s1" });
    await flush();
    const audio = capture.getAudioTracks()[0];
    el.setAttribute("muted", "");
    expect(audio.enabled).toBe(false);
    el.removeAttribute("muted");
    expect(audio.enabled).toBe(true);
  });

  it("announces property changes", async () => {
    makeStreamHost("s1");
    const el = makeVideoIo({ publish: "true", for: "s1" });
    await flush();
    const changes: Array<Record<string, unknown>> = [];
    el.addEventListener("propertyChange", (ev) => {
      changes.push((ev as CustomEvent<Record<string, unknown>>).detail);
    });
    el.setAttribute("muted", "");
    expect(changes).toContainEqual({ property: "muted", oldValue: false, newValue: true });
  });

  it("offers to a joining counterpart with local tracks attached", async () => {
    makeStreamHost("s1");
    const el = makeVideoIo({ publish: "true", for: "s1" });
    await flush();
    const sent = signals(el);
    el.createPeerConnection("ep-2", "ep-1");
    await flush();
    expect(pcs).toHaveLength(1);
    expect(pcs[0].addedTracks).toHaveLength(2);
    expect(sent).toHaveLength(1);
    expect(sent[0]).toMatchObject({
      link: "ep-1#0",
      type: "offer",
      n: 0,
      from: "ep-1",
      _to: "ep-2",
    });
    expect(String(sent[0].sdp)).toMatch(/^v=/);
    expect(sent[0].tracks).toEqual([
      { kind: "audio", label: "mic", enabled: true },
      { kind: "video", label: "cam", enabled: true },
    ]);
  });

  it("counts connected links when answers arrive", async () => {
    makeStreamHost("s1");
    const el = makeVideoIo({ publish: "true", for: "s1" });
    await flush();
    el.createPeerConnection("ep-2", "ep-1");
    await flush();
    el.apply(
      JSON.stringify({ link: "ep-1#0", type: "answer", n: 0, from: "ep-2", sdp: REAL_SDP }),
      "ep-2",
      "ep-1",
    );
    await flush();
    expect(el.status).toBe("publishing, 1 connected");
    expect(pcs[0].remoteDescriptions.at(-1)).toEqual({ type: "answer", sdp: REAL_SDP });
  });

  it("completes the handshake against a non-media counterpart", async () => {
    makeStreamHost("s1");
    const el = makeVideoIo({ publish: "true", for: "s1" });
    await flush();
    el.createPeerConnection("ep-2", "ep-1");
    await flush();
    el.apply(
      JSON.stringify({ link: "ep-1#0", type: "answer", n: 0, sdp: "sim-sdp:ep-1#0:answer" }),
      "ep-2",
      "ep-1",
    );
    expect(el.status).toBe("publishing, 1 connected");
    expect(pcs[0].remoteDescriptions).toHaveLength(0); // no real description to apply
  });

  it("supersedes the old link when a counterpart rejoins", async () => {
    makeStreamHost("s1");
    const el = makeVideoIo({ publish: "true", for: "s1" });
    await flush();
    el.createPeerConnection("ep-2", "ep-1");
    await flush();
    el.createPeerConnection("ep-2", "ep-1");
    await flush();
    expect(pcs[0].closed).toBe(true);
    expect(pcs[1].closed).toBe(false);
    expect(el.pc).toEqual([pcs[1]]);
  });
});

describe("subscribing", () => {
  function subscriber(): { host: StreamHost; el: VideoIoElement } {
    const host = makeStreamHost("s2");
    const el = makeVideoIo({ subscribe: "true", for: "s2" });
    return { host, el };
  }

  it("attaches through subscribe and waits", () => {
    const { host, el } = subscriber();
    expect(host.subscribed).toEqual([el]);
    expect(el.status).toBe("waiting");
  });

  it("answers a simulated offer without building a media path", async () => {
    const { el } = subscriber();
    const sent = signals(el);
    el.apply(
      JSON.stringify({
        link: "ep-1#0",
        type: "offer",
        n: 0,
        from: "ep-1",
        sdp: "sim-sdp:ep-1#0:offer",
        tracks: [{ kind: "video", label: "cam", enabled: true }],
      }),
      "ep-1",
      "ep-5",
    );
    expect(sent).toHaveLength(1);
    expect(sent[0]).toMatchObject({
      link: "ep-1#0",
      type: "answer",
      from: "ep-5",
      sdp: "web-sdp:ep-1#0:answer",
      _to: "ep-1",
    });
    expect(el.pc).toHaveLength(0);
    expect(el.status).toBe("connected (no media path)");
    expect(el.remoteTrackList).toEqual([{ kind: "video", label: "cam", enabled: true }]);
  });

  it("runs the full description exchange for a real offer", async () => {
    const { el } = subscriber();
    const sent = signals(el);
    el.apply(
      JSON.stringify({ link: "ep-1#0", type: "offer", n: 0, from: "ep-1", sdp: REAL_SDP }),
      "ep-1",
      "ep-5",
    );
    await flush();
    expect(pcs).toHaveLength(1);
    expect(pcs[0].remoteDescriptions).toEqual([{ type: "offer", sdp: REAL_SDP }]);
    expect(sent).toHaveLength(1);
    expect(String(sent[0].sdp)).toMatch(/^v=/);
    const remote = new FakeStream([new FakeTrack("video", "net")]);
    pcs[0].ontrack?.({ streams: [remote] });
    const video = el.shadowRoot?.querySelector("video") as HTMLVideoElement;
    expect((video as unknown as { srcObject: unknown }).srcObject).toBe(remote);
    expect(el.status).toBe("live");
  });

  it("feeds candidates only into real media links", async () => {
    const { el } = subscriber();
    el.apply(
      JSON.stringify({ link: "ep-1#0", type: "offer", n: 0, from: "ep-1", sdp: REAL_SDP }),
      "ep-1",
      "ep-5",
    );
    await flush();
    el.apply(
      JSON.stringify({ link: "ep-1#0", type: "candidate", n: 1, candidate: { c: 1 } }),
      "ep-1",
      "ep-5",
    );
    expect(pcs[0].candidates).toEqual([{ c: 1 }]);
    el.apply(
      JSON.stringify({ link: "ep-9#0", type: "candidate", n: 0, candidate: { c: 2 } }),
      "ep-9",
      "ep-5",
    );
    expect(pcs[0].candidates).toHaveLength(1); // unknown link, dropped
  });

  it("clears the view when the publisher leaves", async () => {
    const { el } = subscriber();
    el.apply(
      JSON.stringify({ link: "ep-1#0", type: "offer", n: 0, from: "ep-1", sdp: REAL_SDP }),
      "ep-1",
      "ep-5",
    );
    await flush();
    pcs[0].ontrack?.({ streams: [new FakeStream([])] });
    el.onPeerGone("ep-1");
    expect(pcs[0].closed).toBe(true);
    const video = el.shadowRoot?.querySelector("video") as HTMLVideoElement;
    expect((video as unknown as { srcObject: unknown }).srcObject).toBeNull();
    expect(el.status).toBe("waiting");
  });

  it("relays data-channel text both ways", () => {
    const { host, el } = subscriber();
    el.send("hi");
    expect(host.texts).toEqual(["hi"]);
    const seen: string[] = [];
    el.addEventListener("message", (ev) => {
      seen.push((ev as CustomEvent<{ data: string }>).detail.data);
    });
    el.onMessage("welcome back");
    expect(seen).toEqual(["welcome back"]);
  });

  it("surfaces pause hints in the status line", () => {
    const { el } = subscriber();
    el.onPauseHint("pause");
    expect(el.status).toBe("publisher pausing");
    el.onPauseHint("play");
    expect(el.status).toBe("live");
  });

  it("tears down links and stops tracks on stop", async () => {
    const host = makeStreamHost("s3");
    const el = makeVideoIo({ publish: "true", for: "s3" });
    await flush();
    el.createPeerConnection("ep-2", "ep-1");
    await flush();
    el.stop();
    expect(host.stopped).toEqual([el]);
    expect(pcs[0].closed).toBe(true);
    expect(capture.fakeTracks.every((t) => t.stopped)).toBe(true);
    expect(el.status).toBe("stopped");
  });
});
