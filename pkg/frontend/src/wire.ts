/**
 * The wire grammar: one UTF-8 JSON line per message with exactly the keys
 * v, stream, from, to, kind, seq, payload ("to" omitted for broadcast).
 *
 * This file is a faithful re-statement of the server's codec. encode()
 * must produce byte-identical lines for identical envelopes, which the
 * test suite pins with a golden corpus digest.
 */

export const PROTOCOL_VERSION = 1;
export const MAX_PAYLOAD_BYTES = 64 * 1024;
export const MAX_NAME_BYTES = 256;
export const HASH_PREFIX = "h:";

export const MESSAGE_KINDS = [
  "PUBLISH",
  "SUBSCRIBE",
  "STOP",
  "OFFER",
  "ANSWER",
  "CANDIDATE",
  "TRACKS_ADDED",
  "TRACKS_REMOVED",
  "TEXT",
  "PAUSE_HINT",
  "EVENT",
  "ERROR",
] as const;

export type MessageKind = (typeof MESSAGE_KINDS)[number];

const KIND_SET: ReadonlySet<string> = new Set(MESSAGE_KINDS);

export interface Envelope {
  stream: string;
  from: string;
  kind: MessageKind;
  seq: number;
  payload: string;
  to?: string;
}

export class WireError extends Error {
  constructor(
    public readonly code: "DecodeError" | "VersionError" | "KindError" | "ValidationError",
    message: string,
  ) {
    super(message);
    this.name = code;
  }
}

const encoder = new TextEncoder();

export function byteLength(text: string): number {
  return encoder.encode(text).length;
}

export function isHashedRef(ref: string): boolean {
  if (!ref.startsWith(HASH_PREFIX)) return false;
  const digest = ref.slice(HASH_PREFIX.length);
  return digest.length === 64 && /^[0-9a-f]{64}$/.test(digest);
}

export function validateStreamName(raw: string): string {
  if (typeof raw !== "string" || raw.length === 0) {
    throw new WireError("ValidationError", "stream name must be non-empty text");
  }
  if (byteLength(raw) > MAX_NAME_BYTES) {
    throw new WireError("ValidationError", `stream name exceeds ${MAX_NAME_BYTES} bytes`);
  }
  if (raw.startsWith("/") || raw.endsWith("/")) {
    throw new WireError("ValidationError", "stream name must not start or end with '/'");
  }
  if (raw.startsWith(HASH_PREFIX)) {
    throw new WireError("ValidationError", "stream names starting with 'h:' are reserved for hashed refs");
  }
  // Other Categories (C*) and Separators (Z*) are non-visible.
  if (/[\p{C}\p{Z}]/u.test(raw)) {
    throw new WireError("ValidationError", "stream name contains non-visible characters");
  }
  return raw;
}

export function validateStreamRef(ref: string): string {
  if (isHashedRef(ref)) return ref;
  return validateStreamName(ref);
}

/** Digest-form reference: "h:" + SHA-256 hex over the UTF-8 name bytes. */
export async function hashName(name: string): Promise<string> {
  validateStreamName(name);
  const digest = await crypto.subtle.digest("SHA-256", encoder.encode(name));
  const hex = Array.from(new Uint8Array(digest), (b) => b.toString(16).padStart(2, "0")).join("");
  return HASH_PREFIX + hex;
}

function checkEnvelope(env: Envelope): void {
  validateStreamRef(env.stream);
  if (!env.from) throw new WireError("ValidationError", "envelope 'from' must be non-empty");
  if (env.to !== undefined && !env.to) {
    throw new WireError("ValidationError", "envelope 'to' must be non-empty when present");
  }
  if (!KIND_SET.has(env.kind)) {
    throw new WireError("ValidationError", `unknown message kind ${JSON.stringify(env.kind)}`);
  }
  if (!Number.isInteger(env.seq) || env.seq < 0) {
    throw new WireError("ValidationError", `seq must be a non-negative integer, got ${env.seq}`);
  }
  if (typeof env.payload !== "string") {
    throw new WireError("ValidationError", "payload must be text");
  }
  if (byteLength(env.payload) > MAX_PAYLOAD_BYTES) {
    throw new WireError("ValidationError", `payload exceeds ${MAX_PAYLOAD_BYTES} bytes`);
  }
}

/** Canonical serialization; decode(encode(env)) equals env. */
export function encode(env: Envelope): string {
  checkEnvelope(env);
  // Insertion order fixes the key order in JSON.stringify output.
  const obj: Record<string, unknown> = { v: PROTOCOL_VERSION, stream: env.stream, from: env.from };
  if (env.to !== undefined) obj.to = env.to;
  obj.kind = env.kind;
  obj.seq = env.seq;
  obj.payload = env.payload;
  return JSON.stringify(obj) + "\n";
}

const ALLOWED_KEYS = new Set(["v", "stream", "from", "to", "kind", "seq", "payload"]);
const REQUIRED_KEYS = ["v", "stream", "from", "kind", "seq", "payload"] as const;

/** Strict parse of one wire line; trailing garbage is rejected. */
export function decode(line: string): Envelope {
  const stripped = line.endsWith("\n") ? line.slice(0, -1) : line;
  if (stripped.includes("\n") || stripped.includes("\r")) {
    throw new WireError("DecodeError", "expected exactly one line");
  }
  let obj: unknown;
  try {
    obj = JSON.parse(stripped);
  } catch (e) {
    throw new WireError("DecodeError", `malformed JSON: ${(e as Error).message}`);
  }
  if (typeof obj !== "object" || obj === null || Array.isArray(obj)) {
    throw new WireError("DecodeError", "envelope must be a JSON object");
  }
  const record = obj as Record<string, unknown>;
  const extra = Object.keys(record).filter((k) => !ALLOWED_KEYS.has(k));
  if (extra.length > 0) {
    throw new WireError("DecodeError", `unknown envelope keys ${JSON.stringify(extra.sort())}`);
  }
  for (const key of REQUIRED_KEYS) {
    if (!(key in record)) throw new WireError("DecodeError", `missing envelope key '${key}'`);
  }
  if (record.v !== PROTOCOL_VERSION) {
    throw new WireError("VersionError", `unsupported version ${JSON.stringify(record.v)}`);
  }
  if (typeof record.kind !== "string" || !KIND_SET.has(record.kind)) {
    throw new WireError("KindError", `unknown kind ${JSON.stringify(record.kind)}`);
  }
  for (const key of ["stream", "from", "payload"] as const) {
    if (typeof record[key] !== "string") {
      throw new WireError("DecodeError", `envelope key '${key}' must be a string`);
    }
  }
  if (typeof record.seq !== "number") {
    throw new WireError("DecodeError", "envelope key 'seq' must be a number");
  }
  if (record.to !== undefined && typeof record.to !== "string") {
    throw new WireError("DecodeError", "envelope key 'to' must be a string");
  }
  const env: Envelope = {
    stream: record.stream as string,
    from: record.from as string,
    kind: record.kind as MessageKind,
    seq: record.seq,
    payload: record.payload as string,
  };
  if (record.to !== undefined) env.to = record.to as string;
  try {
    checkEnvelope(env);
  } catch (e) {
    if (e instanceof WireError) throw new WireError("DecodeError", e.message);
    throw e;
  }
  return env;
}

/** One advertised media track, matching the registry's descriptor shape. */
export interface TrackInfo {
  kind: "audio" | "video" | "data";
  label: string;
  enabled: boolean;
}

export function trackToDict(t: TrackInfo): { kind: string; label: string; enabled: boolean } {
  return { kind: t.kind, label: t.label, enabled: t.enabled };
}

export function trackFromDict(d: Record<string, unknown>): TrackInfo {
  const kind = d.kind;
  if (kind !== "audio" && kind !== "video" && kind !== "data") {
    throw new WireError("ValidationError", `track kind must be audio, video or data, got ${JSON.stringify(kind)}`);
  }
  const label = d.label;
  if (typeof label !== "string" || !label) {
    throw new WireError("ValidationError", "track label must be non-empty");
  }
  return { kind, label, enabled: d.enabled === undefined ? true : Boolean(d.enabled) };
}
