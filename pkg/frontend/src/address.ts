/**
 * Stream locator parsing for the src attribute: a websocket URL whose path
 * names the stream, "ws(s)://host:port/str/15?token=...". The signaling
 * endpoint for any stream on that host is "/ws"; query parameters carry
 * service options such as the access token.
 */

import { validateStreamRef, WireError } from "./wire.js";

export interface StreamLocator {
  /** Signaling websocket endpoint, token included when present. */
  wsEndpoint: string;
  /** Raw or hashed stream reference from the URL path. */
  stream: string;
  /** http(s) origin of the same host, for registry and health queries. */
  httpBase: string;
  params: Record<string, string>;
}

export function parseSrc(src: string): StreamLocator {
  let url: URL;
  try {
    url = new URL(src);
  } catch {
    throw new WireError("ValidationError", `not a URL: ${JSON.stringify(src)}`);
  }
  if (url.protocol !== "ws:" && url.protocol !== "wss:") {
    throw new WireError("ValidationError", `not a websocket locator: ${JSON.stringify(src)}`);
  }
  const path = url.pathname.replace(/^\//, "");
  if (!path) {
    throw new WireError("ValidationError", `locator has no stream path: ${JSON.stringify(src)}`);
  }
  const stream = validateStreamRef(decodeURIComponent(path));
  const params: Record<string, string> = {};
  url.searchParams.forEach((value, key) => {
    params[key] = value;
  });
  const ws = `${url.protocol}//${url.host}/ws`;
  const token = params["token"];
  return {
    wsEndpoint: token !== undefined ? `${ws}?token=${encodeURIComponent(token)}` : ws,
    stream,
    httpBase: `${url.protocol === "wss:" ? "https:" : "http:"}//${url.host}`,
    params,
  };
}

/** Build a src URL from its parts; inverse of parseSrc for simple names. */
export function buildSrc(base: string, stream: string, token?: string): string {
  validateStreamRef(stream);
  const trimmed = base.replace(/\/+$/, "");
  const path = stream.split("/").map(encodeURIComponent).join("/");
  const query = token ? `?token=${encodeURIComponent(token)}` : "";
  return `${trimmed}/${path}${query}`;
}
