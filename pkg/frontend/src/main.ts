/** Entry point: register the custom elements and boot the demo grid when
 * the page provides one. */

import { BrokerStreamElement } from "./broker-stream.js";
import { VideoIoElement } from "./video-io.js";
import { boot } from "./demo.js";

export function defineElements(registry: CustomElementRegistry = customElements): void {
  if (!registry.get("broker-stream")) registry.define("broker-stream", BrokerStreamElement);
  if (!registry.get("video-io")) registry.define("video-io", VideoIoElement);
}

defineElements();

if (typeof document !== "undefined" && document.getElementById("grid") !== null) {
  boot(document, window.location);
}
