import * as readline from "readline";

import { decodePng } from "./png";
import { detect, RuleSet } from "./detect";

export const PROTOCOL_NAME = "captcha-grid-lab";
export const PROTOCOL_VERSION = 1;

interface Streams {
  input: NodeJS.ReadableStream;
  output: NodeJS.WritableStream;
}

function reply(output: NodeJS.WritableStream, payload: unknown): void {
  output.write(JSON.stringify(payload) + "\n");
}

/** Serve the stdio protocol until end of input. Resolves with an exit code. */
export function serve(rules: RuleSet, streams: Streams): Promise<number> {
  const { input, output } = streams;
  const lines = readline.createInterface({ input, terminal: false });
  let handshaken = false;

  return new Promise((resolve) => {
    lines.on("line", (line) => {
      if (!handshaken) {
        let hello: any;
        try {
          hello = JSON.parse(line);
        } catch {
          reply(output, { id: null, error: "handshake line is not JSON" });
          resolve(1);
          lines.close();
          return;
        }
        if (hello?.hello !== PROTOCOL_NAME) {
          reply(output, { id: null, error: `unexpected handshake: ${line}` });
          resolve(1);
          lines.close();
          return;
        }
        handshaken = true;
        reply(output, { ready: true, version: PROTOCOL_VERSION });
        return;
      }

      if (line.trim() === "") return;
      let request: any;
      try {
        request = JSON.parse(line);
      } catch {
        reply(output, { id: null, error: "request line is not JSON" });
        return;
      }
      const id = typeof request?.id === "number" ? request.id : null;
      if (id === null || typeof request?.image !== "string") {
        reply(output, { id, error: "request needs numeric id and base64 image" });
        return;
      }
      try {
        const image = decodePng(Buffer.from(request.image, "base64"));
        const detections = detect(image, rules);
        reply(output, { id, detections });
      } catch (err) {
        reply(output, { id, error: `detection failed: ${(err as Error).message}` });
      }
    });

    lines.on("close", () => resolve(0));
  });
}
