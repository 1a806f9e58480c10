import assert from "node:assert/strict";
import { spawn } from "node:child_process";
import * as fs from "node:fs";
import * as path from "node:path";
import { test } from "node:test";

const ROOT = path.resolve(__dirname, "..", "..");
const MAIN = path.join(ROOT, "dist", "src", "main.js");
const RULES = path.join(ROOT, "rules", "default-colors.json");

const HELLO = JSON.stringify({ hello: "captcha-grid-lab", version: 1 });

interface Exchange {
  send: (line: string) => void;
  next: () => Promise<string>;
  close: () => Promise<number | null>;
}

function startPlugin(): Exchange {
  const child = spawn(process.execPath, [MAIN, RULES], {
    stdio: ["pipe", "pipe", "inherit"],
  });
  const pending: string[] = [];
  const waiters: ((line: string) => void)[] = [];
  let buffer = "";
  child.stdout.on("data", (chunk: Buffer) => {
    buffer += chunk.toString("utf-8");
    let nl;
    while ((nl = buffer.indexOf("\n")) >= 0) {
      const line = buffer.slice(0, nl);
      buffer = buffer.slice(nl + 1);
      const waiter = waiters.shift();
      if (waiter) waiter(line);
      else pending.push(line);
    }
  });
  return {
    send: (line) => child.stdin.write(line + "\n"),
    next: () =>
      new Promise((resolve) => {
        const line = pending.shift();
        if (line !== undefined) resolve(line);
        else waiters.push(resolve);
      }),
    close: () =>
      new Promise((resolve) => {
        child.stdin.end();
        child.on("exit", (code) => resolve(code));
      }),
  };
}

function fixtureBase64(name: string): string {
  return fs.readFileSync(path.join(ROOT, "fixtures", name)).toString("base64");
}

test("handshake then detect round trip", async () => {
  const plugin = startPlugin();
  plugin.send(HELLO);
  const ready = JSON.parse(await plugin.next());
  assert.deepEqual(ready, { ready: true, version: 1 });

  plugin.send(JSON.stringify({ id: 1, image: fixtureBase64("shapes.png"), threshold: 0.2 }));
  const reply = JSON.parse(await plugin.next());
  assert.equal(reply.id, 1);
  assert.equal(reply.detections.length, 2);
  assert.deepEqual(
    reply.detections.map((d: any) => d.label).sort(),
    ["bus", "car"]
  );
  assert.equal(await plugin.close(), 0);
});

test("byte-identical requests get byte-identical responses", async () => {
  const plugin = startPlugin();
  plugin.send(HELLO);
  await plugin.next();
  const request = { image: fixtureBase64("shapes.png"), threshold: 0.2 };
  plugin.send(JSON.stringify({ id: 7, ...request }));
  const first = await plugin.next();
  plugin.send(JSON.stringify({ id: 7, ...request }));
  const second = await plugin.next();
  assert.equal(first, second);
  await plugin.close();
});

test("malformed request line keeps the loop alive", async () => {
  const plugin = startPlugin();
  plugin.send(HELLO);
  await plugin.next();

  plugin.send("this is not json");
  const error = JSON.parse(await plugin.next());
  assert.ok(error.error);

  plugin.send(JSON.stringify({ id: 2, image: fixtureBase64("blank.png"), threshold: 0.2 }));
  const reply = JSON.parse(await plugin.next());
  assert.equal(reply.id, 2);
  assert.deepEqual(reply.detections, []);
  await plugin.close();
});

test("unknown request fields are ignored", async () => {
  const plugin = startPlugin();
  plugin.send(HELLO);
  await plugin.next();
  plugin.send(
    JSON.stringify({
      id: 3,
      image: fixtureBase64("blank.png"),
      threshold: 0.2,
      future_field: { nested: true },
    })
  );
  const reply = JSON.parse(await plugin.next());
  assert.equal(reply.id, 3);
  assert.deepEqual(reply.detections, []);
  await plugin.close();
});

test("bad handshake exits nonzero", async () => {
  const plugin = startPlugin();
  plugin.send(JSON.stringify({ hello: "someone-else", version: 1 }));
  const error = JSON.parse(await plugin.next());
  assert.ok(error.error);
  const code = await plugin.close();
  assert.notEqual(code, 0);
});

test("clean exit on end of input", async () => {
  const plugin = startPlugin();
  plugin.send(HELLO);
  await plugin.next();
  assert.equal(await plugin.close(), 0);
});
