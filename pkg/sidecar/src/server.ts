// Transport layer: newline-delimited JSON over a TCP socket or stdio.
// Each line is handled independently; responses carry the request id, so
// clients may issue concurrent requests and accept out-of-order replies.

import * as net from "node:net";
import { Readable, Writable } from "node:stream";

import { HashModel } from "./hashmodel.js";
import { handleRequest } from "./protocol.js";
import { Vocab } from "./tokenizer.js";

function attachLineHandler(
  input: Readable,
  output: Writable,
  model: HashModel,
  vocab: Vocab
): void {
  let buffer = "";
  input.on("data", (chunk: Buffer | string) => {
    buffer += chunk.toString();
    const lines = buffer.split("\n");
    buffer = lines.pop() ?? "";
    for (const line of lines) {
      if (!line.trim()) {
        continue;
      }
      const response = handleRequest(model, vocab, line);
      output.write(JSON.stringify(response) + "\n");
    }
  });
}

export function serveTcp(port: number, model: HashModel, vocab: Vocab): net.Server {
  const server = net.createServer((socket) => {
    socket.on("error", () => socket.destroy()); // client went away mid-request
    attachLineHandler(socket, socket, model, vocab);
  });
  server.listen(port, "127.0.0.1");
  return server;
}

export function serveStdio(model: HashModel, vocab: Vocab): void {
  process.stdin.setEncoding("utf-8");
  attachLineHandler(process.stdin, process.stdout, model, vocab);
  process.stdin.on("end", () => process.exit(0));
}
