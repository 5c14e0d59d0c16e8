// Entry point: pick a model preset and a transport, then serve.
//
//   node dist/cli.js --model base-uncased --vocab vocab.txt --port 9400
//   node dist/cli.js --model longdoc --vocab vocab.txt --stdio

import { parseArgs } from "node:util";

import { HashModel, MODEL_PRESETS } from "./hashmodel.js";
import { serveStdio, serveTcp } from "./server.js";
import { loadVocab } from "./tokenizer.js";

function fail(message: string): never {
  process.stderr.write(message + "\n");
  process.exit(1);
}

function main(): void {
  const { values } = parseArgs({
    options: {
      model: { type: "string", default: "base-uncased" },
      vocab: { type: "string" },
      port: { type: "string" },
      stdio: { type: "boolean", default: false },
    },
  });
  const preset = MODEL_PRESETS[values.model!];
  if (!preset) {
    fail(`unknown model ${JSON.stringify(values.model)}; known: ${Object.keys(MODEL_PRESETS).join(", ")}`);
  }
  if (!values.vocab) {
    fail("--vocab <file> is required");
  }
  const vocab = loadVocab(values.vocab!);
  const model = new HashModel(preset);
  if (values.stdio) {
    serveStdio(model, vocab);
    return;
  }
  if (!values.port) {
    fail("either --port <n> or --stdio is required");
  }
  const port = Number(values.port);
  if (!Number.isInteger(port) || port < 1 || port > 65535) {
    fail(`invalid port ${JSON.stringify(values.port)}`);
  }
  const server = serveTcp(port, model, vocab);
  server.on("listening", () => {
    process.stderr.write(`sidecar: model ${preset.name} listening on 127.0.0.1:${port}\n`);
  });
  server.on("error", (err) => fail(`sidecar: ${err.message}`));
}

main();
