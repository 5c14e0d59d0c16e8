// Request handling for the newline-delimited JSON wire protocol. The
// handler is a pure function of (model, vocab, request), so the server is
// stateless between requests and the same logic is exercised directly by
// the unit tests without a socket.

import { HashModel } from "./hashmodel.js";
import { Vocab, wordpieceTokenize } from "./tokenizer.js";

// decimal with 9 significant digits: full float32 precision, bit-stable
// for cache population on the client side
export function round9(x: number): number {
  return Number(x.toPrecision(9));
}

function rows9(vectors: Float64Array[]): number[][] {
  return vectors.map((v) => Array.from(v, round9));
}

export interface Handshake {
  model: string;
  dim: number;
  max_len: number;
  vocab_sha256: string;
  granularities: string[];
}

export function handshake(model: HashModel, vocab: Vocab): Handshake {
  return {
    model: model.preset.name,
    dim: model.preset.dim,
    max_len: model.preset.maxLen,
    vocab_sha256: vocab.digest,
    granularities: model.preset.granularities,
  };
}

type Json = Record<string, unknown>;

function errorResponse(id: unknown, message: string): Json {
  const response: Json = { error: message };
  if (typeof id === "string") {
    response.id = id;
  }
  return response;
}

function handleEmbed(model: HashModel, request: Json): Json {
  const id = request.id;
  const granularity = request.granularity;
  const tokenIds = request.token_ids;
  if (typeof id !== "string") {
    return errorResponse(id, "embed requires a string id");
  }
  if (typeof granularity !== "string" || !model.preset.granularities.includes(granularity)) {
    return errorResponse(id, `unsupported granularity ${JSON.stringify(granularity)}`);
  }
  if (!Array.isArray(tokenIds) || tokenIds.some((t) => !Number.isInteger(t) || t < 0)) {
    return errorResponse(id, "token_ids must be a list of nonnegative integers");
  }
  if (tokenIds.length === 0) {
    return errorResponse(id, "token_ids must be nonempty");
  }
  const ids = tokenIds as number[];
  const maxLen = model.preset.maxLen;
  if (granularity === "token") {
    if (ids.length > maxLen) {
      return errorResponse(id, `${ids.length} token ids exceed max_len ${maxLen}; chunk first`);
    }
    return { id, tokens: rows9(model.embedTokens(ids)) };
  }
  if (granularity === "cls") {
    if (ids.length > maxLen) {
      return errorResponse(id, `${ids.length} token ids exceed max_len ${maxLen}; chunk first`);
    }
    return { id, cls: Array.from(model.meanVector(ids), round9) };
  }
  // document granularity truncates instead of erroring
  const truncated = ids.length > maxLen;
  const used = truncated ? ids.slice(0, maxLen) : ids;
  const response: Json = { id, doc: Array.from(model.meanVector(used), round9) };
  if (truncated) {
    response.truncated = true;
  }
  return response;
}

function handleTokenizeCheck(model: HashModel, vocab: Vocab, request: Json): Json {
  const id = request.id;
  if (typeof id !== "string") {
    return errorResponse(id, "tokenize_check requires a string id");
  }
  const sentences = request.sentences;
  if (!Array.isArray(sentences) || sentences.some((s) => typeof s !== "string")) {
    return errorResponse(id, "sentences must be a list of strings");
  }
  const tokenIds = (sentences as string[]).map((s) =>
    wordpieceTokenize(s, vocab, model.preset.lowercase)
  );
  return { id, token_ids: tokenIds };
}

export function handleRequest(model: HashModel, vocab: Vocab, line: string): Json {
  let request: Json;
  try {
    request = JSON.parse(line);
  } catch {
    return errorResponse(undefined, "malformed JSON request");
  }
  if (typeof request !== "object" || request === null) {
    return errorResponse(undefined, "request must be a JSON object");
  }
  switch (request.op) {
    case "hello":
      return handshake(model, vocab) as unknown as Json;
    case "embed":
      return handleEmbed(model, request);
    case "tokenize_check":
      return handleTokenizeCheck(model, vocab, request);
    default:
      return errorResponse(request.id, `unknown op ${JSON.stringify(request.op)}`);
  }
}
