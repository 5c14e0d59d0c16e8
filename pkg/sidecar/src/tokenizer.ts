// WordPiece tokenizer mirroring the pipeline's reference implementation.
// Any divergence here fails the cross-implementation parity check, so the
// rules are kept byte-for-byte compatible: whitespace split, punctuation as
// standalone words, greedy longest-match with "##" continuations, words over
// 100 characters (or with no full decomposition) become a single [UNK].

import { createHash } from "node:crypto";
import { readFileSync } from "node:fs";

export const MAX_WORD_CHARS = 100;
const SPECIAL_TOKENS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

export interface Vocab {
  tokens: string[];
  index: Map<string, number>;
  digest: string; // sha256 of the raw vocab file bytes
  unkId: number;
}

export function loadVocab(path: string): Vocab {
  const raw = readFileSync(path);
  const digest = createHash("sha256").update(raw).digest("hex");
  const tokens = raw
    .toString("utf-8")
    .split(/\r?\n/)
    .map((t) => t.replace(/\r$/, ""))
    .filter((t) => t.length > 0);
  const index = new Map<string, number>();
  tokens.forEach((tok, i) => {
    if (index.has(tok)) {
      throw new Error(`vocabulary contains duplicate token ${JSON.stringify(tok)}`);
    }
    index.set(tok, i);
  });
  for (const special of SPECIAL_TOKENS) {
    if (!index.has(special)) {
      throw new Error(`vocabulary missing special token ${special}`);
    }
  }
  return { tokens, index, digest, unkId: index.get("[UNK]")! };
}

function isPunctuation(ch: string): boolean {
  const cp = ch.codePointAt(0)!;
  if (
    (cp >= 33 && cp <= 47) ||
    (cp >= 58 && cp <= 64) ||
    (cp >= 91 && cp <= 96) ||
    (cp >= 123 && cp <= 126)
  ) {
    return true;
  }
  return /\p{P}/u.test(ch);
}

export function basicTokenize(text: string, lowercase: boolean): string[] {
  if (lowercase) {
    text = text.toLowerCase();
  }
  const words: string[] = [];
  let current = "";
  for (const ch of text) {
    if (/\s/u.test(ch)) {
      if (current) {
        words.push(current);
        current = "";
      }
    } else if (isPunctuation(ch)) {
      if (current) {
        words.push(current);
        current = "";
      }
      words.push(ch);
    } else {
      current += ch;
    }
  }
  if (current) {
    words.push(current);
  }
  return words;
}

function wordpieceWord(word: string, vocab: Vocab): number[] | null {
  const ids: number[] = [];
  let start = 0;
  while (start < word.length) {
    let end = word.length;
    let match: number | null = null;
    while (start < end) {
      let piece = word.slice(start, end);
      if (start > 0) {
        piece = "##" + piece;
      }
      const id = vocab.index.get(piece);
      if (id !== undefined) {
        match = id;
        break;
      }
      end -= 1;
    }
    if (match === null) {
      return null;
    }
    ids.push(match);
    start = end;
  }
  return ids;
}

export function wordpieceTokenize(sentence: string, vocab: Vocab, lowercase: boolean): number[] {
  const ids: number[] = [];
  for (const word of basicTokenize(sentence, lowercase)) {
    if (word.length > MAX_WORD_CHARS) {
      ids.push(vocab.unkId);
      continue;
    }
    const pieces = wordpieceWord(word, vocab);
    if (pieces === null) {
      ids.push(vocab.unkId);
    } else {
      ids.push(...pieces);
    }
  }
  return ids;
}
