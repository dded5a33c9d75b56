/**
 * Word-level diff statistics, mirroring the server's algorithm so the live
 * preview matches what the service will report. Authoritative numbers always
 * come back from the POST response; this module only powers the preview.
 *
 * Matching is the recursive longest-matching-block (gestalt) scheme with no
 * junk heuristic over whitespace tokens. Replacements count as
 * max(aLength, bLength); similarity ratio is 2*matches / (lenA + lenB).
 */

export interface Block {
  a: number;
  b: number;
  size: number;
}

export type OpKind = "equal" | "insert" | "delete" | "replace";

export interface Opcode {
  kind: OpKind;
  aLo: number;
  aHi: number;
  bLo: number;
  bHi: number;
}

export interface DiffStats {
  insertions: number;
  deletions: number;
  replacements: number;
  matches: number;
  similarity_ratio: number;
}

export function tokenize(text: string): string[] {
  return text.split(/\s+/).filter((t) => t.length > 0);
}

function findLongestMatch(
  a: string[],
  b: string[],
  alo: number,
  ahi: number,
  blo: number,
  bhi: number,
): Block {
  const b2j = new Map<string, number[]>();
  for (let j = blo; j < bhi; j++) {
    const token = b[j];
    const positions = b2j.get(token);
    if (positions) {
      positions.push(j);
    } else {
      b2j.set(token, [j]);
    }
  }
  let besti = alo;
  let bestj = blo;
  let bestsize = 0;
  let j2len = new Map<number, number>();
  for (let i = alo; i < ahi; i++) {
    const newj2len = new Map<number, number>();
    for (const j of b2j.get(a[i]) ?? []) {
      const k = (j2len.get(j - 1) ?? 0) + 1;
      newj2len.set(j, k);
      if (k > bestsize) {
        besti = i - k + 1;
        bestj = j - k + 1;
        bestsize = k;
      }
    }
    j2len = newj2len;
  }
  return { a: besti, b: bestj, size: bestsize };
}

/** Non-overlapping matching blocks in order, plus the zero-length sentinel. */
export function matchingBlocks(a: string[], b: string[]): Block[] {
  const found: Block[] = [];
  const queue: Array<[number, number, number, number]> = [[0, a.length, 0, b.length]];
  while (queue.length > 0) {
    const [alo, ahi, blo, bhi] = queue.pop()!;
    const block = findLongestMatch(a, b, alo, ahi, blo, bhi);
    if (block.size > 0) {
      found.push(block);
      queue.push([alo, block.a, blo, block.b]);
      queue.push([block.a + block.size, ahi, block.b + block.size, bhi]);
    }
  }
  found.sort((x, y) => x.a - y.a || x.b - y.b);
  found.push({ a: a.length, b: b.length, size: 0 });
  return found;
}

export function opcodes(a: string[], b: string[]): Opcode[] {
  const ops: Opcode[] = [];
  let ai = 0;
  let bi = 0;
  for (const block of matchingBlocks(a, b)) {
    if (ai < block.a && bi < block.b) {
      ops.push({ kind: "replace", aLo: ai, aHi: block.a, bLo: bi, bHi: block.b });
    } else if (ai < block.a) {
      ops.push({ kind: "delete", aLo: ai, aHi: block.a, bLo: bi, bHi: block.b });
    } else if (bi < block.b) {
      ops.push({ kind: "insert", aLo: ai, aHi: block.a, bLo: bi, bHi: block.b });
    }
    if (block.size > 0) {
      ops.push({
        kind: "equal",
        aLo: block.a,
        aHi: block.a + block.size,
        bLo: block.b,
        bHi: block.b + block.size,
      });
    }
    ai = block.a + block.size;
    bi = block.b + block.size;
  }
  return ops;
}

export function diffStats(original: string, edited: string): DiffStats {
  const a = tokenize(original);
  const b = tokenize(edited);
  let insertions = 0;
  let deletions = 0;
  let replacements = 0;
  let matches = 0;
  for (const op of opcodes(a, b)) {
    const aLen = op.aHi - op.aLo;
    const bLen = op.bHi - op.bLo;
    if (op.kind === "insert") {
      insertions += bLen;
    } else if (op.kind === "delete") {
      deletions += aLen;
    } else if (op.kind === "replace") {
      replacements += Math.max(aLen, bLen);
    } else {
      matches += aLen;
    }
  }
  const total = a.length + b.length;
  const ratio = total === 0 ? 1.0 : (2.0 * matches) / total;
  return { insertions, deletions, replacements, matches, similarity_ratio: ratio };
}

/** Same rounding as the service payload, for display/parity comparisons. */
export function toPayload(stats: DiffStats): Record<string, number> {
  return {
    insertions: stats.insertions,
    deletions: stats.deletions,
    replacements: stats.replacements,
    similarity_ratio: Math.round(stats.similarity_ratio * 10000) / 10000,
  };
}
