/**
 * Extract entity names from raw model output.
 *
 * The preferred shape is a quoted, comma-separated list. Models that ignore
 * the format usually fall back to a numbered or bulleted list, so line
 * splitting with number/bullet stripping is the fallback. Anything
 * unparseable yields an empty list; this module never throws.
 */

const QUOTED = /"([^"\n]+)"/g;

/** Leading list markers: "1.", "2)", "10 -", "*", "-". The punctuation after
 * the number is mandatory so titles that open with a year survive intact. */
const LIST_MARKER = /^\s*(?:\d+\s*[.):\-]+|[-*•])\s*/;

/** Trailing separators or stray closers left after marker stripping. */
const TRAILING_PUNCT = /[\s,;."]+$/;
const LEADING_PUNCT = /^[\s,;"]+/;

function dedupe(names: string[], limit: number): string[] {
  const seen = new Set<string>();
  const out: string[] = [];
  for (const name of names) {
    if (name.length === 0 || seen.has(name)) {
      continue;
    }
    seen.add(name);
    out.push(name);
    if (out.length >= limit) {
      break;
    }
  }
  return out;
}

/**
 * Parse a model response into at most `limit` distinct names, in the order
 * the response listed them.
 */
export function parseResponse(text: string, limit: number = Infinity): string[] {
  if (typeof text !== "string" || text.length === 0) {
    return [];
  }
  const fromQuotes: string[] = [];
  for (const match of text.matchAll(QUOTED)) {
    fromQuotes.push(match[1].trim());
  }
  if (fromQuotes.length > 0) {
    return dedupe(fromQuotes, limit);
  }
  const fromLines = text
    .split("\n")
    .map((line) => line.replace(LIST_MARKER, "").replace(LEADING_PUNCT, "").replace(TRAILING_PUNCT, "").trim())
    .filter((line) => line.length > 0);
  return dedupe(fromLines, limit);
}
