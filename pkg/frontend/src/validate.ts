/**
 * Client-side pre-validation of the edit buffer, mirroring the service's 422
 * rule: an edit is blocked when lenient parsing would silently drop content,
 * i.e. on an empty document, an unknown section header, or an unknown
 * anatomical header. Submit stays disabled while any blocking issue exists.
 */

export const SECTION_HEADERS = [
  "Exam Type",
  "History",
  "Technique",
  "Comparison",
  "Findings",
  "Impression",
] as const;

export const ANATOMIC_HEADERS = [
  "Lungs and Airways",
  "Pleura",
  "Cardiovascular",
  "Hila and Mediastinum",
  "Tubes, Catheters, and Support Devices",
  "Musculoskeletal and Chest Wall",
  "Abdominal",
  "Other",
] as const;

const SECTIONS_LOWER = new Set(SECTION_HEADERS.map((h) => h.toLowerCase()));
const CATEGORIES_LOWER = new Set(ANATOMIC_HEADERS.map((h) => h.toLowerCase()));

export interface BlockingIssue {
  line: number; // 1-based
  code: "EmptyDocument" | "UnknownSectionHeader" | "UnknownAnatomicHeader";
  message: string;
}

const HEADER_LIKE = /^\s*([A-Za-z][^:]{0,60}?)\s*:\s*$/;

function matchSectionHeader(line: string): string | null {
  const idx = line.indexOf(":");
  if (idx < 0) {
    return null;
  }
  const head = line.slice(0, idx).trim().toLowerCase();
  return SECTIONS_LOWER.has(head) ? head : null;
}

export function blockingIssues(text: string): BlockingIssue[] {
  if (text.trim().length === 0) {
    return [{ line: 1, code: "EmptyDocument", message: "the edit is empty" }];
  }
  const issues: BlockingIssue[] = [];
  let section: string | null = null;
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const lineno = i + 1;
    const line = lines[i];
    const stripped = line.trim();
    if (stripped.length === 0) {
      continue;
    }
    const header = matchSectionHeader(stripped);
    if (header !== null) {
      section = header;
      continue;
    }
    if (SECTIONS_LOWER.has(stripped.toLowerCase())) {
      // bare section name: missing colon, tolerated by the lenient parser
      section = stripped.toLowerCase();
      continue;
    }
    if (section === null) {
      const like = HEADER_LIKE.exec(line);
      issues.push({
        line: lineno,
        code: "UnknownSectionHeader",
        message: like ? `unknown section header "${like[1]}"` : "content before any section header",
      });
      continue;
    }
    if (section === "findings" && stripped.endsWith(":")) {
      const name = stripped.replace(/:+$/, "").trim().toLowerCase();
      if (!CATEGORIES_LOWER.has(name) && HEADER_LIKE.test(line)) {
        issues.push({
          line: lineno,
          code: "UnknownAnatomicHeader",
          message: `unknown anatomical header "${stripped.replace(/:+$/, "")}"`,
        });
      }
    }
  }
  return issues;
}

export function isSubmittable(text: string): boolean {
  return blockingIssues(text).length === 0;
}
