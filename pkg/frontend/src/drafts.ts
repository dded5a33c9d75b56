/**
 * Local draft autosave. Reviewer sessions are long and interruptible; the
 * in-progress edit buffer and pending corrections survive a reload.
 */

import type { LabelEntry } from "./api.js";

export interface Draft {
  editedText: string;
  corrections: Array<[string, LabelEntry[]]>;
  savedAt: number;
}

const PREFIX = "srrg-draft:";

export function saveDraft(studyId: string, draft: Omit<Draft, "savedAt">): void {
  localStorage.setItem(PREFIX + studyId, JSON.stringify({ ...draft, savedAt: Date.now() }));
}

export function loadDraft(studyId: string): Draft | null {
  const raw = localStorage.getItem(PREFIX + studyId);
  if (raw === null) {
    return null;
  }
  try {
    return JSON.parse(raw) as Draft;
  } catch {
    return null;
  }
}

export function clearDraft(studyId: string): void {
  localStorage.removeItem(PREFIX + studyId);
}
