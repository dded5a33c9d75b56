/**
 * Pending label corrections for the loaded task. One entry per disease per
 * utterance; "No Finding" is mutually exclusive with every other label.
 */

import type { LabelEntry } from "./api.js";

export const NO_FINDING = "No Finding";
export const STATUS_CYCLE: LabelEntry["status"][] = ["Present", "Absent", "Uncertain"];

export class CorrectionSet {
  private byKey = new Map<string, Map<string, LabelEntry["status"]>>();

  /** Seed an utterance's working set from its pre-filled labels. */
  seed(key: string, labels: LabelEntry[]): void {
    const slot = new Map<string, LabelEntry["status"]>();
    for (const label of labels) {
      slot.set(label.disease, label.status);
    }
    this.byKey.set(key, slot);
  }

  labelsFor(key: string): LabelEntry[] {
    const slot = this.byKey.get(key);
    if (!slot) {
      return [];
    }
    return [...slot.entries()]
      .map(([disease, status]) => ({ disease, status }))
      .sort((a, b) => a.disease.localeCompare(b.disease));
  }

  add(key: string, disease: string, status: LabelEntry["status"] = "Present"): void {
    const slot = this.byKey.get(key) ?? new Map<string, LabelEntry["status"]>();
    if (disease === NO_FINDING) {
      slot.clear(); // No Finding stands alone
      slot.set(NO_FINDING, "Present");
    } else {
      slot.delete(NO_FINDING);
      slot.set(disease, status);
    }
    this.byKey.set(key, slot);
  }

  remove(key: string, disease: string): void {
    this.byKey.get(key)?.delete(disease);
  }

  /** Cycle Present -> Absent -> Uncertain -> Present. No Finding stays Present. */
  toggleStatus(key: string, disease: string): void {
    const slot = this.byKey.get(key);
    const current = slot?.get(disease);
    if (!slot || current === undefined || disease === NO_FINDING) {
      return;
    }
    const next = STATUS_CYCLE[(STATUS_CYCLE.indexOf(current) + 1) % STATUS_CYCLE.length];
    slot.set(disease, next);
  }

  has(key: string, disease: string): boolean {
    return this.byKey.get(key)?.has(disease) ?? false;
  }

  keys(): string[] {
    return [...this.byKey.keys()].sort();
  }

  payload(): Array<[string, LabelEntry[]]> {
    return this.keys().map((key) => [key, this.labelsFor(key)]);
  }

  restore(payload: Array<[string, LabelEntry[]]>): void {
    this.byKey.clear();
    for (const [key, labels] of payload) {
      this.seed(key, labels);
    }
  }
}
