/**
 * Three-pane review app: original free-text report, generated structured
 * report, and an editable buffer, with per-utterance label correction backed
 * by the served disease tree.
 *
 * Submit stays disabled while the buffer fails client-side validation (the
 * same rule the service enforces with 422), drafts autosave locally, and
 * version conflicts surface as a dialog with the current version refetched.
 */

import { ApiClient, ApiError, LabelEntry, ReviewTask, TaxonomyNode } from "./api.js";
import { diffStats, toPayload } from "./diff.js";
import { clearDraft, loadDraft, saveDraft } from "./drafts.js";
import { CorrectionSet, NO_FINDING } from "./labels.js";
import { blockingIssues } from "./validate.js";

export interface AppOptions {
  baseUrl: string;
  reviewer: string;
  token?: string;
}

export class App {
  readonly api: ApiClient;
  readonly corrections = new CorrectionSet();
  task: ReviewTask | null = null;
  selectedKey: string | null = null;
  taxonomy: TaxonomyNode[] = [];

  private root: HTMLElement;
  private reviewer: string;

  constructor(root: HTMLElement, options: AppOptions) {
    this.root = root;
    this.reviewer = options.reviewer;
    this.api = new ApiClient(options.baseUrl, options.token);
    this.renderShell();
  }

  // -- DOM access helpers --------------------------------------------------

  el<T extends HTMLElement>(selector: string): T {
    const node = this.root.querySelector(selector);
    if (!node) {
      throw new Error(`missing element ${selector}`);
    }
    return node as T;
  }

  get editor(): HTMLTextAreaElement {
    return this.el<HTMLTextAreaElement>("#editor");
  }

  get submitButton(): HTMLButtonElement {
    return this.el<HTMLButtonElement>("#submit");
  }

  private renderShell(): void {
    this.root.innerHTML = `
      <header>
        <button id="load-next">Next task</button>
        <span id="status"></span>
      </header>
      <main class="panes">
        <section><h2>Original report</h2><pre id="pane-original"></pre></section>
        <section><h2>Structured report</h2><pre id="pane-structured"></pre></section>
        <section>
          <h2>Your edit</h2>
          <textarea id="editor" rows="18" spellcheck="false"></textarea>
          <div id="validation" class="issues"></div>
          <div id="diff-preview"></div>
        </section>
      </main>
      <section id="utterances"></section>
      <aside id="tree"><h2>Disease tree</h2><div id="tree-body"></div></aside>
      <footer>
        <button id="submit" disabled>Submit review</button>
        <span id="result"></span>
        <div id="conflict" hidden>
          Someone already saved a newer review of this study.
          <button id="conflict-reload">Load current version</button>
        </div>
      </footer>
    `;
    this.el("#load-next").addEventListener("click", () => void this.loadNextTask());
    this.editor.addEventListener("input", () => this.onEdit());
    this.submitButton.addEventListener("click", () => void this.submit());
    this.el("#conflict-reload").addEventListener("click", () => void this.refreshVersion());
  }

  // -- task lifecycle --------------------------------------------------------

  async loadNextTask(): Promise<void> {
    this.el("#result").textContent = "";
    this.el("#conflict").hidden = true;
    try {
      this.task = await this.api.nextTask(this.reviewer);
    } catch (error) {
      if (error instanceof ApiError && error.status === 404) {
        this.task = null;
        this.el("#status").textContent = "No tasks left - queue is empty.";
        this.el("#pane-original").textContent = "";
        this.el("#pane-structured").textContent = "";
        this.editor.value = "";
        this.el("#utterances").innerHTML = "";
        this.submitButton.disabled = true;
        return;
      }
      throw error;
    }
    if (this.taxonomy.length === 0) {
      this.taxonomy = await this.api.taxonomy();
      this.renderTree();
    }
    const task = this.task;
    this.el("#status").textContent = `Reviewing ${task.study_id} (version ${task.version})`;
    this.el("#pane-original").textContent = task.original_text;
    this.el("#pane-structured").textContent = task.structured_text;

    for (const utterance of task.utterances) {
      this.corrections.seed(utterance.key, utterance.labels);
    }
    const draft = loadDraft(task.study_id);
    if (draft) {
      this.editor.value = draft.editedText;
      this.corrections.restore(draft.corrections);
    } else {
      this.editor.value = task.structured_text;
    }
    this.selectedKey = task.utterances.length > 0 ? task.utterances[0].key : null;
    this.renderUtterances();
    this.onEdit();
  }

  private onEdit(): void {
    const issues = blockingIssues(this.editor.value);
    const validation = this.el("#validation");
    validation.innerHTML = issues
      .map((i) => `<div class="issue" data-code="${i.code}">line ${i.line}: ${i.code}: ${i.message}</div>`)
      .join("");
    this.submitButton.disabled = issues.length > 0 || this.task === null;
    if (this.task) {
      saveDraft(this.task.study_id, {
        editedText: this.editor.value,
        corrections: this.corrections.payload(),
      });
      const preview = toPayload(diffStats(this.task.structured_text, this.editor.value));
      this.el("#diff-preview").textContent =
        `preview - insertions ${preview.insertions}, deletions ${preview.deletions}, ` +
        `replacements ${preview.replacements}, ratio ${preview.similarity_ratio.toFixed(2)}`;
    }
  }

  async submit(): Promise<void> {
    if (!this.task || this.submitButton.disabled) {
      return;
    }
    try {
      const result = await this.api.submitReview(this.task.study_id, {
        edited_text: this.editor.value,
        label_corrections: this.corrections.payload(),
        expected_version: this.task.version,
        reviewer: this.reviewer,
      });
      clearDraft(this.task.study_id);
      this.task.version = result.version;
      const diff = result.diff;
      this.el("#result").textContent =
        `saved version ${result.version} - insertions ${diff.insertions}, ` +
        `deletions ${diff.deletions}, replacements ${diff.replacements}, ` +
        `ratio ${diff.similarity_ratio}`;
      this.el("#conflict").hidden = true;
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        this.el("#conflict").hidden = false;
        return;
      }
      if (error instanceof ApiError && error.status === 422) {
        this.el("#validation").innerHTML = `<div class="issue" data-code="${error.code}">${error.message}</div>`;
        return;
      }
      throw error;
    }
  }

  /** After a conflict: adopt the currently stored version so a resubmit wins. */
  async refreshVersion(): Promise<void> {
    if (!this.task) {
      return;
    }
    const current = await this.api.diff(this.task.study_id);
    this.task.version = current.version;
    this.el("#status").textContent = `Reviewing ${this.task.study_id} (version ${this.task.version})`;
    this.el("#conflict").hidden = true;
  }

  // -- utterance labels -------------------------------------------------------

  private renderUtterances(): void {
    const container = this.el("#utterances");
    container.innerHTML = "";
    if (!this.task) {
      return;
    }
    for (const utterance of this.task.utterances) {
      const row = document.createElement("div");
      row.className = "utterance" + (utterance.key === this.selectedKey ? " selected" : "");
      row.dataset.key = utterance.key;

      const text = document.createElement("span");
      text.className = "utterance-text";
      text.textContent = utterance.text;
      row.appendChild(text);

      const chips = document.createElement("span");
      chips.className = "labels";
      for (const label of this.corrections.labelsFor(utterance.key)) {
        chips.appendChild(this.renderChip(utterance.key, label));
      }
      row.appendChild(chips);

      row.addEventListener("click", () => {
        this.selectedKey = utterance.key;
        this.renderUtterances();
      });
      container.appendChild(row);
    }
  }

  private renderChip(key: string, label: LabelEntry): HTMLElement {
    const chip = document.createElement("button");
    chip.className = "chip";
    chip.dataset.disease = label.disease;
    chip.dataset.status = label.status;
    chip.textContent = label.disease === NO_FINDING ? label.disease : `${label.disease} (${label.status})`;
    chip.title = "click: cycle status, shift-click: remove";
    chip.addEventListener("click", (event) => {
      event.stopPropagation();
      if (event.shiftKey) {
        this.corrections.remove(key, label.disease);
      } else {
        this.corrections.toggleStatus(key, label.disease);
      }
      this.persistCorrections();
      this.renderUtterances();
    });
    return chip;
  }

  /** Tree picker: clicking a leaf adds it to the selected utterance. */
  private renderTree(): void {
    const body = this.el("#tree-body");
    body.innerHTML = "";
    const render = (nodes: TaxonomyNode[], depth: number): HTMLElement => {
      const list = document.createElement("ul");
      for (const node of nodes) {
        const item = document.createElement("li");
        if (node.children.length === 0) {
          const leaf = document.createElement("button");
          leaf.className = "leaf";
          leaf.dataset.name = node.name;
          leaf.textContent = node.name;
          leaf.addEventListener("click", () => this.addLabel(node.name));
          item.appendChild(leaf);
        } else {
          const details = document.createElement("details");
          details.open = depth < 1;
          const summary = document.createElement("summary");
          summary.textContent = node.name;
          details.appendChild(summary);
          details.appendChild(render(node.children, depth + 1));
          item.appendChild(details);
        }
        list.appendChild(item);
      }
      return list;
    };
    body.appendChild(render(this.taxonomy, 0));
  }

  addLabel(disease: string, status: LabelEntry["status"] = "Present"): void {
    if (!this.selectedKey) {
      return;
    }
    this.corrections.add(this.selectedKey, disease, status);
    this.persistCorrections();
    this.renderUtterances();
  }

  private persistCorrections(): void {
    if (this.task) {
      saveDraft(this.task.study_id, {
        editedText: this.editor.value,
        corrections: this.corrections.payload(),
      });
    }
  }
}

export function createApp(root: HTMLElement, options: AppOptions): App {
  return new App(root, options);
}
