/** Typed client for the review service API (v1). */

export interface UtteranceRow {
  key: string;
  origin: { kind: string; category?: string; index: number };
  text: string;
  labels: LabelEntry[];
  provenance: string | null;
}

export interface ReviewTask {
  study_id: string;
  original_text: string;
  structured_text: string;
  utterances: UtteranceRow[];
  version: number;
}

export interface LabelEntry {
  disease: string;
  status: "Present" | "Absent" | "Uncertain";
}

export interface DiffPayload {
  insertions: number;
  deletions: number;
  replacements: number;
  similarity_ratio: number;
}

export interface SubmitResult {
  study_id: string;
  version: number;
  diff: DiffPayload;
}

export interface TaxonomyNode {
  name: string;
  children: TaxonomyNode[];
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private token?: string,
  ) {}

  private headers(): Record<string, string> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token) {
      headers["Authorization"] = `Bearer ${this.token}`;
    }
    return headers;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      method,
      headers: this.headers(),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await response.json();
    if (!response.ok) {
      const error = (payload as { error?: { code?: string; message?: string } }).error ?? {};
      throw new ApiError(response.status, error.code ?? "Unknown", error.message ?? response.statusText);
    }
    return payload as T;
  }

  nextTask(reviewer: string): Promise<ReviewTask> {
    return this.request<ReviewTask>("GET", `/tasks/next?reviewer=${encodeURIComponent(reviewer)}`);
  }

  submitReview(
    studyId: string,
    body: {
      edited_text: string;
      label_corrections: Array<[string, LabelEntry[]]>;
      expected_version: number;
      reviewer?: string;
    },
  ): Promise<SubmitResult> {
    return this.request<SubmitResult>("POST", `/studies/${encodeURIComponent(studyId)}/review`, body);
  }

  diff(studyId: string): Promise<DiffPayload & { study_id: string; version: number }> {
    return this.request("GET", `/studies/${encodeURIComponent(studyId)}/diff`);
  }

  taxonomy(): Promise<TaxonomyNode[]> {
    return this.request<TaxonomyNode[]>("GET", "/taxonomy");
  }

  summary(): Promise<unknown> {
    return this.request("GET", "/summary");
  }
}
