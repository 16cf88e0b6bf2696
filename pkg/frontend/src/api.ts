// Thin client for the analysis server. All JSON except the PNG slice URLs.

import type { VolumeMeta, Axis } from "./geometry.js";

export interface SeedPayload {
  levels: { name: string; center_mm: [number, number, number] }[];
}

export interface JobStatus {
  stage: string;
  percent: number;
  done: boolean;
  error: string | null;
}

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(this.baseUrl + path, init);
    if (!res.ok) {
      const body = await res.text();
      throw new Error(`${init?.method ?? "GET"} ${path}: ${res.status} ${body}`);
    }
    return res.json() as Promise<T>;
  }

  getMeta(): Promise<VolumeMeta> {
    return this.json("/api/meta");
  }

  sliceUrl(axis: Axis, index: number, window?: [number, number]): string {
    const w = window ? `&window=${window[0]},${window[1]}` : "";
    return `${this.baseUrl}/api/slice?axis=${axis}&index=${index}${w}`;
  }

  maskSliceUrl(name: string, axis: Axis, index: number): string {
    return `${this.baseUrl}/api/mask-slice?name=${encodeURIComponent(name)}&axis=${axis}&index=${index}`;
  }

  getSeeds(): Promise<SeedPayload> {
    return this.json("/api/seeds");
  }

  postSeeds(payload: SeedPayload): Promise<{ ok: boolean; count: number }> {
    return this.json("/api/seeds", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  startRun(): Promise<{ job_id: string }> {
    return this.json("/api/run", { method: "POST" });
  }

  getJob(jobId: string): Promise<JobStatus> {
    return this.json(`/api/job/${jobId}`);
  }

  getReport(): Promise<Record<string, unknown>> {
    return this.json("/api/report");
  }
}
