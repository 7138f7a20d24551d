import { z } from "zod";

/** Typed client for the review service HTTP API (all routes under /api/v1). */

export const CandidateSchema = z.object({
  rank: z.number().int().min(1),
  confidence: z.number().min(0).max(1),
  frame_index: z.number().int().min(0),
  crop_path: z.string(),
});

export const InstanceSchema = z.object({
  id: z.number().int(),
  first_frame: z.number().int(),
  last_frame: z.number().int(),
  candidates: z.array(CandidateSchema),
  chosen_rank: z.number().int().min(1),
  decision: z.enum(["saved", "deleted"]).nullable(),
  ocr: z.record(z.string(), z.string()),
});

export const InstancesPayloadSchema = z.object({
  v: z.literal(1),
  job_id: z.string(),
  stream_id: z.string(),
  instances: z.array(InstanceSchema),
});

export const JobSchema = z.object({
  job_id: z.string(),
  status: z.enum(["queued", "running", "done", "failed"]),
  stream_id: z.string(),
  progress: z.object({
    frames_processed: z.number().int(),
    frames_total: z.number().int(),
  }),
  error: z.string().nullable(),
});

export const SelectResponseSchema = z.object({
  job_id: z.string(),
  instance_id: z.number().int(),
  chosen_rank: z.number().int(),
  ocr_text: z.string(),
});

export const SavedRecordSchema = z.object({
  job_id: z.string(),
  instance_id: z.number().int(),
  chosen_rank: z.number().int(),
  ocr_text: z.string(),
  ocr_text_normalized: z.string(),
  decision: z.literal("saved"),
  timestamp: z.number(),
});

export type InstancesPayload = z.infer<typeof InstancesPayloadSchema>;
export type Job = z.infer<typeof JobSchema>;
export type SavedRecord = z.infer<typeof SavedRecordSchema>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

async function parseError(resp: Response): Promise<ApiError> {
  try {
    const body = await resp.json();
    return new ApiError(resp.status, body.error?.code ?? "unknown", body.error?.message ?? resp.statusText);
  } catch {
    return new ApiError(resp.status, "unknown", resp.statusText);
  }
}

export class ReviewApi {
  constructor(readonly baseUrl: string) {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    const resp = await fetch(`${this.baseUrl}/api/v1${path}`, {
      headers: { "Content-Type": "application/json" },
      ...init,
    });
    if (!resp.ok) throw await parseError(resp);
    return resp.json();
  }

  async submitJob(streamPath: string, config: Record<string, unknown> = {}): Promise<string> {
    const body = await this.request("/jobs", {
      method: "POST",
      body: JSON.stringify({ stream_path: streamPath, config }),
    });
    return z.object({ job_id: z.string() }).parse(body).job_id;
  }

  async getJob(jobId: string): Promise<Job> {
    return JobSchema.parse(await this.request(`/jobs/${jobId}`));
  }

  async listInstances(jobId: string): Promise<InstancesPayload> {
    return InstancesPayloadSchema.parse(await this.request(`/jobs/${jobId}/instances`));
  }

  candidateUrl(jobId: string, instanceId: number, rank: number): string {
    return `${this.baseUrl}/api/v1/instances/${jobId}/${instanceId}/candidates/${rank}.png`;
  }

  async select(jobId: string, instanceId: number, rank: number) {
    return SelectResponseSchema.parse(
      await this.request(`/instances/${jobId}/${instanceId}/select`, {
        method: "POST",
        body: JSON.stringify({ rank }),
      }),
    );
  }

  async save(jobId: string, instanceId: number): Promise<SavedRecord> {
    return SavedRecordSchema.parse(
      await this.request(`/instances/${jobId}/${instanceId}/save`, { method: "POST" }),
    );
  }

  async deleteInstance(jobId: string, instanceId: number): Promise<void> {
    await this.request(`/instances/${jobId}/${instanceId}`, { method: "DELETE" });
  }

  async results(): Promise<Record<string, unknown>[]> {
    const body = await this.request("/results");
    return z.object({ results: z.array(z.record(z.unknown())) }).parse(body).results;
  }
}
