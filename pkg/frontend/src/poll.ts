import { Job, ReviewApi } from "./api.js";

/**
 * Poll a job once per second until it is done or failed; reports each
 * snapshot so the caller can render progress. At most one request is in
 * flight at a time.
 */
export async function pollJob(
  api: ReviewApi,
  jobId: string,
  onProgress?: (job: Job) => void,
  intervalMs = 1000,
): Promise<Job> {
  for (;;) {
    const job = await api.getJob(jobId);
    onProgress?.(job);
    if (job.status === "done") return job;
    if (job.status === "failed") {
      throw new Error(job.error ?? "job failed");
    }
    await new Promise((resolve) => setTimeout(resolve, intervalMs));
  }
}
