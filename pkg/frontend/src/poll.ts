// Job polling: one second between status checks, resolves on completion,
// rejects when the server reports an error.

import type { ApiClient, JobStatus } from "./api.js";

export function pollJob(
  api: Pick<ApiClient, "getJob">,
  jobId: string,
  onUpdate?: (status: JobStatus) => void,
  intervalMs = 1000,
): Promise<JobStatus> {
  return new Promise((resolve, reject) => {
    const tick = async () => {
      let status: JobStatus;
      try {
        status = await api.getJob(jobId);
      } catch (err) {
        reject(err);
        return;
      }
      onUpdate?.(status);
      if (status.done) {
        if (status.error) reject(new Error(status.error));
        else resolve(status);
        return;
      }
      setTimeout(tick, intervalMs);
    };
    tick();
  });
}
