import { spawn, spawnSync, ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiError, ReviewApi } from "../src/api.js";
import { pollJob } from "../src/poll.js";
import { applyAction, buildReviewState } from "../src/state.js";

/** End-to-end review flow against a live service on a generated
 * 3-instance stream fixture. */

const PORT = 8731;
let server: ChildProcess;
let workDir: string;
let streamDir: string;
let api: ReviewApi;

function run(cmd: string, args: string[]) {
  const res = spawnSync(cmd, args, { encoding: "utf-8" });
  if (res.status !== 0) {
    throw new Error(`${cmd} ${args.join(" ")} failed: ${res.stderr || res.stdout}`);
  }
}

async function waitForServer(url: string, timeoutMs = 20000) {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const resp = await fetch(`${url}/api/v1/results`);
      if (resp.ok) return;
    } catch {
      /* not up yet */
    }
    await new Promise((r) => setTimeout(r, 200));
  }
  throw new Error("service did not come up");
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "plateflow-ui-"));
  streamDir = join(workDir, "fixture");
  const spec = join(workDir, "spec.json");
  writeFileSync(
    spec,
    JSON.stringify({
      random: { stream_id: "fixture", seed: 42, n_events: 3, width: 320, height: 320 },
    }),
  );
  run("plateflow", ["synth", spec, streamDir]);

  server = spawn(
    "plateflow",
    ["serve", "--port", String(PORT), "--data", join(workDir, "data")],
    { stdio: "ignore" },
  );
  api = new ReviewApi(`http://127.0.0.1:${PORT}`);
  await waitForServer(api.baseUrl);
}, 60000);

afterAll(() => {
  server?.kill();
});

describe("review flow against the live service", () => {
  it("runs the whole select/save/delete loop", async () => {
    const jobId = await api.submitJob(streamDir);
    const job = await pollJob(api, jobId, undefined, 200);
    expect(job.status).toBe("done");
    expect(job.progress.frames_processed).toBe(job.progress.frames_total);

    // the UI lists 3 cards
    const payload = await api.listInstances(jobId);
    let state = buildReviewState(payload, (inst, rank) => api.candidateUrl(jobId, inst, rank));
    expect(state.cards).toHaveLength(3);

    const first = state.cards[0]!;
    expect(first.candidates.length).toBeGreaterThanOrEqual(2);

    // thumbnails actually resolve to PNGs
    const png = await fetch(first.candidates[0]!.imageUrl);
    expect(png.status).toBe(200);
    expect(png.headers.get("content-type")).toContain("image/png");

    // select rank 2 then save -> stored record carries chosen_rank 2 + OCR text
    const selected = await api.select(jobId, first.instanceId, 2);
    state = applyAction(state, { kind: "select", instanceId: first.instanceId, rank: 2 });
    state = applyAction(state, {
      kind: "ocr-loaded",
      instanceId: first.instanceId,
      rank: 2,
      text: selected.ocr_text,
    });
    expect(state.cards[0]!.chosenRank).toBe(2);
    expect(selected.ocr_text.length).toBeGreaterThan(0);

    const record = await api.save(jobId, first.instanceId);
    state = applyAction(state, { kind: "save", instanceId: first.instanceId });
    expect(record.chosen_rank).toBe(2);
    expect(record.ocr_text).toBe(selected.ocr_text);
    expect(record.decision).toBe("saved");

    const stored = await api.results();
    expect(
      stored.some(
        (r) => r.instance_id === first.instanceId && r.chosen_rank === 2 && r.ocr_text === selected.ocr_text,
      ),
    ).toBe(true);

    // delete the second card -> gone from the list, save conflicts afterwards
    const second = state.cards[1]!;
    await api.deleteInstance(jobId, second.instanceId);
    state = applyAction(state, { kind: "delete", instanceId: second.instanceId });
    expect(state.cards.map((c) => c.instanceId)).not.toContain(second.instanceId);

    const refreshed = buildReviewState(await api.listInstances(jobId), (inst, rank) =>
      api.candidateUrl(jobId, inst, rank),
    );
    expect(refreshed.cards.map((c) => c.instanceId)).not.toContain(second.instanceId);

    let conflict: ApiError | null = null;
    try {
      await api.save(jobId, second.instanceId);
    } catch (e) {
      conflict = e as ApiError;
    }
    expect(conflict).toBeInstanceOf(ApiError);
    expect(conflict!.status).toBe(409);
  }, 120000);
});
