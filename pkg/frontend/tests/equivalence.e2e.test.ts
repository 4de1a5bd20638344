/** A scripted browser session and a direct API session submit the same 25
 * votes to twin services; the exports must aggregate to identical labels. */

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import type { VoteBody } from "../src/api.js";
import { OCCLUSION_WITHIN, depthOptions, occlusionRequired } from "../src/options.js";
import type { AnswerOption, SettingName } from "../src/options.js";
import { aggregateLabels, parseVotesCsv } from "./aggregate.js";
import type { AggregatedLabel } from "./aggregate.js";
import { mountApp, pressKey, sessionCount, waitForTask } from "./dom.js";
import { generateBundle, makeWorkdir, startService } from "./server.js";
import type { ServiceHandle } from "./server.js";

interface VoteChoice {
  depthKey: string;
  occlusionKey: string;
}

interface SessionLeg {
  setting: SettingName;
  votes: VoteChoice[];
}

// Rows are raters, columns are the tasks in queue order. The stacking queue
// hands every rater the same tasks in the same order, so the two sessions
// cast ballot-for-ballot identical votes.
const WITHIN_DEPTH_KEYS = ["113", "113", "123", "121", "132"].map((s) => s.split(""));
const WITHIN_OCCL_KEYS = ["141", "142", "143", "241", "342"].map((s) => s.split(""));
const ACROSS_DEPTH_KEYS = ["23", "23", "23", "22", "11"].map((s) => s.split(""));

function scriptFor(rater: number): SessionLeg[] {
  return [
    {
      setting: "within",
      votes: WITHIN_DEPTH_KEYS[rater].map((depthKey, t) => ({
        depthKey,
        occlusionKey: WITHIN_OCCL_KEYS[rater][t],
      })),
    },
    {
      setting: "across",
      votes: ACROSS_DEPTH_KEYS[rater].map((depthKey) => ({ depthKey, occlusionKey: "" })),
    },
  ];
}

const RATERS = ["r1", "r2", "r3", "r4", "r5"];

// Consensus each task column above should reach, in encounter order.
const EXPECTED_WITHIN: AggregatedLabel[] = [
  { depth: 0, difficulty: "easy", occlusion: 1 },
  { depth: null, difficulty: "ambiguous", occlusion: 0 },
  { depth: 2, difficulty: "difficult", occlusion: null },
];
const EXPECTED_ACROSS: AggregatedLabel[] = [
  { depth: 1, difficulty: "moderate", occlusion: null },
  { depth: 3, difficulty: "infeasible", occlusion: null },
];

function keyToCode(options: readonly AnswerOption[], key: string): number {
  const hit = options.find((o) => o.key === key);
  if (!hit) throw new Error(`no option for key ${key}`);
  return hit.code;
}

/** Drives the rendered app with keyboard shortcuts only. */
async function uiSession(baseUrl: string, rater: string, legs: SessionLeg[]): Promise<string[]> {
  const seen: string[] = [];
  for (const leg of legs) {
    const harness = mountApp({
      api: new ApiClient(baseUrl),
      raterId: rater,
      setting: leg.setting,
    });
    try {
      await harness.app.start();
      let node = await waitForTask(harness.root);
      for (const vote of leg.votes) {
        expect(node.dataset.setting).toBe(leg.setting);
        const before = sessionCount(harness.root);
        seen.push(node.dataset.taskId!);
        pressKey(vote.depthKey);
        if (occlusionRequired(leg.setting)) pressKey(vote.occlusionKey);
        pressKey("Enter");
        node = await waitForTask(harness.root, node.dataset.taskId);
        expect(sessionCount(harness.root)).toBe(before + 1);
      }
    } finally {
      harness.dispose();
    }
  }
  return seen;
}

/** Submits the same choices straight to the API. */
async function apiSession(baseUrl: string, rater: string, legs: SessionLeg[]): Promise<string[]> {
  const api = new ApiClient(baseUrl);
  const seen: string[] = [];
  for (const leg of legs) {
    for (const vote of leg.votes) {
      const task = await api.nextTask(rater, leg.setting);
      if (task === null) throw new Error("task queue ran dry during the replay");
      expect(task.setting).toBe(leg.setting);
      seen.push(task.task_id);
      const body: VoteBody = {
        rater_id: rater,
        depth: keyToCode(depthOptions(leg.setting), vote.depthKey),
      };
      if (occlusionRequired(leg.setting)) {
        body.occlusion = keyToCode(OCCLUSION_WITHIN, vote.occlusionKey);
      }
      await api.submitVote(task, body);
    }
  }
  return seen;
}

async function exportVotes(baseUrl: string): Promise<string> {
  const res = await fetch(`${baseUrl}/api/export/votes`);
  expect(res.ok).toBe(true);
  return res.text();
}

describe("UI and API sessions are equivalent", () => {
  let serverUi: ServiceHandle;
  let serverApi: ServiceHandle;

  beforeAll(async () => {
    const workdir = makeWorkdir("vrd25-equivalence-");
    serverUi = await startService(generateBundle(workdir, "ui"));
    serverApi = await startService(generateBundle(workdir, "api"));
  });

  afterAll(async () => {
    await serverUi?.stop();
    await serverApi?.stop();
  });

  it("twenty-five browser votes aggregate identically to direct posts", async () => {
    const uiSeen: string[] = [];
    const apiSeen: string[] = [];
    for (let r = 0; r < RATERS.length; r++) {
      uiSeen.push(...(await uiSession(serverUi.baseUrl, RATERS[r], scriptFor(r))));
      apiSeen.push(...(await apiSession(serverApi.baseUrl, RATERS[r], scriptFor(r))));
    }
    expect(uiSeen.length).toBe(25);
    // Twin bundles and a deterministic queue: both sessions met the same
    // tasks in the same order, and the stacking queue gave every rater the
    // same five tasks.
    expect(apiSeen).toEqual(uiSeen);
    for (let r = 1; r < RATERS.length; r++) {
      expect(uiSeen.slice(5 * r, 5 * r + 5)).toEqual(uiSeen.slice(0, 5));
    }

    const uiRows = parseVotesCsv(await exportVotes(serverUi.baseUrl));
    const apiRows = parseVotesCsv(await exportVotes(serverApi.baseUrl));
    const key = (r: { pairId: string; raterId: string; depth: number; occlusion: number | null }) =>
      `${r.pairId}|${r.raterId}|${r.depth}|${r.occlusion}`;
    expect(uiRows.map(key).sort()).toEqual(apiRows.map(key).sort());

    const uiLabels = aggregateLabels(uiRows);
    const apiLabels = aggregateLabels(apiRows);
    expect(Object.fromEntries(uiLabels)).toEqual(Object.fromEntries(apiLabels));

    // The script was built to span every difficulty scale.
    const tasks = [...uiSeen.slice(0, 3), ...uiSeen.slice(3, 5)];
    const expected = [...EXPECTED_WITHIN, ...EXPECTED_ACROSS];
    expect(uiLabels.size).toBe(5);
    tasks.forEach((taskId, i) => expect(uiLabels.get(taskId)).toEqual(expected[i]));

    for (const server of [serverUi, serverApi]) {
      const progress = await (await fetch(`${server.baseUrl}/api/progress`)).json();
      expect(progress).toMatchObject({ closed: 5, total_votes: 25 });
    }
  });
});
