/** Typed client for the annotation-service HTTP API. */

import type { SettingName } from "./options.js";

export interface ImageBlock {
  image_id: string;
  url: string;
  width: number;
  height: number;
}

export interface BoxBlock {
  xmin: number;
  ymin: number;
  xmax: number;
  ymax: number;
}

export interface TaskPayload {
  task_id: string;
  vote_url: string;
  setting: string;
  required_votes: number;
  collected_votes: number;
  image_a: ImageBlock;
  image_b: ImageBlock;
  box_a: BoxBlock;
  box_b: BoxBlock;
}

export interface VoteBody {
  rater_id: string;
  depth: number;
  occlusion?: number;
}

export interface VoteReceipt {
  status: string;
  task_id: string;
  collected_votes: number;
  closed: boolean;
}

export interface Progress {
  open: number;
  closed: number;
  total_votes: number;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Server-side refusal (4xx/5xx) as opposed to a transport failure. */
export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
  }
}

async function errorDetail(res: Response): Promise<string> {
  try {
    const data: unknown = await res.json();
    const detail = (data as { detail?: unknown }).detail;
    if (typeof detail === "string") return detail;
  } catch {
    // fall through to the generic message
  }
  return `request failed with status ${res.status}`;
}

export class ApiClient {
  constructor(
    private readonly baseUrl = "",
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  resolve(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async nextTask(raterId: string, setting?: SettingName): Promise<TaskPayload | null> {
    const query = new URLSearchParams({ rater_id: raterId });
    if (setting !== undefined) query.set("setting", setting);
    const res = await this.fetchFn(this.resolve(`/api/tasks/next?${query}`));
    if (!res.ok) throw new ApiError(res.status, await errorDetail(res));
    return (await res.json()) as TaskPayload | null;
  }

  async submitVote(task: TaskPayload, body: VoteBody): Promise<VoteReceipt> {
    const res = await this.fetchFn(this.resolve(task.vote_url), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) throw new ApiError(res.status, await errorDetail(res));
    return (await res.json()) as VoteReceipt;
  }

  async progress(): Promise<Progress> {
    const res = await this.fetchFn(this.resolve("/api/progress"));
    if (!res.ok) throw new ApiError(res.status, await errorDetail(res));
    return (await res.json()) as Progress;
  }
}
