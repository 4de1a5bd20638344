/** DOM drivers for scripted sessions. */

import { ApiClient } from "../src/api.js";
import type { FetchLike } from "../src/api.js";
import { App } from "../src/app.js";
import type { AppOptions } from "../src/app.js";

export const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

export async function until<T>(
  probe: () => T | null | undefined | false,
  what: string,
  timeoutMs = 15_000,
): Promise<T> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    const value = probe();
    if (value) return value;
    if (Date.now() > deadline) throw new Error(`timed out waiting for ${what}`);
    await sleep(10);
  }
}

export interface Harness {
  root: HTMLElement;
  app: App;
  dispose(): void;
}

export function mountApp(options: AppOptions): Harness {
  const root = document.createElement("div");
  document.body.append(root);
  const app = new App(root, options);
  return {
    root,
    app,
    dispose() {
      app.destroy();
      root.remove();
    },
  };
}

export function pressKey(key: string): void {
  document.dispatchEvent(new KeyboardEvent("keydown", { key, bubbles: true }));
}

export function taskNode(root: HTMLElement): HTMLElement | null {
  return root.querySelector<HTMLElement>("[data-task-id]");
}

/** Waits until a task other than `notId` is on screen. */
export function waitForTask(root: HTMLElement, notId?: string): Promise<HTMLElement> {
  return until(
    () => {
      const node = taskNode(root);
      return node && node.dataset.taskId !== notId ? node : null;
    },
    notId === undefined ? "a task" : `a task after ${notId}`,
  );
}

export function waitForDone(root: HTMLElement): Promise<HTMLElement> {
  return until(() => root.querySelector<HTMLElement>("#done-screen"), "the done screen");
}

export function clickChoice(root: HTMLElement, group: "depth" | "occlusion", code: number): void {
  const button = root.querySelector<HTMLButtonElement>(
    `[data-option-group="${group}"] button[data-code="${code}"]`,
  );
  if (!button) throw new Error(`no ${group} option with code ${code}`);
  button.click();
}

export function clickSubmit(root: HTMLElement): void {
  const button = root.querySelector<HTMLButtonElement>("#submit");
  if (!button) throw new Error("no submit button");
  button.click();
}

export function sessionCount(root: HTMLElement): number {
  const node = root.querySelector<HTMLElement>("#session-count");
  if (!node) throw new Error("no session counter");
  return Number(node.dataset.count);
}

export interface RecordedRequest {
  url: string;
  method: string;
  body: Record<string, unknown> | null;
}

/** Pass-through fetch that records every request for later assertions. */
export function recordingFetch(log: RecordedRequest[]): FetchLike {
  return (url, init) => {
    log.push({
      url,
      method: init?.method ?? "GET",
      body: init?.body === undefined ? null : (JSON.parse(String(init.body)) as Record<string, unknown>),
    });
    return fetch(url, init);
  };
}

/** Fails the next `remaining` POSTs with a transport error, then passes
 * through. */
export function flakyFetch(failures: { remaining: number }): FetchLike {
  return (url, init) => {
    if ((init?.method ?? "GET") === "POST" && failures.remaining > 0) {
      failures.remaining -= 1;
      return Promise.reject(new TypeError("socket hiccup"));
    }
    return fetch(url, init);
  };
}

export function client(baseUrl: string, fetchFn?: FetchLike): ApiClient {
  return new ApiClient(baseUrl, fetchFn);
}
