/** Single-task annotation flow: fetch a task, collect the answers the
 * setting requires, post the vote, advance. */

import { ApiClient, ApiError } from "./api.js";
import type { TaskPayload, VoteBody } from "./api.js";
import { depthOptions, isSettingName, occlusionRequired, OCCLUSION_WITHIN } from "./options.js";
import type { AnswerOption, SettingName } from "./options.js";
import { BOX_COLOR_A, BOX_COLOR_B, drawOverlay } from "./overlay.js";
import type { OverlayEntry } from "./overlay.js";

export interface AppOptions {
  api: ApiClient;
  raterId?: string;
  /** Restrict the queue to one setting; omit to take any task. */
  setting?: SettingName;
}

type GroupName = "depth" | "occlusion";

interface FrameRef {
  image: HTMLImageElement;
  canvas: HTMLCanvasElement;
  entries: readonly OverlayEntry[];
}

/** Reject payloads the renderer cannot represent faithfully. */
export function validateTask(task: TaskPayload): string | null {
  if (!task.task_id || !task.vote_url) return "task payload is missing identifiers";
  if (!isSettingName(task.setting)) return `unknown setting ${JSON.stringify(task.setting)}`;
  for (const box of [task.box_a, task.box_b]) {
    const ordered = box.xmin < box.xmax && box.ymin < box.ymax;
    const inUnit = box.xmin >= 0 && box.ymin >= 0 && box.xmax <= 1 && box.ymax <= 1;
    if (!ordered || !inUnit) return "task payload has a malformed box";
  }
  const sameImage = task.image_a.image_id === task.image_b.image_id;
  if (task.setting === "within" && !sameImage) return "within-image task names two images";
  if (task.setting === "across" && sameImage) return "across-image task names one image";
  return null;
}

export class App {
  private readonly api: ApiClient;
  private readonly settingFilter?: SettingName;
  private raterId: string | null;

  private task: TaskPayload | null = null;
  private depthChoice: number | null = null;
  private occlusionChoice: number | null = null;
  private activeGroup: GroupName = "depth";
  private sessionVotes = 0;
  private pendingVote: VoteBody | null = null;
  private busy = false;
  private noticeText: string | null = null;
  private frames: FrameRef[] = [];

  private readonly keyHandler = (event: KeyboardEvent) => this.onKey(event);
  private readonly resizeHandler = () => this.redrawOverlays();

  constructor(private readonly root: HTMLElement, options: AppOptions) {
    this.api = options.api;
    this.raterId = options.raterId ?? null;
    this.settingFilter = options.setting;
    document.addEventListener("keydown", this.keyHandler);
    window.addEventListener("resize", this.resizeHandler);
  }

  destroy(): void {
    document.removeEventListener("keydown", this.keyHandler);
    window.removeEventListener("resize", this.resizeHandler);
    this.root.replaceChildren();
  }

  async start(): Promise<void> {
    if (this.raterId !== null) {
      await this.fetchNext();
      return;
    }
    this.renderStart();
  }

  // -- screens --------------------------------------------------------------

  private renderStart(): void {
    const screen = el("div", { class: "screen", id: "start-screen" });
    screen.append(el("h1", {}, "Pair annotation"));
    const form = el("form", { id: "rater-form" });
    const input = el("input", {
      id: "rater-input",
      type: "text",
      placeholder: "rater id",
      autocomplete: "off",
    }) as HTMLInputElement;
    const button = el("button", { id: "rater-start", type: "submit" }, "Start");
    form.append(el("label", { for: "rater-input" }, "Who is annotating?"), input, button);
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      const value = input.value.trim();
      if (!value) return;
      this.raterId = value;
      void this.fetchNext();
    });
    screen.append(form);
    this.root.replaceChildren(screen);
    input.focus();
  }

  private renderLoading(): void {
    this.task = null;
    this.frames = [];
    this.root.replaceChildren(el("div", { class: "screen", id: "loading-screen" }, "Loading…"));
  }

  private renderDone(): void {
    this.task = null;
    this.frames = [];
    const screen = el("div", {
      class: "screen",
      id: "done-screen",
      "data-session-total": String(this.sessionVotes),
    });
    screen.append(
      el("h1", {}, "All done"),
      el("p", {}, `No tasks are waiting for you. You cast ${this.sessionVotes} vote(s) this session.`),
    );
    this.root.replaceChildren(screen);
  }

  private renderError(reason: string): void {
    this.task = null;
    this.frames = [];
    const screen = el("div", { class: "screen", id: "error-screen" });
    screen.append(
      el("h1", {}, "Cannot display this task"),
      el("p", { id: "error-reason" }, reason),
    );
    this.root.replaceChildren(screen);
  }

  private renderFetchFailure(): void {
    this.task = null;
    this.frames = [];
    const screen = el("div", { class: "screen", id: "fetch-failed-screen" });
    const retry = el("button", { id: "retry-fetch" }, "Retry");
    retry.addEventListener("click", () => void this.fetchNext());
    screen.append(el("p", {}, "Could not reach the annotation service."), retry);
    this.root.replaceChildren(screen);
  }

  private renderTask(task: TaskPayload): void {
    this.task = task;
    this.depthChoice = null;
    this.occlusionChoice = null;
    this.activeGroup = "depth";
    this.pendingVote = null;
    this.frames = [];
    const setting = task.setting as SettingName;

    const screen = el("main", {
      class: "screen task",
      "data-task-id": task.task_id,
      "data-setting": setting,
    });
    screen.append(this.buildHeader(task));
    screen.append(this.buildFigures(task, setting));

    const legend = el("div", { class: "legend" });
    legend.append(
      el("span", { class: "swatch swatch-a" }),
      el("span", {}, "object A"),
      el("span", { class: "swatch swatch-b" }),
      el("span", {}, "object B"),
    );
    screen.append(legend);

    screen.append(this.buildGroup("depth", "Which object is closer to the camera?", depthOptions(setting)));
    if (occlusionRequired(setting)) {
      screen.append(
        this.buildGroup("occlusion", "Does one object block the view of the other?", OCCLUSION_WITHIN),
      );
    }

    const notice = el("div", { id: "notice", role: "status", hidden: "" });
    screen.append(notice);

    const banner = el("div", { id: "retry-banner", hidden: "" });
    const retry = el("button", { id: "retry-submit" }, "Retry");
    retry.addEventListener("click", () => {
      if (this.pendingVote) void this.send(this.pendingVote);
    });
    banner.append(el("span", {}, "Could not reach the annotation service. Your answers are kept."), retry);
    screen.append(banner);

    const submit = el("button", { id: "submit", disabled: "" }, "Submit (Enter)");
    submit.addEventListener("click", () => void this.submit());
    screen.append(submit);

    this.root.replaceChildren(screen);
    if (this.noticeText !== null) {
      this.showNotice(this.noticeText, "rejected");
      this.noticeText = null;
    }
    this.refreshSelection();
    this.redrawOverlays();
    void this.refreshProgress();
  }

  private buildHeader(task: TaskPayload): HTMLElement {
    const header = el("header", { class: "topbar" });
    header.append(
      el("span", { id: "rater-label" }, `rater ${this.raterId ?? ""}`),
      el(
        "span",
        { id: "session-count", "data-count": String(this.sessionVotes) },
        `${this.sessionVotes} vote(s) this session`,
      ),
      el(
        "span",
        { id: "task-votes" },
        `task has ${task.collected_votes} of ${task.required_votes} vote(s)`,
      ),
      el("span", { id: "progress" }, ""),
    );
    return header;
  }

  private buildFigures(task: TaskPayload, setting: SettingName): HTMLElement {
    const figures = el("div", { class: `figures ${setting}` });
    const boxA: OverlayEntry = { box: task.box_a, color: BOX_COLOR_A, label: "A" };
    const boxB: OverlayEntry = { box: task.box_b, color: BOX_COLOR_B, label: "B" };
    if (setting === "within") {
      figures.append(this.buildFrame(task.image_a.url, "", [boxA, boxB]));
    } else {
      figures.append(
        this.buildFrame(task.image_a.url, "Image A", [boxA]),
        this.buildFrame(task.image_b.url, "Image B", [boxB]),
      );
    }
    return figures;
  }

  private buildFrame(url: string, caption: string, entries: readonly OverlayEntry[]): HTMLElement {
    const figure = el("figure", { class: "figure" });
    const frame = el("div", { class: "frame" });
    const image = el("img", { src: this.api.resolve(url), alt: "scene" }) as HTMLImageElement;
    const canvas = el("canvas", { class: "overlay" }) as HTMLCanvasElement;
    image.addEventListener("load", () => this.redrawOverlays());
    frame.append(image, canvas);
    figure.append(frame);
    if (caption) figure.append(el("figcaption", {}, caption));
    this.frames.push({ image, canvas, entries });
    return figure;
  }

  private buildGroup(name: GroupName, question: string, options: readonly AnswerOption[]): HTMLElement {
    const section = el("section", {
      class: "group",
      role: "group",
      "data-option-group": name,
    });
    section.append(el("h2", {}, question));
    const list = el("div", { class: "choices" });
    for (const option of options) {
      const button = el(
        "button",
        {
          type: "button",
          class: "choice",
          "data-code": String(option.code),
          "data-key": option.key,
          "aria-pressed": "false",
        },
      );
      button.append(el("kbd", {}, option.key), el("span", {}, option.label));
      button.addEventListener("click", () => this.select(name, option.code));
      list.append(button);
    }
    section.append(list);
    return section;
  }

  // -- interaction ----------------------------------------------------------

  private onKey(event: KeyboardEvent): void {
    if (!this.task) return;
    if (event.key === "Enter") {
      event.preventDefault();
      void this.submit();
      return;
    }
    const options = this.groupAnswers(this.activeGroup);
    const hit = options.find((option) => option.key === event.key);
    if (hit) this.select(this.activeGroup, hit.code);
  }

  private groupAnswers(group: GroupName): readonly AnswerOption[] {
    const setting = this.task!.setting as SettingName;
    return group === "depth" ? depthOptions(setting) : OCCLUSION_WITHIN;
  }

  private select(group: GroupName, code: number): void {
    if (!this.task || this.busy) return;
    if (group === "depth") this.depthChoice = code;
    else this.occlusionChoice = code;
    // Digits target the first unanswered group; once all are answered they
    // keep revising the group touched last.
    const setting = this.task.setting as SettingName;
    if (this.depthChoice === null) this.activeGroup = "depth";
    else if (occlusionRequired(setting) && this.occlusionChoice === null) this.activeGroup = "occlusion";
    else this.activeGroup = group;
    this.hideNotice();
    this.refreshSelection();
  }

  private refreshSelection(): void {
    for (const section of this.root.querySelectorAll<HTMLElement>("[data-option-group]")) {
      const group = section.dataset.optionGroup as GroupName;
      const chosen = group === "depth" ? this.depthChoice : this.occlusionChoice;
      section.classList.toggle("active", group === this.activeGroup);
      for (const button of section.querySelectorAll<HTMLButtonElement>("button.choice")) {
        button.setAttribute("aria-pressed", String(Number(button.dataset.code) === chosen));
      }
    }
    const submit = this.root.querySelector<HTMLButtonElement>("#submit");
    if (submit) submit.disabled = !this.canSubmit();
  }

  private canSubmit(): boolean {
    if (!this.task) return false;
    if (this.depthChoice === null) return false;
    const setting = this.task.setting as SettingName;
    return !occlusionRequired(setting) || this.occlusionChoice !== null;
  }

  private showNotice(text: string, kind: "incomplete" | "rejected"): void {
    const notice = this.root.querySelector<HTMLElement>("#notice");
    if (!notice) return;
    notice.textContent = text;
    notice.dataset.kind = kind;
    notice.hidden = false;
  }

  private hideNotice(): void {
    const notice = this.root.querySelector<HTMLElement>("#notice");
    if (notice) notice.hidden = true;
  }

  // -- network --------------------------------------------------------------

  private async submit(): Promise<void> {
    if (!this.task || this.busy) return;
    if (!this.canSubmit()) {
      this.showNotice("Answer every question before submitting.", "incomplete");
      return;
    }
    const body: VoteBody = { rater_id: this.raterId!, depth: this.depthChoice! };
    if (occlusionRequired(this.task.setting as SettingName)) {
      body.occlusion = this.occlusionChoice!;
    }
    await this.send(body);
  }

  private async send(body: VoteBody): Promise<void> {
    if (!this.task || this.busy) return;
    this.busy = true;
    const banner = this.root.querySelector<HTMLElement>("#retry-banner");
    if (banner) banner.hidden = true;
    try {
      await this.api.submitVote(this.task, body);
      this.busy = false;
      this.sessionVotes += 1;
      this.pendingVote = null;
      await this.fetchNext();
    } catch (error) {
      this.busy = false;
      if (error instanceof ApiError) {
        // The server refused the vote; say why and move on without counting.
        this.pendingVote = null;
        this.noticeText = `Vote rejected: ${error.message}`;
        await this.fetchNext();
      } else {
        this.pendingVote = body;
        if (banner) banner.hidden = false;
      }
    }
  }

  private async fetchNext(): Promise<void> {
    this.renderLoading();
    let task: TaskPayload | null;
    try {
      task = await this.api.nextTask(this.raterId!, this.settingFilter);
    } catch (error) {
      if (error instanceof ApiError) this.renderError(error.message);
      else this.renderFetchFailure();
      return;
    }
    if (task === null) {
      this.renderDone();
      return;
    }
    const problem = validateTask(task);
    if (problem !== null) {
      this.renderError(problem);
      return;
    }
    this.renderTask(task);
  }

  private async refreshProgress(): Promise<void> {
    const slot = this.root.querySelector<HTMLElement>("#progress");
    if (!slot) return;
    try {
      const progress = await this.api.progress();
      if (slot.isConnected) {
        slot.textContent = `${progress.open} open / ${progress.closed} closed`;
      }
    } catch {
      // The header counter is cosmetic; leave it empty on failure.
    }
  }

  private redrawOverlays(): void {
    for (const frame of this.frames) {
      drawOverlay(frame.canvas, frame.image, frame.entries);
    }
  }
}

function el(tag: string, attrs: Record<string, string> = {}, text?: string): HTMLElement {
  const node = document.createElement(tag);
  for (const [name, value] of Object.entries(attrs)) {
    if (name === "hidden") node.hidden = true;
    else if (name === "disabled") (node as HTMLButtonElement).disabled = true;
    else node.setAttribute(name, value);
  }
  if (text !== undefined) node.textContent = text;
  return node;
}
