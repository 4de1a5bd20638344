/** Answer option sets, derived from the task's setting so invalid votes
 * cannot be expressed. */

export type SettingName = "within" | "across";

export interface AnswerOption {
  /** Wire code posted to the vote endpoint. */
  code: number;
  /** Keyboard shortcut, a single digit. */
  key: string;
  label: string;
}

export const DEPTH_WITHIN: readonly AnswerOption[] = [
  { code: 0, key: "1", label: "A is closer" },
  { code: 1, key: "2", label: "B is closer" },
  { code: 2, key: "3", label: "Same depth" },
  { code: 3, key: "4", label: "Unsure" },
];

// Same depth is not offered across images.
export const DEPTH_ACROSS: readonly AnswerOption[] = [
  { code: 0, key: "1", label: "A is closer" },
  { code: 1, key: "2", label: "B is closer" },
  { code: 3, key: "3", label: "Unsure" },
];

export const OCCLUSION_WITHIN: readonly AnswerOption[] = [
  { code: 1, key: "1", label: "A occludes B" },
  { code: 2, key: "2", label: "B occludes A" },
  { code: 3, key: "3", label: "Mutual occlusion" },
  { code: 0, key: "4", label: "No occlusion" },
];

export function isSettingName(value: string): value is SettingName {
  return value === "within" || value === "across";
}

export function depthOptions(setting: SettingName): readonly AnswerOption[] {
  return setting === "within" ? DEPTH_WITHIN : DEPTH_ACROSS;
}

/** Occlusion is asked for within-image pairs only. */
export function occlusionRequired(setting: SettingName): boolean {
  return setting === "within";
}
