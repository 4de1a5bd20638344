import { describe, expect, it } from "vitest";

import { VOTES_HEADER, aggregateLabels, parseVotesCsv } from "./aggregate.js";
import type { VoteRow } from "./aggregate.js";

function ballots(pairId: string, depths: number[], occlusions?: (number | null)[]): VoteRow[] {
  return depths.map((depth, i) => ({
    pairId,
    raterId: `r${i + 1}`,
    depth,
    occlusion: occlusions ? occlusions[i] : null,
  }));
}

describe("reference aggregation", () => {
  it("maps camp sizes five, four and three to easy, moderate and difficult", () => {
    expect(aggregateLabels(ballots("p", [0, 0, 0, 0, 0])).get("p")).toMatchObject({
      depth: 0,
      difficulty: "easy",
    });
    expect(aggregateLabels(ballots("p", [1, 1, 1, 1, 0])).get("p")).toMatchObject({
      depth: 1,
      difficulty: "moderate",
    });
    expect(aggregateLabels(ballots("p", [2, 2, 2, 0, 1])).get("p")).toMatchObject({
      depth: 2,
      difficulty: "difficult",
    });
  });

  it("treats three or more unsure ballots as infeasible", () => {
    expect(aggregateLabels(ballots("p", [3, 3, 3, 0, 0])).get("p")).toMatchObject({
      depth: 3,
      difficulty: "infeasible",
    });
  });

  it("leaves split ballots ambiguous and unlabeled", () => {
    expect(aggregateLabels(ballots("p", [0, 0, 1, 1, 2])).get("p")).toMatchObject({
      depth: null,
      difficulty: "ambiguous",
    });
  });

  it("occlusion needs a plurality of three", () => {
    expect(
      aggregateLabels(ballots("p", [0, 0, 0, 0, 0], [1, 1, 1, 2, 3])).get("p")!.occlusion,
    ).toBe(1);
    expect(
      aggregateLabels(ballots("p", [0, 0, 0, 0, 0], [1, 1, 2, 2, 3])).get("p")!.occlusion,
    ).toBeNull();
    expect(
      aggregateLabels(ballots("p", [0, 0, 0, 0, 0], [null, null, null, null, null])).get("p")!
        .occlusion,
    ).toBeNull();
  });

  it("rejects ballot counts other than five and duplicate raters", () => {
    expect(() => aggregateLabels(ballots("p", [0, 0, 0]))).toThrow(/five ballots/);
    const rows = ballots("p", [0, 0, 0, 0, 0]);
    rows[1] = { ...rows[1], raterId: "r1" };
    expect(() => aggregateLabels(rows)).toThrow(/duplicate rater/);
  });
});

describe("parseVotesCsv", () => {
  it("parses rows and reads empty occlusion as null", () => {
    const text = `${VOTES_HEADER}\nw#im/a#im/b,r1,2,0,1500\nx#im/a#other/b,r2,3,,1501\n`;
    const rows = parseVotesCsv(text);
    expect(rows).toEqual([
      { pairId: "w#im/a#im/b", raterId: "r1", depth: 2, occlusion: 0 },
      { pairId: "x#im/a#other/b", raterId: "r2", depth: 3, occlusion: null },
    ]);
  });

  it("rejects foreign headers", () => {
    expect(() => parseVotesCsv("a,b,c\n1,2,3\n")).toThrow(/unexpected votes header/);
  });
});
