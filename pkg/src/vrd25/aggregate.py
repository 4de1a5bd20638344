"""Consensus aggregation of rater votes into labels and difficulty scales.

Evaluation pairs carry exactly five votes. A pair is infeasible when unsure
votes form a majority, otherwise the largest non-unsure camp decides: 5 agree
is easy, 4 moderate, 3 difficult, below that no majority exists and the pair
is ambiguous (no label). Occlusion needs a plurality of at least three.
"""

from __future__ import annotations

import dataclasses
import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .dataio import DatasetBundle
from .model import (
    Depth,
    Occlusion,
    PairLabel,
    Setting,
    Split,
    ValidationError,
    VoteRecord,
    validate_pair_predicates,
)


class Difficulty(enum.Enum):
    EASY = "easy"
    MODERATE = "moderate"
    DIFFICULT = "difficult"
    INFEASIBLE = "infeasible"
    AMBIGUOUS = "ambiguous"


DIFFICULTY_ORDER = [
    Difficulty.EASY,
    Difficulty.MODERATE,
    Difficulty.DIFFICULT,
    Difficulty.INFEASIBLE,
    Difficulty.AMBIGUOUS,
]

EVAL_VOTES = 5


class AggregationError(ValueError):
    """A vote set that the consensus rules are not defined for."""


@dataclass(frozen=True)
class DepthConsensus:
    label: Optional[Depth]  # None only for AMBIGUOUS
    difficulty: Difficulty


def aggregate_depth_votes(votes: Sequence[Depth]) -> DepthConsensus:
    """Consensus of exactly five depth votes."""
    if len(votes) != EVAL_VOTES:
        raise AggregationError(f"need exactly {EVAL_VOTES} depth votes, got {len(votes)}")
    counts = Counter(votes)
    if counts[Depth.UNSURE] >= 3:
        return DepthConsensus(Depth.UNSURE, Difficulty.INFEASIBLE)
    candidates = [d for d in (Depth.A_CLOSER, Depth.B_CLOSER, Depth.SAME_DEPTH)]
    best = max(candidates, key=lambda d: counts[d])
    m = counts[best]
    if m == 5:
        return DepthConsensus(best, Difficulty.EASY)
    if m == 4:
        return DepthConsensus(best, Difficulty.MODERATE)
    if m == 3:
        return DepthConsensus(best, Difficulty.DIFFICULT)
    return DepthConsensus(None, Difficulty.AMBIGUOUS)


def aggregate_occlusion_votes(votes: Sequence[Occlusion]) -> Optional[Occlusion]:
    """Plurality winner when backed by at least three votes, else no label."""
    if len(votes) != EVAL_VOTES:
        raise AggregationError(f"need exactly {EVAL_VOTES} occlusion votes, got {len(votes)}")
    counts = Counter(votes)
    best, m = counts.most_common(1)[0]
    return best if m >= 3 else None


@dataclass
class AggregationResult:
    pairs: list[PairLabel]
    difficulties: dict[str, Difficulty]  # eval pairs only
    issues: list[tuple[str, str]] = field(default_factory=list)  # (pair_id, reason)

    def apply(self, bundle: DatasetBundle) -> DatasetBundle:
        """Bundle with aggregated labels in place of the raw relations.

        Votes of pairs dropped as issues are dropped with them so the result
        still satisfies the bundle integrity contract.
        """
        kept = {p.pair_id for p in self.pairs}
        return DatasetBundle(
            images=bundle.images,
            objects=bundle.objects,
            pairs=self.pairs,
            votes=[v for v in bundle.votes if v.pair_id in kept],
            provenance=bundle.provenance,
            difficulties={k: v.value for k, v in self.difficulties.items()},
        )


def _validate_votes(pair: PairLabel, votes: Sequence[VoteRecord]) -> Optional[str]:
    raters = [v.rater_id for v in votes]
    if len(set(raters)) != len(raters):
        return "duplicate rater"
    for v in votes:
        try:
            validate_pair_predicates(pair.setting, v.depth_vote, v.occlusion_vote)
        except ValidationError as exc:
            return f"invalid vote from {v.rater_id!r}: {exc}"
    return None


def aggregate_bundle(bundle: DatasetBundle, required_eval_votes: int = EVAL_VOTES) -> AggregationResult:
    """Aggregate per pair: single-vote pass-through on the training split,
    five-vote consensus elsewhere. Pairs with the wrong vote count or invalid
    votes are dropped and reported as issues, never guessed."""
    if required_eval_votes != EVAL_VOTES:
        raise AggregationError(
            f"consensus rules are defined for {EVAL_VOTES} votes, got {required_eval_votes}"
        )
    split_of = {im.image_id: im.split for im in bundle.images}
    votes_by_pair: dict[str, list[VoteRecord]] = {}
    for v in bundle.votes:
        votes_by_pair.setdefault(v.pair_id, []).append(v)

    result = AggregationResult(pairs=[], difficulties={})
    for pair in bundle.pairs:
        votes = votes_by_pair.get(pair.pair_id, [])
        reason = _validate_votes(pair, votes)
        if reason is not None:
            result.issues.append((pair.pair_id, reason))
            continue
        if split_of[pair.image_id_a] == Split.TRAIN:
            if len(votes) != 1:
                result.issues.append(
                    (pair.pair_id, f"training pair needs 1 vote, got {len(votes)}")
                )
                continue
            vote = votes[0]
            result.pairs.append(dataclasses.replace(
                pair, depth=vote.depth_vote, occlusion=vote.occlusion_vote,
            ))
            continue

        if len(votes) != required_eval_votes:
            result.issues.append(
                (pair.pair_id, f"evaluation pair needs {required_eval_votes} votes, got {len(votes)}")
            )
            continue
        consensus = aggregate_depth_votes([v.depth_vote for v in votes])
        occlusion = None
        if pair.setting is Setting.WITHIN:
            occlusion = aggregate_occlusion_votes([v.occlusion_vote for v in votes])
        result.pairs.append(dataclasses.replace(
            pair, depth=consensus.label, occlusion=occlusion,
        ))
        result.difficulties[pair.pair_id] = consensus.difficulty
    return result


def difficulty_report_rows(
    result: AggregationResult, bundle: DatasetBundle
) -> list[list[object]]:
    """Rows of the difficulty distribution report (setting,scale,count,fraction)."""
    setting_of = {p.pair_id: p.setting for p in bundle.pairs}
    counts: dict[Setting, Counter] = {s: Counter() for s in Setting}
    for pair_id, difficulty in result.difficulties.items():
        counts[setting_of[pair_id]][difficulty] += 1
    rows: list[list[object]] = []
    for setting in (Setting.WITHIN, Setting.ACROSS):
        total = sum(counts[setting].values())
        for difficulty in DIFFICULTY_ORDER:
            c = counts[setting][difficulty]
            fraction = c / total if total else 0.0
            rows.append([setting.value, difficulty.value, c, repr(fraction)])
    return rows


DIFFICULTY_REPORT_HEADER = ["setting", "scale", "count", "fraction"]
