"""Two-stage Rat Grimace Scale consensus: component votes -> image-level pain labels.

Stage 1: five annotators score each of the four facial components. A score
with at least four votes is accepted; otherwise the component is low
confidence and three more annotators vote. Stage 2 accepts a score with at
least five of the eight votes. An image is labeled with the half-up rounded
mean of its accepted component scores when at least three components were
accepted. ``uncertain`` votes never count toward any score.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import AnnotationError, MalformedRow, MissingFile, WrongComponentCount, WrongVoteCount

ANNOTATION_HEADER = ("image_id", "component", "annotator_id", "stage", "score")
UNCERTAIN = "uncertain"
STAGE1_VOTES, STAGE1_THRESHOLD = 5, 4
STAGE2_VOTES, STAGE2_THRESHOLD = 8, 5
MIN_ACCEPTED_COMPONENTS = 3


class Component(enum.Enum):
    EYE = "eye"
    EAR = "ear"
    WHISKER = "whisker"
    NOSE = "nose"


class Status(enum.Enum):
    ACCEPTED = "accepted"
    LOW_CONFIDENCE = "low_confidence"
    REJECTED = "rejected"


@dataclass(frozen=True)
class AnnotationRecord:
    image_id: str
    component: Component
    annotator_id: str
    stage: int  # 1 or 2
    score: object  # 0, 1, 2 or UNCERTAIN


@dataclass(frozen=True)
class Consensus:
    status: Status
    score: Optional[int] = None

    @property
    def accepted(self) -> bool:
        return self.status is Status.ACCEPTED


@dataclass(frozen=True)
class ComponentConsensus:
    image_id: str
    component: Component
    outcome: Consensus


@dataclass(frozen=True)
class ImageLabelResult:
    image_id: str
    accepted_components: int
    raw_score: Optional[int]

    @property
    def labeled(self) -> bool:
        return self.raw_score is not None


def parse_score(text) -> object:
    if isinstance(text, int) and text in (0, 1, 2):
        return text
    t = str(text).strip().lower()
    if t == UNCERTAIN:
        return UNCERTAIN
    if t in ("0", "1", "2"):
        return int(t)
    raise ValueError(f"score must be 0, 1, 2 or uncertain, got {text!r}")


def _majority(votes: Sequence, threshold: int) -> Optional[int]:
    counts = Counter(v for v in votes if v != UNCERTAIN)
    winners = [s for s, c in counts.items() if c >= threshold]
    if len(winners) > 1:
        # impossible for the fixed vote counts; guards malformed callers
        raise WrongVoteCount(f"more than one score reached {threshold} votes: {sorted(winners)}")
    return winners[0] if winners else None


def _check_votes(votes: Sequence, n: int) -> list:
    votes = [parse_score(v) for v in votes]
    if len(votes) != n:
        raise WrongVoteCount(f"expected {n} votes, got {len(votes)}")
    return votes


def stage1_consensus(votes: Sequence) -> Consensus:
    """Accept a score given by at least 4 of the 5 first-stage annotators."""
    score = _majority(_check_votes(votes, STAGE1_VOTES), STAGE1_THRESHOLD)
    return Consensus(Status.LOW_CONFIDENCE) if score is None else Consensus(Status.ACCEPTED, score)


def stage2_consensus(votes: Sequence) -> Consensus:
    """Accept a score given by at least 5 of all 8 votes (5 stage-1 + 3 stage-2)."""
    score = _majority(_check_votes(votes, STAGE2_VOTES), STAGE2_THRESHOLD)
    return Consensus(Status.REJECTED) if score is None else Consensus(Status.ACCEPTED, score)


def resolve_component(stage1_votes: Sequence, stage2_votes: Optional[Sequence] = None) -> Consensus:
    first = stage1_consensus(stage1_votes)
    if first.accepted:
        if stage2_votes:
            raise AnnotationError("stage-2 votes given for a component accepted in stage 1")
        return first
    return stage2_consensus(list(stage1_votes) + list(stage2_votes or []))


def round_half_up(value: Fraction) -> int:
    return math.floor(value + Fraction(1, 2))


def aggregate_image_label(outcomes: Sequence[Consensus], image_id: str = "") -> ImageLabelResult:
    """Image-level label from the four component outcomes."""
    outcomes = [o.outcome if isinstance(o, ComponentConsensus) else o for o in outcomes]
    if len(outcomes) != len(Component):
        raise WrongComponentCount(f"expected {len(Component)} component outcomes, got {len(outcomes)}")
    scores = [o.score for o in outcomes if o.accepted]
    if len(scores) < MIN_ACCEPTED_COMPONENTS:
        return ImageLabelResult(image_id, len(scores), None)
    return ImageLabelResult(image_id, len(scores), round_half_up(Fraction(sum(scores), len(scores))))


@dataclass
class StatisticsTable:
    counts: dict  # "0", "1", "2", "unlabeled"

    @property
    def labeled(self) -> int:
        return self.counts["0"] + self.counts["1"] + self.counts["2"]

    @property
    def total(self) -> int:
        return self.labeled + self.counts["unlabeled"]

    def rows(self) -> list[tuple[str, str, int]]:
        return [
            ("High Confidence", "No", self.counts["0"]),
            ("High Confidence", "Moderate", self.counts["1"]),
            ("High Confidence", "Severe", self.counts["2"]),
            ("High Confidence", "Subtotal", self.labeled),
            ("Low Confidence", "N/A", self.counts["unlabeled"]),
            ("Total", "", self.total),
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample_group", "pain_label", "count"])
        w.writerows(self.rows())
        return buf.getvalue()

    def pretty(self) -> str:
        lines = [f"{'Sample Group':<16} {'Pain Label':<10} {'# Images':>9}", "-" * 37]
        lines += [f"{g:<16} {p:<10} {c:>9,}" for g, p, c in self.rows()]
        return "\n".join(lines)


def dataset_statistics(results: Iterable[ImageLabelResult]) -> StatisticsTable:
    counts = {"0": 0, "1": 0, "2": 0, "unlabeled": 0}
    for r in results:
        counts["unlabeled" if r.raw_score is None else str(r.raw_score)] += 1
    return StatisticsTable(counts)


# --------------------------------------------------------------------------
# CSV handling


def read_annotations(path) -> list[AnnotationRecord]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"annotation file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise MalformedRow(1, "", "empty annotation file")
        if tuple(h.strip() for h in header) != ANNOTATION_HEADER:
            raise MalformedRow(1, ",".join(header), f"expected header {','.join(ANNOTATION_HEADER)}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            raw = ",".join(row)
            if len(row) != 5:
                raise MalformedRow(lineno, raw, "expected 5 fields")
            image_id, component, annotator, stage, score = (c.strip() for c in row)
            try:
                comp = Component(component.lower())
                stage_n = int(stage)
                if stage_n not in (1, 2):
                    raise ValueError(f"stage must be 1 or 2, got {stage!r}")
                value = parse_score(score)
            except ValueError as exc:
                raise MalformedRow(lineno, raw, str(exc)) from None
            if not image_id or not annotator:
                raise MalformedRow(lineno, raw, "empty image_id or annotator_id")
            records.append(AnnotationRecord(image_id, comp, annotator, stage_n, value))
    if not records:
        raise MalformedRow(2, "", "annotation file has no records")
    return records


def consensus_by_component(records: Iterable[AnnotationRecord]) -> list[ComponentConsensus]:
    """Validate vote structure and resolve every (image, component) pair.

    Output is ordered by first appearance of the image, then component order.
    """
    votes: dict = defaultdict(lambda: {1: {}, 2: {}})
    order: dict = {}
    for r in records:
        order.setdefault(r.image_id, len(order))
        slot = votes[(r.image_id, r.component)][r.stage]
        if r.annotator_id in slot:
            raise AnnotationError(f"{r.image_id}/{r.component.value}: annotator {r.annotator_id} voted twice in stage {r.stage}")
        slot[r.annotator_id] = r.score
    out = []
    for image_id in sorted(order, key=order.get):
        for comp in Component:
            if (image_id, comp) not in votes:
                raise WrongComponentCount(f"{image_id}: no votes for component {comp.value}")
            v = votes[(image_id, comp)]
            if set(v[1]) & set(v[2]):
                raise AnnotationError(f"{image_id}/{comp.value}: stage-2 annotators must differ from stage-1")
            if len(v[1]) != STAGE1_VOTES:
                raise WrongVoteCount(f"{image_id}/{comp.value}: {len(v[1])} stage-1 annotators, expected {STAGE1_VOTES}")
            try:
                outcome = resolve_component(list(v[1].values()), list(v[2].values()))
            except (WrongVoteCount, AnnotationError) as exc:
                raise type(exc)(f"{image_id}/{comp.value}: {exc}") from None
            out.append(ComponentConsensus(image_id, comp, outcome))
    return out


def aggregate_annotations(records: Iterable[AnnotationRecord]) -> list[ImageLabelResult]:
    by_image: dict[str, list[ComponentConsensus]] = {}
    for c in consensus_by_component(records):
        by_image.setdefault(c.image_id, []).append(c)
    return [aggregate_image_label(cs, image_id) for image_id, cs in by_image.items()]


def write_labels(results: Iterable[ImageLabelResult], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "raw_score"])
        for r in results:
            w.writerow([r.image_id, "unlabeled" if r.raw_score is None else r.raw_score])
