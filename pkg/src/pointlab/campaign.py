"""Question generation, replication, resolution and campaign accounting.

One *point task* is a sampled point inside one image.  Each round asks a
single yes/no question about it: round 1 takes the class with the highest
model score among the image-level labels, and every non-YES resolution
advances to the next-ranked label until YES, the label set runs out, or
max_rounds is hit.  A question is replicated k times, each replica going
to a distinct annotator; replicas resolve by unanimity (any UNSURE, or
any disagreement, leaves the question UNRESOLVED).

The answer log is the single source of truth: CampaignState is a pure
fold over (config, inputs, ordered answers), which is what makes crash
replay and the live path provably identical.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from pointlab.domain import (
    ImageRecord,
    LabelMap,
    Point,
    Resolution,
    ScoreMap,
    Verdict,
    point_to_pixel,
    valid_identifier,
)
from pointlab.formats import AnswerRecord, PointLabelRow
from pointlab.sampling import StrategySpec, select_points

DISPATCH_ORDERS = ("class_blocks", "fifo")

# annotation cost constants: median seconds per answered question, and the
# polygon-drawing baseline of 2.7 polygons per image at 80 s per polygon
SECONDS_PER_ANSWER = 0.8
SECONDS_PER_ANSWER_OPEN_IMAGES = 1.1
POLYGONS_PER_IMAGE = 2.7
SECONDS_PER_POLYGON = 80.0


@dataclass(frozen=True)
class Question:
    question_id: str
    image_id: str
    point: Point
    class_id: int
    round: int  # 1-based

    def __post_init__(self) -> None:
        if self.round < 1:
            raise ValueError(f"round must be >= 1, got {self.round}")
        if self.class_id < 0:
            raise ValueError(f"negative class id {self.class_id}")


@dataclass(frozen=True)
class Answer:
    question_id: str
    annotator_id: str
    verdict: Verdict
    latency_ms: int

    def __post_init__(self) -> None:
        if not valid_identifier(self.annotator_id):
            raise ValueError(f"annotator id {self.annotator_id!r} not in [A-Za-z0-9_-]+")
        if self.latency_ms < 0:
            raise ValueError("negative latency")


@dataclass(frozen=True)
class CampaignConfig:
    ppi: int = 10
    replication: int = 1
    max_rounds: int = 3
    strategy: StrategySpec = field(default_factory=lambda: StrategySpec(kind="uniform"))
    dispatch_order: str = "class_blocks"
    lease_seconds: float = 120.0
    latency_median_s: float = SECONDS_PER_ANSWER
    source: str = "sim"

    def __post_init__(self) -> None:
        if self.ppi < 1:
            raise ValueError("ppi must be >= 1")
        if self.replication not in (1, 2, 3):
            raise ValueError(f"replication must be 1, 2 or 3, got {self.replication}")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.dispatch_order not in DISPATCH_ORDERS:
            raise ValueError(f"unknown dispatch order {self.dispatch_order!r}")
        if self.lease_seconds <= 0:
            raise ValueError("lease must be positive")
        if self.latency_median_s <= 0:
            raise ValueError("latency median must be positive")
        if not valid_identifier(self.source):
            raise ValueError(f"source {self.source!r} not in [A-Za-z0-9_-]+")


def save_campaign_config(cfg: CampaignConfig, path) -> None:
    """Flat key=value file; seed lives inside the strategy."""
    lines = [
        f"ppi={cfg.ppi}",
        f"replication={cfg.replication}",
        f"max_rounds={cfg.max_rounds}",
        f"strategy={cfg.strategy.kind}",
        f"top_fraction={cfg.strategy.top_fraction}",
        f"band_low={cfg.strategy.band[0]}",
        f"band_high={cfg.strategy.band[1]}",
        f"seed={cfg.strategy.seed}",
        f"dispatch_order={cfg.dispatch_order}",
        f"lease_seconds={cfg.lease_seconds}",
        f"latency_median_s={cfg.latency_median_s}",
        f"source={cfg.source}",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_campaign_config(path) -> CampaignConfig:
    kv: dict[str, str] = {}
    with open(path) as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {i}: expected key=value, got {line!r}")
            k, v = line.split("=", 1)
            kv[k.strip()] = v.strip()
    strategy = StrategySpec(
        kind=kv.get("strategy", "uniform"),
        top_fraction=float(kv.get("top_fraction", "0.01")),
        band=(float(kv.get("band_low", "0.8")), float(kv.get("band_high", "0.9"))),
        seed=int(kv.get("seed", "0")),
    )
    return CampaignConfig(
        ppi=int(kv.get("ppi", "10")),
        replication=int(kv.get("replication", "1")),
        max_rounds=int(kv.get("max_rounds", "3")),
        strategy=strategy,
        dispatch_order=kv.get("dispatch_order", "class_blocks"),
        lease_seconds=float(kv.get("lease_seconds", "120")),
        latency_median_s=float(kv.get("latency_median_s", str(SECONDS_PER_ANSWER))),
        source=kv.get("source", "sim"),
    )


# ---------------------------------------------------------------------------
# Ranking and resolution

def ranked_classes(m: ScoreMap, p: Point, labels: Iterable[int]) -> list[int]:
    """Image-level labels ordered by descending model score at p; ties break
    towards the smaller class id.  Classes outside the label set are never
    ranked, however well they score."""
    vec = m.vector_at(p)
    lab = sorted(set(int(c) for c in labels))
    for c in lab:
        if not (0 <= c < m.classes):
            raise ValueError(f"label {c} outside score map's {m.classes} classes")
    return sorted(lab, key=lambda c: (-float(vec[c]), c))


def resolve(verdicts: Sequence[Verdict], replication: int | None = None) -> Resolution:
    """Unanimity rule: all YES -> YES, all NO -> NO, anything else (including
    any UNSURE) -> UNRESOLVED."""
    if not verdicts:
        raise ValueError("cannot resolve zero verdicts")
    if replication is not None and len(verdicts) != replication:
        raise ValueError(f"expected {replication} verdicts, got {len(verdicts)}")
    if all(v is Verdict.YES for v in verdicts):
        return Resolution.YES
    if all(v is Verdict.NO for v in verdicts):
        return Resolution.NO
    return Resolution.UNRESOLVED


# ---------------------------------------------------------------------------
# Campaign state

@dataclass
class PointTask:
    """Lifecycle of one sampled point within one image."""

    image_id: str
    point_index: int
    point: Point
    ranking: tuple[int, ...]  # image-level labels, best first, fixed at creation
    rounds_used: int = 0
    done: bool = False
    resolutions: list[tuple[int, Resolution]] = field(default_factory=list)  # (class, outcome)

    @property
    def key(self) -> tuple[str, int]:
        return (self.image_id, self.point_index)


def _question_id(image_id: str, point_index: int, round_no: int) -> str:
    return f"{image_id}-p{point_index:05d}-r{round_no}"


def generate_questions(record: ImageRecord, m: ScoreMap, config: CampaignConfig) -> list[Question]:
    """Round-1 questions for one image: ppi sampled points, each asking the
    top-ranked image-level label at that point."""
    seed = np.random.SeedSequence(
        [config.strategy.seed, zlib.crc32(record.image_id.encode())]
    ).generate_state(1)[0]
    spec = StrategySpec(
        kind=config.strategy.kind,
        top_fraction=config.strategy.top_fraction,
        band=config.strategy.band,
        seed=int(seed),
    )
    points = select_points(spec, m, config.ppi)
    out = []
    for i, p in enumerate(points):
        ranking = ranked_classes(m, p, record.image_level_labels)
        out.append(
            Question(
                question_id=_question_id(record.image_id, i, 1),
                image_id=record.image_id,
                point=p,
                class_id=ranking[0],
                round=1,
            )
        )
    return out


def next_round(task: PointTask, m: ScoreMap) -> Question | None:
    """The follow-up question for a task whose last round did not resolve
    YES, or None when the task is exhausted (no labels left / round cap).
    The ranking was fixed when the task was created; m is accepted for
    symmetry with generate_questions and must describe the same image."""
    del m
    if task.done:
        raise ValueError(f"task {task.key} is already finished")
    if task.rounds_used >= len(task.ranking):
        return None
    return Question(
        question_id=_question_id(task.image_id, task.point_index, task.rounds_used + 1),
        image_id=task.image_id,
        point=task.point,
        class_id=task.ranking[task.rounds_used],
        round=task.rounds_used + 1,
    )


class CampaignState:
    """Deterministic fold of answers over a fixed question universe.

    Not thread-safe on its own; the HTTP service serializes access.
    """

    def __init__(
        self,
        records: Sequence[ImageRecord],
        scoremaps: Mapping[str, ScoreMap],
        config: CampaignConfig,
    ):
        self.config = config
        self.records = {r.image_id: r for r in records}
        if len(self.records) != len(records):
            raise ValueError("duplicate image ids")
        self.scoremaps = scoremaps
        self.questions: dict[str, Question] = {}
        self.answers: dict[str, dict[str, Answer]] = {}
        self.tasks: dict[tuple[str, int], PointTask] = {}
        self.resolved: dict[str, Resolution] = {}  # per question
        self._creation_order: dict[str, int] = {}
        self._task_of: dict[str, tuple[str, int]] = {}
        self._open: set[str] = set()

        for image_id in sorted(self.records):
            record = self.records[image_id]
            m = scoremaps[image_id]
            for i, q in enumerate(generate_questions(record, m, config)):
                task = PointTask(
                    image_id=image_id,
                    point_index=i,
                    point=q.point,
                    ranking=tuple(ranked_classes(m, q.point, record.image_level_labels)),
                )
                self.tasks[task.key] = task
                self._add_question(q, task)

    def _add_question(self, q: Question, task: PointTask) -> None:
        self.questions[q.question_id] = q
        self.answers[q.question_id] = {}
        self._creation_order[q.question_id] = len(self._creation_order)
        self._task_of[q.question_id] = task.key
        self._open.add(q.question_id)

    def _task_for(self, q: Question) -> PointTask:
        return self.tasks[self._task_of[q.question_id]]

    def open_questions(self) -> list[Question]:
        """Questions still missing answers, in dispatch order: contiguous
        same-class blocks by default, else creation order."""
        qs = [self.questions[qid] for qid in self._open]
        if self.config.dispatch_order == "class_blocks":
            qs.sort(
                key=lambda q: (q.class_id, q.image_id, self._creation_order[q.question_id])
            )
        else:
            qs.sort(key=lambda q: self._creation_order[q.question_id])
        return qs

    def answers_for(self, question_id: str) -> dict[str, Answer]:
        return self.answers[question_id]

    @property
    def is_complete(self) -> bool:
        return not self._open

    def total_answers(self) -> int:
        return sum(len(a) for a in self.answers.values())

    def record_answer(self, answer: Answer) -> Resolution | None:
        """Fold one answer in.  Returns the resolution when this was the
        k-th replica, advancing the task (next round or completion)."""
        qid = answer.question_id
        q = self.questions.get(qid)
        if q is None:
            raise KeyError(f"unknown question {qid!r}")
        got = self.answers[qid]
        if answer.annotator_id in got:
            raise ValueError(f"duplicate answer from {answer.annotator_id!r} on {qid!r}")
        if qid not in self._open:
            raise ValueError(f"question {qid!r} already has {len(got)} replicas")
        got[answer.annotator_id] = answer
        if len(got) < self.config.replication:
            return None

        outcome = resolve([a.verdict for a in got.values()], self.config.replication)
        self.resolved[qid] = outcome
        self._open.discard(qid)
        task = self._task_for(q)
        task.rounds_used += 1
        task.resolutions.append((q.class_id, outcome))
        if outcome is Resolution.YES or task.rounds_used >= self.config.max_rounds:
            task.done = True
        else:
            nxt = next_round(task, self.scoremaps[task.image_id])
            if nxt is None:
                task.done = True
            else:
                self._add_question(nxt, task)
        return outcome


def aggregate(state: CampaignState) -> list[PointLabelRow]:
    """One row per (point, asked class) that received at least one answer.
    Fully answered questions carry their resolution; partially answered
    ones are UNRESOLVED with the votes so far."""
    rows = []
    for qid, q in state.questions.items():
        got = state.answers[qid]
        if not got:
            continue
        verdicts = [a.verdict for a in got.values()]
        if len(got) >= state.config.replication:
            outcome = state.resolved[qid]
        else:
            outcome = Resolution.UNRESOLVED
        rows.append(
            PointLabelRow(
                image_id=q.image_id,
                class_id=q.class_id,
                x=q.point.x,
                y=q.point.y,
                verdict=outcome,
                yes_votes=sum(1 for v in verdicts if v is Verdict.YES),
                no_votes=sum(1 for v in verdicts if v is Verdict.NO),
                unsure_votes=sum(1 for v in verdicts if v is Verdict.UNSURE),
                source=state.config.source,
            )
        )
    return rows


# ---------------------------------------------------------------------------
# Simulated annotators

def simulate_annotator(
    q: Question,
    gt: LabelMap,
    error_rate: float = 0.0,
    unsure_rate: float = 0.0,
    rng: np.random.Generator | int | None = None,
    annotator_id: str = "sim00",
    latency_median_s: float = SECONDS_PER_ANSWER,
    latency_sigma: float = 0.6,
) -> Answer:
    """Answer as a noisy oracle: truthful with probability 1 - e - u, the
    opposite verdict with probability e, UNSURE with probability u.  Latency
    is log-normal (heavy tail) with the given median."""
    if error_rate < 0 or unsure_rate < 0 or error_rate + unsure_rate > 1:
        raise ValueError(f"bad noise rates e={error_rate} u={unsure_rate}")
    if isinstance(rng, (int, np.integer)) or rng is None:
        rng = np.random.default_rng(rng)
    truth = gt.label_at(q.point) == q.class_id
    roll = rng.random()
    if roll < unsure_rate:
        verdict = Verdict.UNSURE
    elif roll < unsure_rate + error_rate:
        verdict = Verdict.NO if truth else Verdict.YES
    else:
        verdict = Verdict.YES if truth else Verdict.NO
    latency_s = math.exp(rng.normal(math.log(latency_median_s), latency_sigma))
    return Answer(
        question_id=q.question_id,
        annotator_id=annotator_id,
        verdict=verdict,
        latency_ms=max(1, round(latency_s * 1000)),
    )


def run_simulation(
    records: Sequence[ImageRecord],
    gts: Mapping[str, LabelMap],
    scoremaps: Mapping[str, ScoreMap],
    config: CampaignConfig,
    error_rate: float = 0.0,
    unsure_rate: float = 0.0,
    seed: int = 0,
    annotator_pool: int = 3,
    log_writer=None,
) -> CampaignState:
    """Drive a campaign to completion with simulated annotators.

    Per-answer RNG streams are keyed on (seed, question id, replica), so
    the outcome does not depend on processing order.
    """
    from pointlab.formats import rfc3339_now

    if annotator_pool < config.replication:
        raise ValueError("annotator pool smaller than replication")
    state = CampaignState(records, scoremaps, config)
    while not state.is_complete:
        for q in state.open_questions():
            qcrc = zlib.crc32(q.question_id.encode())
            have = len(state.answers[q.question_id])
            for replica in range(have, config.replication):
                ann = f"sim{(qcrc + replica) % annotator_pool:03d}"
                rng = np.random.default_rng(np.random.SeedSequence([seed, qcrc, replica]))
                answer = simulate_annotator(
                    q,
                    gts[q.image_id],
                    error_rate=error_rate,
                    unsure_rate=unsure_rate,
                    rng=rng,
                    annotator_id=ann,
                    latency_median_s=config.latency_median_s,
                )
                state.record_answer(answer)
                if log_writer is not None:
                    log_writer.append(
                        AnswerRecord(
                            question_id=answer.question_id,
                            annotator_id=answer.annotator_id,
                            verdict=answer.verdict,
                            latency_ms=answer.latency_ms,
                            timestamp=rfc3339_now(),
                        )
                    )
    return state


def replay_answers(state: CampaignState, log: Iterable[AnswerRecord]) -> CampaignState:
    """Fold logged answers into a fresh state (e.g. after restart)."""
    for rec in log:
        state.record_answer(
            Answer(
                question_id=rec.question_id,
                annotator_id=rec.annotator_id,
                verdict=rec.verdict,
                latency_ms=rec.latency_ms,
            )
        )
    return state


# ---------------------------------------------------------------------------
# Campaign statistics and cost

@dataclass(frozen=True)
class CostReport:
    questions_asked: int
    total_seconds: float
    speedup_vs_polygons: float | None  # None when nothing was asked yet

    def __str__(self) -> str:
        speed = "undefined" if self.speedup_vs_polygons is None else f"{self.speedup_vs_polygons:.2f}x"
        return (
            f"{self.questions_asked} questions, {self.total_seconds:.1f} s total, "
            f"speedup vs polygons {speed}"
        )


def campaign_cost(
    state: CampaignState,
    seconds_per_answer: float = SECONDS_PER_ANSWER,
    polygon_seconds_per_image: float = POLYGONS_PER_IMAGE * SECONDS_PER_POLYGON,
) -> CostReport:
    """Human time for every answered question vs drawing polygons instead.

    Counts unique answered questions (one pass of annotator time); the
    polygon baseline charges 2.7 * 80 s per image by default.
    """
    asked = sum(1 for qid, got in state.answers.items() if got)
    total = asked * seconds_per_answer
    if asked == 0:
        speedup = None
    else:
        baseline = len(state.records) * polygon_seconds_per_image
        speedup = baseline / total
    return CostReport(questions_asked=asked, total_seconds=total, speedup_vs_polygons=speedup)


@dataclass(frozen=True)
class RoundStats:
    points_total: int
    yes_points: int
    yes_by_round: dict[int, int]  # round index -> points first resolving YES there
    mean_questions_per_yes: float | None
    questions_issued: int

    def fraction_yes_within(self, rounds: int) -> float:
        if self.points_total == 0:
            return 0.0
        return sum(n for r, n in self.yes_by_round.items() if r <= rounds) / self.points_total


def round_stats(state: CampaignState) -> RoundStats:
    """How quickly points reach a YES, and at what question cost."""
    yes_by_round: dict[int, int] = {}
    questions_to_yes: list[int] = []
    for task in state.tasks.values():
        for i, (_, outcome) in enumerate(task.resolutions, start=1):
            if outcome is Resolution.YES:
                yes_by_round[i] = yes_by_round.get(i, 0) + 1
                questions_to_yes.append(i)
                break
    return RoundStats(
        points_total=len(state.tasks),
        yes_points=len(questions_to_yes),
        yes_by_round=dict(sorted(yes_by_round.items())),
        mean_questions_per_yes=(
            float(np.mean(questions_to_yes)) if questions_to_yes else None
        ),
        questions_issued=len(state.questions),
    )
