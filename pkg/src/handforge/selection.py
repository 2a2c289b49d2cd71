"""Brute-force thumb-base search and winner selection.

A candidate is kept ("stored") when it passes the Kapandji test and its
dispersion score is below the threshold; the stored candidate with the
highest opposability index wins.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from handforge.errors import InvalidInput, NoFeasibleCandidate
from handforge.hand import HandModel, ThumbBase
from handforge.ik import IkSettings
from handforge.kapandji import KapandjiReport, run_kapandji
from handforge.opposability import (
    DEFAULT_CELL,
    DEFAULT_JOINT_RESOLUTION,
    SIGMA_UNIT,
    WorkspaceGrid,
    evaluate_opposability,
    grid_for_hand,
    sample_fingers,
)

DEFAULT_THRESHOLD = 20.0
AXES = ("x", "y", "z", "theta_z")


@dataclass(frozen=True)
class Interval:
    """Arithmetic sequence ``min, min + step, ...`` up to ``max`` (inclusive)."""

    min: float
    max: float
    step: float

    def __post_init__(self):
        for v in (self.min, self.max, self.step):
            if not math.isfinite(v):
                raise InvalidInput("interval bounds must be finite")
        if not self.step > 0:
            raise InvalidInput(f"interval step must be > 0, got {self.step}")
        if self.min > self.max:
            raise InvalidInput(f"interval min {self.min} exceeds max {self.max}")

    def values(self) -> list[float]:
        n = int(math.floor((self.max - self.min) / self.step + 1e-9))
        # Multiplying rather than accumulating keeps values like 0.1 * k clean.
        return [self.min + k * self.step for k in range(n + 1)]


@dataclass(frozen=True)
class SearchIntervals:
    x: Interval
    y: Interval
    z: Interval
    theta_z: Interval

    @classmethod
    def default(cls) -> "SearchIntervals":
        """Bounding box of the reference candidates, widened by one step per side."""
        return cls(
            Interval(4.0, 16.0, 4.0),
            Interval(-7.0, 20.0, 9.0),
            Interval(-13.0, -1.0, 4.0),
            Interval(35.0, 55.0, 5.0),
        )

    def axes(self) -> tuple[Interval, ...]:
        return (self.x, self.y, self.z, self.theta_z)


def enumerate_candidates(intervals: SearchIntervals) -> list[ThumbBase]:
    """Cartesian product in lexicographic (x, y, z, theta_z) order."""
    values = [iv.values() for iv in intervals.axes()]
    out = [ThumbBase(*p) for p in itertools.product(*values)]
    if not out:
        raise InvalidInput("search intervals produce no candidate")
    return out


@dataclass(frozen=True)
class CandidateRecord:
    base: ThumbBase
    kapandji_pass: bool
    toi: float | None = None
    sigma_r: float | None = None
    stored: bool = False
    n_reached: int = 0

    def __post_init__(self):
        if self.stored and not (self.kapandji_pass and self.sigma_r is not None):
            raise InvalidInput("a stored candidate must pass the Kapandji test and have a dispersion score")

    def to_json(self) -> dict:
        d = asdict(self)
        d["base"] = list(self.base.as_tuple())
        return d

    @classmethod
    def from_json(cls, d: dict) -> "CandidateRecord":
        d = dict(d)
        d["base"] = ThumbBase(*d["base"])
        return cls(**d)


@dataclass(frozen=True)
class SearchSettings:
    ik: IkSettings = field(default_factory=IkSettings)
    weights: object = 1.0
    threshold: float = DEFAULT_THRESHOLD
    joint_resolution: float = DEFAULT_JOINT_RESOLUTION
    grid_step: float = DEFAULT_CELL
    sigma_unit: float = SIGMA_UNIT

    def __post_init__(self):
        if not self.grid_step > 0:
            raise InvalidInput("grid step must be > 0")
        if not self.joint_resolution > 0:
            raise InvalidInput("joint resolution must be > 0")
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidInput("weights must be finite and >= 0")


class Evaluator:
    """Template hand plus finger layers sampled once for a whole sweep.

    Only the thumb changes between candidates, so the finger occupancy is
    shared. Evaluation never writes to the shared grid.
    """

    def __init__(self, hand: HandModel, settings: SearchSettings, candidates: Iterable[ThumbBase] = ()):
        self.hand = hand
        self.settings = settings
        bases = [b.as_tuple() for b in candidates]
        self.grid: WorkspaceGrid = grid_for_hand(hand, settings.grid_step, bases)
        sample_fingers(hand, self.grid, settings.joint_resolution)

    def kapandji(self, base: ThumbBase) -> KapandjiReport:
        return run_kapandji(self.hand.with_thumb(base), self.settings.ik)

    def __call__(self, base: ThumbBase) -> CandidateRecord:
        return evaluate_candidate(self, base)


def evaluate_candidate(evaluator: Evaluator, base: ThumbBase) -> CandidateRecord:
    s = evaluator.settings
    hand = evaluator.hand.with_thumb(base)
    report = run_kapandji(hand, s.ik)
    if not report.passed:
        return CandidateRecord(base, False, n_reached=report.n_reached)
    opp = evaluate_opposability(hand, evaluator.grid, s.weights, s.joint_resolution, s.sigma_unit)
    stored = opp.sigma_r is not None and opp.sigma_r < s.threshold
    return CandidateRecord(base, True, opp.index, opp.sigma_r, stored, report.n_reached)


def select_best(records: Sequence[CandidateRecord], threshold: float = DEFAULT_THRESHOLD) -> ThumbBase:
    """Highest index among passing records with ``sigma_r < threshold``.

    Ties go to the lexicographically smallest base.
    """
    if not records:
        raise InvalidInput("no candidate records")
    feasible = [
        r for r in records
        if r.kapandji_pass and r.sigma_r is not None and r.toi is not None and r.sigma_r < threshold
    ]
    if not feasible:
        raise NoFeasibleCandidate(f"no candidate passes the Kapandji test with sigma_r < {threshold}")
    best = min(feasible, key=lambda r: (-r.toi, r.base.as_tuple()))
    return best.base


def _fingerprint(payload: object) -> str:
    text = json.dumps(payload, sort_keys=True, default=repr)
    return hashlib.sha256(text.encode()).hexdigest()


class Checkpoint:
    """Append-only JSON-lines record store keyed by a run fingerprint.

    A file written for a different fingerprint is discarded on open.
    """

    def __init__(self, path: str | Path, fingerprint: object):
        self.path = Path(path)
        self.key = _fingerprint(fingerprint)
        self.done: dict[tuple, CandidateRecord] = {}
        if self.path.exists():
            lines = self.path.read_text().splitlines()
            if lines and json.loads(lines[0]).get("fingerprint") == self.key:
                for line in lines[1:]:
                    try:
                        rec = CandidateRecord.from_json(json.loads(line))
                    except (ValueError, TypeError, KeyError):
                        break  # torn final line after an interruption
                    self.done[rec.base.as_tuple()] = rec
        self._rewrite()

    def _rewrite(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("w") as fh:
            fh.write(json.dumps({"fingerprint": self.key}) + "\n")
            for rec in self.done.values():
                fh.write(json.dumps(rec.to_json()) + "\n")

    def add(self, rec: CandidateRecord) -> None:
        self.done[rec.base.as_tuple()] = rec
        with self.path.open("a") as fh:
            fh.write(json.dumps(rec.to_json()) + "\n")


def run_search(
    evaluate: Callable[[ThumbBase], CandidateRecord],
    candidates: Sequence[ThumbBase],
    workers: int = 1,
    checkpoint: Checkpoint | None = None,
    progress: Callable[[int, CandidateRecord], None] | None = None,
) -> list[CandidateRecord]:
    """Evaluate every candidate; results come back in candidate order."""
    if workers < 1:
        raise InvalidInput("workers must be >= 1")
    done = checkpoint.done if checkpoint else {}
    todo = [b for b in candidates if b.as_tuple() not in done]
    fresh: dict[tuple, CandidateRecord] = {}

    def finish(rec: CandidateRecord) -> None:
        fresh[rec.base.as_tuple()] = rec
        if checkpoint:
            checkpoint.add(rec)
        if progress:
            progress(len(fresh), rec)

    if workers == 1:
        for b in todo:
            finish(evaluate(b))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for rec in pool.map(evaluate, todo):
                finish(rec)
    return [done.get(b.as_tuple()) or fresh[b.as_tuple()] for b in candidates]
