"""End-to-end design run: enumerate thumb bases, evaluate, select, report."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from handforge.config import HandSpec
from handforge.errors import NoFeasibleCandidate
from handforge.export import candidates_csv, export_cloud
from handforge.hand import FINGER_SITES, FINGERS, HandModel, ThumbBase
from handforge.kapandji import KapandjiReport
from handforge.opposability import THUMB_LAYER, OpposabilityResult, evaluate_opposability
from handforge.selection import (
    CandidateRecord,
    Checkpoint,
    Evaluator,
    enumerate_candidates,
    run_search,
    select_best,
)

log = logging.getLogger(__name__)

CANDIDATES_CSV = "candidates.csv"
SUMMARY_JSON = "best_base.json"
CHECKPOINT = "candidates.jsonl"
CLOUD_DIR = "clouds"
FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class PipelineResult:
    best: ThumbBase | None
    records: list[CandidateRecord]
    hand: HandModel | None = None
    report: KapandjiReport | None = None
    opposability: OpposabilityResult | None = None


def _report_json(report: KapandjiReport) -> list[dict]:
    out = []
    for o in report.outcomes:
        r = o.result
        out.append({
            "finger": o.target.finger,
            "site": o.target.site,
            "reached": o.reached,
            "status": r.status.value,
            "residual_mm": float(r.residual),
            "q_thumb_deg": [float(v) for v in np.degrees(r.q_thumb)],
            "q_finger_deg": [float(v) for v in np.degrees(r.q_finger)],
        })
    return out


def _summary(result: PipelineResult, threshold: float) -> dict:
    stored = [r for r in result.records if r.stored]
    doc = {
        "candidates": len(result.records),
        "kapandji_pass": sum(r.kapandji_pass for r in result.records),
        "stored": len(stored),
        "threshold_pct": threshold,
        "best": None,
    }
    if result.best is not None:
        b = result.best
        opp = result.opposability
        doc["best"] = {
            "x_mm": b.x, "y_mm": b.y, "z_mm": b.z, "theta_z_deg": b.theta_z,
            "toi": opp.index,
            "sigma_r_pct": opp.sigma_r,
            "thumb_length_mm": opp.d_t,
            "volumes_mm3": {f: dict(zip(FINGER_SITES, map(float, row))) for f, row in zip(FINGERS, opp.v)},
            "kapandji_pass": result.report.passed,
            "kapandji": _report_json(result.report),
        }
    return doc


def run_pipeline(
    spec: HandSpec,
    out_dir: str | Path,
    workers: int = 1,
    export_clouds: bool = False,
    cloud_format: str = "ply",
    progress: Callable[[int, CandidateRecord], None] | None = None,
) -> PipelineResult:
    """Run the search and write the candidate table and summary into ``out_dir``.

    Raises NoFeasibleCandidate after writing the table when nothing is stored.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hand = spec.build_hand()
    candidates = enumerate_candidates(spec.intervals)
    log.info("%d candidates", len(candidates))
    evaluator = Evaluator(hand, spec.search, candidates)
    fingerprint = {"format": FORMAT_VERSION, "document": spec.source, "seed": spec.seed}
    checkpoint = Checkpoint(out / CHECKPOINT, fingerprint)
    records = run_search(evaluator, candidates, workers, checkpoint, progress)
    (out / CANDIDATES_CSV).write_text(candidates_csv(records))

    threshold = spec.search.threshold
    try:
        best = select_best(records, threshold)
    except NoFeasibleCandidate:
        _write_json(out / SUMMARY_JSON, _summary(PipelineResult(None, records), threshold))
        raise

    winner = hand.with_thumb(best)
    report = evaluator.kapandji(best)
    s = spec.search
    grid = evaluator.grid
    opp = evaluate_opposability(winner, grid, s.weights, s.joint_resolution, s.sigma_unit, store=True)
    result = PipelineResult(best, records, winner, report, opp)
    _write_json(out / SUMMARY_JSON, _summary(result, threshold))

    if export_clouds:
        cdir = out / CLOUD_DIR
        cdir.mkdir(exist_ok=True)
        layers = [THUMB_LAYER] + [(f, s_) for f in FINGERS for s_ in FINGER_SITES]
        for chain, site in layers:
            export_cloud(grid, chain, site, cdir / f"{chain}_{site}.{cloud_format}", cloud_format)
    return result


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n")
