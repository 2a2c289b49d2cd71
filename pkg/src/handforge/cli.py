"""Command-line front end.

Exit codes: 0 a best base was produced (or a gesture printed), 2 invalid
input, 3 no feasible candidate, 1 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from handforge.config import default_spec, load_document
from handforge.errors import InvalidInput, NoFeasibleCandidate
from handforge.export import CLOUD_FORMATS
from handforge.gestures import GESTURES, gesture_pose
from handforge.pipeline import run_pipeline

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
THREADS_ENV = "HANDFORGE_THREADS"

log = logging.getLogger("handforge")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="handforge", description="Thumb-base search for an anthropomorphic hand.")
    p.add_argument("--config", type=Path, help="JSON hand specification (defaults to the built-in hand)")
    p.add_argument("--out", type=Path, default=Path("handforge-out"), help="output directory")
    p.add_argument("--grid-step", type=float, help="voxel size in mm (overrides the document)")
    p.add_argument("--threshold", type=float, help="dispersion threshold in percent (overrides the document)")
    p.add_argument("--seed", type=int, help="solver seed (overrides the document)")
    p.add_argument("--export-clouds", action="store_true", help="write occupancy point clouds of the winner")
    p.add_argument("--cloud-format", choices=CLOUD_FORMATS, default="ply")
    p.add_argument("--gesture", metavar="NAME", help=f"print a gesture pose and exit ({', '.join(GESTURES)})")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise InvalidInput(f"{THREADS_ENV}: expected an integer, got {raw!r}") from None
    if n < 1:
        raise InvalidInput(f"{THREADS_ENV}: must be >= 1")
    return n


def _load(args):
    spec = load_document(args.config, args.seed) if args.config else default_spec(args.seed or 0)
    search = spec.search
    if args.grid_step is not None:
        if not args.grid_step > 0:
            raise InvalidInput("--grid-step: must be > 0")
        search = replace(search, grid_step=args.grid_step)
    if args.threshold is not None:
        if not args.threshold > 0:
            raise InvalidInput("--threshold: must be > 0")
        search = replace(search, threshold=args.threshold)
    # Overrides join the checkpoint fingerprint so a resumed run never mixes settings.
    source = dict(spec.source, _cli={"grid_step": search.grid_step, "threshold": search.threshold})
    return replace(spec, search=search, source=source)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.gesture:
            pose = gesture_pose(args.gesture)
            print(json.dumps({"name": pose.name, "joints_deg": pose.joint_vectors()}, indent=2))
            return EXIT_OK
        spec = _load(args)
        workers = _threads()

        def progress(i, rec):
            log.info("%d %s pass=%s stored=%s", i, rec.base.as_tuple(), rec.kapandji_pass, rec.stored)

        result = run_pipeline(spec, args.out, workers, args.export_clouds, args.cloud_format, progress)
    except InvalidInput as exc:
        print(f"handforge: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NoFeasibleCandidate as exc:
        print(f"handforge: {exc}; candidate table written to {args.out}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"handforge: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
    b = result.best
    print(f"best base: x={b.x:g} y={b.y:g} z={b.z:g} theta_z={b.theta_z:g} "
          f"toi={result.opposability.index:.4f} sigma_r={result.opposability.sigma_r:.3f}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
