"""Hand specification document (JSON) and its conversion to build inputs.

Every field is optional; missing fields fall back to the default hand and
search. Errors name the offending field with a dotted path, e.g.
``search.theta_z.step``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from handforge.errors import InvalidInput
from handforge.hand import (
    DEFAULT_HAND_LENGTH,
    DEFAULT_THUMB_BASE,
    DIGITS,
    FINGER_SITES,
    FINGERS,
    AnthropometricTable,
    FingerPlacement,
    HandModel,
    ThumbBase,
    build_hand,
    default_fractions,
    default_placements,
    default_widths,
    inclination_sign,
    max_inclination,
    place_finger_bases,
    scale_proportions,
)
from handforge.ik import IkSettings
from handforge.selection import AXES, Interval, SearchIntervals, SearchSettings

SCHEMA = "handforge/1"
# Neighbour each generated finger is inclined toward, in sweep order.
INCLINE_ORDER = (("index", "middle"), ("ring", "middle"), ("little", "ring"))

_TOP_KEYS = {
    "schema", "hand_length", "proportions", "widths", "placements", "search",
    "solver", "weights", "threshold", "grid_step", "joint_resolution", "seed",
}
_SOLVER_KEYS = {"dx", "tol", "max_iters", "epsilon", "restarts", "penalty_weight", "stall_iters"}


def _fail(path: str, msg: str):
    raise InvalidInput(f"{path}: {msg}")


def _number(value: Any, path: str, positive: bool = False, integer: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, f"expected a number, got {type(value).__name__}")
    if not math.isfinite(value):
        _fail(path, "must be finite")
    if integer and int(value) != value:
        _fail(path, "expected an integer")
    if positive and not value > 0:
        _fail(path, f"must be > 0, got {value}")
    return int(value) if integer else float(value)


def _object(value: Any, path: str, allowed: set[str] | None = None) -> dict:
    if not isinstance(value, dict):
        _fail(path, f"expected an object, got {type(value).__name__}")
    if allowed is not None:
        extra = sorted(set(value) - allowed)
        if extra:
            _fail(path, f"unknown field(s) {extra}")
    return value


def _list(value: Any, path: str, length: int | None = None) -> list:
    if not isinstance(value, list):
        _fail(path, f"expected a list, got {type(value).__name__}")
    if length is not None and len(value) != length:
        _fail(path, f"expected {length} entries, got {len(value)}")
    return value


def _per_digit(doc: dict, key: str, default: dict, positive: bool) -> dict:
    if key not in doc:
        return default
    raw = _object(doc[key], key, set(DIGITS))
    out = dict(default)
    for digit, vals in raw.items():
        p = f"{key}.{digit}"
        out[digit] = tuple(_number(v, f"{p}[{i}]", positive) for i, v in enumerate(_list(vals, p, 3)))
    return out


@dataclass(frozen=True)
class HandSpec:
    """Parsed, validated document."""

    table: AnthropometricTable
    placements: tuple[FingerPlacement, ...] | None
    offsets: dict[str, float] | None
    incline: bool
    intervals: SearchIntervals
    search: SearchSettings
    seed: int = 0
    source: dict = field(default_factory=dict, compare=False)

    def build_hand(self, thumb: ThumbBase | None = None) -> HandModel:
        thumb = thumb or ThumbBase(*DEFAULT_THUMB_BASE)
        if self.placements is not None:
            return build_hand(self.table, self.placements, thumb)
        return generate_hand(self.table, self.offsets, thumb, self.incline)


def generate_hand(table: AnthropometricTable, offsets: dict[str, float], thumb: ThumbBase, incline: bool = True) -> HandModel:
    """Circle-placed finger bases, optionally inclined until contact with a neighbour."""
    placements = {p.finger: p for p in place_finger_bases(table, offsets)}
    hand = build_hand(table, list(placements.values()), thumb)
    if incline:
        for moving, neighbor in INCLINE_ORDER:
            angle = max_inclination(hand, (moving, neighbor))
            placements[moving] = replace(placements[moving], orientation=inclination_sign(hand, moving, neighbor) * angle)
            hand = build_hand(table, list(placements.values()), thumb)
    return hand


def _placements(value: Any):
    if isinstance(value, dict):
        gen = _object(value, "placements", {"generate"})
        g = _object(gen["generate"], "placements.generate", {"offsets", "incline"})
        offsets_raw = _object(g.get("offsets"), "placements.generate.offsets", set(FINGERS))
        offsets = {}
        for f in FINGERS:
            if f not in offsets_raw:
                _fail("placements.generate.offsets", f"missing {f!r}")
            phi = _number(offsets_raw[f], f"placements.generate.offsets.{f}")
            if abs(phi) >= 90.0:
                _fail(f"placements.generate.offsets.{f}", "|offset| must be < 90 deg")
            offsets[f] = phi
        if offsets["middle"] != 0.0:
            _fail("placements.generate.offsets.middle", "must be 0")
        incline = g.get("incline", True)
        if not isinstance(incline, bool):
            _fail("placements.generate.incline", "expected true or false")
        return None, offsets, incline

    items = _list(value, "placements", len(FINGERS))
    out = []
    for i, item in enumerate(items):
        p = f"placements[{i}]"
        d = _object(item, p, {"finger", "position", "orientation"})
        finger = d.get("finger")
        if finger not in FINGERS:
            _fail(f"{p}.finger", f"expected one of {FINGERS}, got {finger!r}")
        pos = tuple(_number(v, f"{p}.position[{k}]") for k, v in enumerate(_list(d.get("position"), f"{p}.position", 3)))
        orient = _number(d.get("orientation", 0.0), f"{p}.orientation")
        try:
            out.append(FingerPlacement(finger, pos, orient))
        except InvalidInput as exc:
            _fail(p, str(exc))
    if sorted(p.finger for p in out) != sorted(FINGERS):
        _fail("placements", "need exactly one entry per finger")
    return tuple(out), None, False


def _intervals(value: Any) -> SearchIntervals:
    d = _object(value, "search", set(AXES))
    default = SearchIntervals.default()
    axes = {}
    for name, iv in zip(AXES, default.axes()):
        if name not in d:
            axes[name] = iv
            continue
        p = f"search.{name}"
        raw = _object(d[name], p, {"min", "max", "step"})
        vals = {k: _number(raw.get(k), f"{p}.{k}") for k in ("min", "max", "step")}
        if not vals["step"] > 0:
            _fail(f"{p}.step", f"must be > 0, got {vals['step']}")
        if vals["min"] > vals["max"]:
            _fail(p, f"empty interval: min {vals['min']} > max {vals['max']}")
        axes[name] = Interval(vals["min"], vals["max"], vals["step"])
    return SearchIntervals(**axes)


def _weights(value: Any):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        w = _number(value, "weights")
        if w < 0:
            _fail("weights", "must be >= 0")
        return w
    rows = _list(value, "weights", len(FINGERS))
    out = []
    for i, row in enumerate(rows):
        row = _list(row, f"weights[{i}]", len(FINGER_SITES))
        vals = [_number(v, f"weights[{i}][{j}]") for j, v in enumerate(row)]
        if any(v < 0 for v in vals):
            _fail(f"weights[{i}]", "must be >= 0")
        out.append(tuple(vals))
    return tuple(out)


def parse_document(doc: Any, seed: int | None = None) -> HandSpec:
    doc = _object(doc, "document", _TOP_KEYS)
    schema = doc.get("schema", SCHEMA)
    if schema != SCHEMA:
        _fail("schema", f"unsupported schema {schema!r}, expected {SCHEMA!r}")

    hand_length = _number(doc.get("hand_length", DEFAULT_HAND_LENGTH), "hand_length", positive=True)
    fractions = _per_digit(doc, "proportions", default_fractions(), positive=True)
    widths = _per_digit(doc, "widths", default_widths(), positive=True)
    for digit, fr in fractions.items():
        for i, f in enumerate(fr):
            if not f < 1.0:
                _fail(f"proportions.{digit}[{i}]", f"fraction {f} outside (0, 1)")
    table = scale_proportions(hand_length, fractions, widths)

    if "placements" in doc:
        placements, offsets, incline = _placements(doc["placements"])
    else:
        placements, offsets, incline = tuple(default_placements()), None, False

    intervals = _intervals(doc.get("search", {}))

    solver = _object(doc.get("solver", {}), "solver", _SOLVER_KEYS)
    ik_kwargs = {}
    for k, v in solver.items():
        integer = k in ("max_iters", "restarts", "stall_iters")
        ik_kwargs[k] = _number(v, f"solver.{k}", integer=integer)
    seed_val = _number(doc.get("seed", 0), "seed", integer=True) if seed is None else int(seed)
    if seed_val < 0:
        _fail("seed", "must be >= 0")
    try:
        ik = IkSettings(seed=seed_val, **ik_kwargs)
    except InvalidInput as exc:
        _fail("solver", str(exc))

    search = SearchSettings(
        ik=ik,
        weights=_weights(doc.get("weights", 1.0)),
        threshold=_number(doc.get("threshold", 20.0), "threshold", positive=True),
        joint_resolution=_number(doc.get("joint_resolution", 3.0), "joint_resolution", positive=True),
        grid_step=_number(doc.get("grid_step", 2.0), "grid_step", positive=True),
    )
    return HandSpec(table, placements, offsets, incline, intervals, search, seed_val, doc)


def load_document(path: str | Path, seed: int | None = None) -> HandSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InvalidInput(f"{path}: cannot read ({exc.strerror})") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return parse_document(doc, seed)


def default_spec(seed: int = 0) -> HandSpec:
    return parse_document({}, seed)


def weights_array(spec: HandSpec) -> np.ndarray:
    return np.broadcast_to(np.asarray(spec.search.weights, dtype=float), (len(FINGERS), len(FINGER_SITES)))
