import csv
import io
import json

import numpy as np
import pytest

from handforge.cli import EXIT_INFEASIBLE, EXIT_INPUT, EXIT_OK, main
from handforge.config import default_spec, load_document, parse_document
from handforge.errors import InvalidInput
from handforge.export import CSV_COLUMNS, candidates_csv, export_cloud, read_ply
from handforge.gestures import GESTURES, gesture_pose
from handforge.hand import FINGERS, ThumbBase, default_hand
from handforge.opposability import WorkspaceGrid, grid_for_hand, sample_workspace
from handforge.selection import CandidateRecord

# One-point search at the base the default sweep selects.
ONE_POINT = {
    "schema": "handforge/1",
    "search": {
        "x": {"min": 4, "max": 4, "step": 1},
        "y": {"min": -7, "max": -7, "step": 1},
        "z": {"min": -1, "max": -1, "step": 1},
        "theta_z": {"min": 45, "max": 50, "step": 5},
    },
    "joint_resolution": 6,
}


def write_doc(tmp_path, doc, name="spec.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


# --- document parsing ----------------------------------------------------------


def test_empty_document_is_the_default_hand():
    spec = parse_document({})
    assert spec.build_hand().same_structure(default_hand())
    assert spec.search.threshold == 20.0 and spec.search.grid_step == 2.0


@pytest.mark.parametrize(
    "doc, field",
    [
        ({"search": {"x": {"min": 5, "max": 4, "step": 1}}}, "search.x"),
        ({"search": {"theta_z": {"min": 0, "max": 4, "step": 0}}}, "search.theta_z.step"),
        ({"search": {"y": {"min": 0, "max": "a", "step": 1}}}, "search.y.max"),
        ({"hand_length": -3}, "hand_length"),
        ({"proportions": {"index": [0.2, 0.1]}}, "proportions.index"),
        ({"proportions": {"index": [0.2, 0.1, 1.5]}}, "proportions.index[2]"),
        ({"widths": {"pinky": [1, 1, 1]}}, "widths"),
        ({"weights": [[1, 1, 1, 1]] * 3}, "weights"),
        ({"weights": [[1, 1, 1, -1]] * 4}, "weights[0]"),
        ({"solver": {"tol": 0}}, "solver"),
        ({"solver": {"restarts": 2.5}}, "solver.restarts"),
        ({"placements": {"generate": {"offsets": {"index": 15, "middle": 0, "ring": -15}}}}, "placements.generate.offsets"),
        ({"placements": [{"finger": "index", "position": [0, 0]}]}, "placements"),
        ({"schema": "handforge/0"}, "schema"),
        ({"colour": "red"}, "document"),
        ({"seed": -1}, "seed"),
    ],
)
def test_errors_name_the_field(doc, field):
    with pytest.raises(InvalidInput) as exc:
        parse_document(doc)
    assert str(exc.value).startswith(field + ":")


def test_malformed_json_reports_line_and_column(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "seed": 1,\n  oops\n}')
    with pytest.raises(InvalidInput) as exc:
        load_document(p)
    assert f"{p}:3:3" in str(exc.value)


def test_generated_placements_follow_the_circle():
    doc = {"placements": {"generate": {"offsets": {"index": 15, "middle": 0, "ring": -15, "little": -30}, "incline": False}}}
    hand = parse_document(doc).build_hand()
    centre = np.array([127.5 - 67.0, 0.0])
    for f in FINGERS:
        tip = hand.fingers[f].base.translation[:2]
        assert np.linalg.norm(tip - centre) < 67.0


def test_seed_override():
    assert parse_document({"seed": 4}).seed == 4
    assert parse_document({"seed": 4}, seed=9).search.ik.seed == 9


# --- exports --------------------------------------------------------------------


def test_empty_layer_gives_valid_zero_point_file(tmp_path):
    g = WorkspaceGrid.from_bounds([0, 0, 0], [20, 20, 20], 2.0)
    g.layers[("index", "TIP")] = g.empty_layer()
    for fmt in ("ply", "csv"):
        path = tmp_path / f"e.{fmt}"
        assert export_cloud(g, "index", "TIP", path, fmt) == 0
    assert read_ply((tmp_path / "e.ply").read_bytes()).shape == (0, 3)
    assert (tmp_path / "e.csv").read_text() == "x,y,z\n"


def test_single_cell_layer_gives_its_centre(tmp_path):
    g = WorkspaceGrid.from_bounds([0, 0, 0], [20, 20, 20], 2.0)
    g.set_cells(("thumb", "PULP"), np.array([[5, 5, 5]]))
    assert export_cloud(g, "thumb", "PULP", tmp_path / "one.ply") == 1
    np.testing.assert_array_equal(read_ply((tmp_path / "one.ply").read_bytes()), [[10.0, 10.0, 10.0]])
    export_cloud(g, "thumb", "PULP", tmp_path / "one.csv", "csv")
    assert (tmp_path / "one.csv").read_text().splitlines()[1] == "10.0,10.0,10.0"


def test_point_count_equals_occupied_cells(tmp_path):
    hand = default_hand()
    g = grid_for_hand(hand)
    sample_workspace(hand, "middle", "DIP", 5.0, g)
    n = export_cloud(g, "middle", "DIP", tmp_path / "m.ply")
    assert n == g.count(("middle", "DIP")) > 0
    pts = read_ply((tmp_path / "m.ply").read_bytes())
    assert len(pts) == n
    np.testing.assert_allclose(np.sort(pts, axis=0), np.sort(g.cell_centers(("middle", "DIP")), axis=0), atol=1e-4)


def test_ply_header_is_binary_little_endian(tmp_path):
    g = WorkspaceGrid.from_bounds([0, 0, 0], [4, 4, 4], 2.0)
    g.set_cells(("ring", "MCP"), np.array([[1, 1, 1], [2, 1, 0]]))
    export_cloud(g, "ring", "MCP", tmp_path / "r.ply")
    data = (tmp_path / "r.ply").read_bytes()
    assert b"format binary_little_endian 1.0\nelement vertex 2\n" in data
    assert len(data) - data.index(b"end_header\n") - len(b"end_header\n") == 2 * 3 * 4


def test_unknown_layer_or_format(tmp_path):
    g = WorkspaceGrid.from_bounds([0, 0, 0], [4, 4, 4], 2.0)
    with pytest.raises(InvalidInput):
        export_cloud(g, "index", "PULP", tmp_path / "x.ply")
    with pytest.raises(InvalidInput):
        export_cloud(g, "index", "TIP", tmp_path / "x.obj", "obj")


def test_candidate_table_columns():
    recs = [
        CandidateRecord(ThumbBase(12, 2, -5, 45), True, 0.196, 12.252, True),
        CandidateRecord(ThumbBase(8, 2, -5, 50), False),
    ]
    rows = list(csv.reader(io.StringIO(candidates_csv(recs))))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert rows[1] == ["12.0", "2.0", "-5.0", "45.0", "true", "0.196", "12.252", "true"]
    assert rows[2] == ["8.0", "2.0", "-5.0", "50.0", "false", "", "", "false"]


# --- gestures --------------------------------------------------------------------


def test_pointing():
    pose = gesture_pose("pointing")
    assert pose.fingers["index"] == 0.0
    assert [pose.fingers[f] for f in ("middle", "ring", "little")] == [90.0] * 3
    assert any(v > 0 for v in pose.thumb)


def test_open_hand():
    pose = gesture_pose("open-hand")
    assert all(v == 0.0 for vs in pose.joint_vectors().values() for v in vs)


def test_unknown_gesture():
    with pytest.raises(InvalidInput):
        gesture_pose("wave")


def test_all_gestures_fit_the_default_hand():
    hand = default_hand()
    assert {f"chinese-{k}" for k in range(1, 11)} <= set(GESTURES)
    for pose in GESTURES.values():
        pose.check(hand)


# --- command line ------------------------------------------------------------------


def test_gesture_flag(capsys):
    assert main(["--gesture", "count-3"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["joints_deg"]["index"] == [0.0] and out["joints_deg"]["ring"] == [90.0]


def test_unknown_gesture_exit_code(capsys):
    assert main(["--gesture", "wave"]) == EXIT_INPUT
    assert "wave" in capsys.readouterr().err


def test_bad_document_exit_code(tmp_path, capsys):
    p = write_doc(tmp_path, {"search": {"x": {"min": 5, "max": 1, "step": 1}}})
    assert main(["--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_INPUT
    assert "search.x" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["--config", str(tmp_path / "nope.json")]) == EXIT_INPUT


def test_bad_thread_count(tmp_path, monkeypatch):
    monkeypatch.setenv("HANDFORGE_THREADS", "zero")
    p = write_doc(tmp_path, ONE_POINT)
    assert main(["--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_INPUT


@pytest.fixture(scope="module")
def small_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("runs")
    p = write_doc(base, ONE_POINT)
    codes = []
    for name, extra in (("a", []), ("b", []), ("t", ["--threshold", "1"])):
        codes.append(main(["--config", str(p), "--out", str(base / name), "--export-clouds", *extra]))
    return base, codes


def test_small_run_succeeds(small_runs):
    base, codes = small_runs
    assert codes[0] == EXIT_OK
    summary = json.loads((base / "a" / "best_base.json").read_text())
    assert summary["candidates"] == 2
    best = summary["best"]
    assert (best["x_mm"], best["y_mm"], best["z_mm"], best["theta_z_deg"]) == (4, -7, -1, 45)
    assert best["kapandji_pass"] and len(best["kapandji"]) == 16
    assert len(list((base / "a" / "clouds").glob("*.ply"))) == 17


def test_outputs_are_byte_identical(small_runs):
    base, _ = small_runs
    for rel in ["candidates.csv", "best_base.json", *(f"clouds/{p.name}" for p in (base / "a" / "clouds").iterdir())]:
        assert (base / "a" / rel).read_bytes() == (base / "b" / rel).read_bytes(), rel


def test_infeasible_threshold_still_writes_table(small_runs):
    base, codes = small_runs
    assert codes[2] == EXIT_INFEASIBLE
    rows = (base / "t" / "candidates.csv").read_text().splitlines()
    assert len(rows) == 3
    assert json.loads((base / "t" / "best_base.json").read_text())["best"] is None


def test_rerun_resumes_from_checkpoint(small_runs, monkeypatch):
    base, _ = small_runs
    import handforge.selection as sel

    def boom(*a, **k):
        raise AssertionError("candidate re-evaluated")

    monkeypatch.setattr(sel, "evaluate_candidate", boom)
    assert main(["--config", str(base / "spec.json"), "--out", str(base / "a")]) == EXIT_OK


def test_default_spec_box():
    spec = default_spec()
    assert len(spec.intervals.x.values()) * len(spec.intervals.theta_z.values()) == 20
