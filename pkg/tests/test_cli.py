import json

import pytest

from mrap import cli

FAST_BUNDLED = ["fig3.json", "minefield-random.json", "routing-demo.json", "beating.json"]


def _run(argv, capsys):
    code = cli.main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def _strip_timestamp(path):
    report = json.loads(path.read_text())
    report.pop("generated_at")
    return report


@pytest.mark.parametrize("name", cli.BUNDLED)
def test_bundled_configs_validate(name, capsys):
    code, out, _ = _run(["validate", name], capsys)
    assert code == 0
    assert json.loads(out)["status"] == "valid"


@pytest.mark.parametrize("name", FAST_BUNDLED)
def test_bundled_configs_run(name, tmp_path, capsys):
    # fig4.json is run by the acceptance suite
    code, out, err = _run(["run", name, "--out", str(tmp_path)], capsys)
    assert code == 0, err
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["schema_version"] == 1
    for f in report["files"]:
        assert (tmp_path / f).stat().st_size > 0


def test_fig3_config_result(tmp_path, capsys):
    _run(["run", "fig3.json", "--out", str(tmp_path)], capsys)
    res = json.loads((tmp_path / "report.json").read_text())["result"]
    assert res["final_populations"]["11_j"] == pytest.approx(0.5, abs=1e-3)
    assert res["final_populations"]["TT_j"] == pytest.approx(0.5, abs=1e-3)
    assert res["forbidden_peak"] < 1e-3
    header = (tmp_path / "trajectory.csv").read_text().splitlines()[0]
    assert header.startswith("t/T,")


def test_routing_demo_result(tmp_path, capsys):
    _run(["run", "routing-demo.json", "--out", str(tmp_path)], capsys)
    res = json.loads((tmp_path / "report.json").read_text())["result"]
    assert res["collision_count"] == 0
    assert res["skipped_rounds"] == [4]
    assert res["refused_rounds"] == []
    assert (tmp_path / "delta_sweep.csv").exists()


def test_reports_are_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    _run(["run", "minefield-random.json", "--out", str(a)], capsys)
    _run(["run", "minefield-random.json", "--out", str(b)], capsys)
    assert _strip_timestamp(a / "report.json") == _strip_timestamp(b / "report.json")
    assert (a / "detections.csv").read_bytes() == (b / "detections.csv").read_bytes()


def test_seed_override_changes_draws(tmp_path, capsys):
    _run(["run", "minefield-random.json", "--out", str(tmp_path / "a"), "--seed", "1"], capsys)
    _run(["run", "minefield-random.json", "--out", str(tmp_path / "b"), "--seed", "2"], capsys)
    a = _strip_timestamp(tmp_path / "a" / "report.json")
    b = _strip_timestamp(tmp_path / "b" / "report.json")
    assert a["seed"] == 1 and b["seed"] == 2
    assert a["result"] != b["result"]


def test_output_dir_from_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env-out"))
    code, out, _ = _run(["run", "beating.json"], capsys)
    assert code == 0
    assert (tmp_path / "env-out" / "report.json").exists()


def _write(tmp_path, config):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return str(path)


BASE = {"schema_version": 1, "kind": "evolve", "tree": {"depth": 1, "imaging": True}}


@pytest.mark.parametrize(
    "patch, field",
    [
        ({"tree": {"depth": 0}}, "tree/depth"),
        ({"tree": {"depth": 2, "colour": "red"}}, "tree/colour"),
        ({"kind": "teleport"}, "kind"),
        ({"schedule": {"total_time": -5}}, "schedule/total_time"),
        ({"occlusions": [["1_e", "9_q"]]}, "occlusions/0/1"),
        ({"occlusions": [["1_e", "111_e"]]}, "occlusions/0"),
    ],
)
def test_malformed_config_names_the_field(tmp_path, capsys, patch, field):
    code, _, err = _run(["validate", _write(tmp_path, {**BASE, **patch})], capsys)
    if code == 0:
        # schema-valid but semantically wrong: caught when the run starts
        code, _, err = _run(["run", _write(tmp_path, {**BASE, **patch}),
                             "--out", str(tmp_path)], capsys)
    doc = json.loads(err)
    assert code == cli.EXIT_CONFIG
    assert doc["field"] == field


def test_unknown_receiver_in_routing(tmp_path, capsys):
    config = {**BASE, "kind": "routing", "tree": {"depth": 2, "imaging": True},
              "routing": {"rounds": [{"active": ["111"]}]}}
    code, _, err = _run(["run", _write(tmp_path, config), "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_CONFIG
    assert json.loads(err)["field"] == "routing/rounds/0/active"


def test_too_fast_schedule_exit_code(tmp_path, capsys):
    config = {**BASE, "tree": {"depth": 2, "imaging": True}, "schedule": {"total_time": 100},
              "occlusions": [["1T_i", "1T_j"], ["T1_i", "T1_j"]]}
    code, _, err = _run(["run", _write(tmp_path, config), "--out", str(tmp_path)], capsys)
    doc = json.loads(err)
    assert code == cli.EXIT_ADIABATIC
    assert doc["suggested_total_time"] == 1820.0


def test_oversized_tree_exit_code(tmp_path, capsys):
    config = {**BASE, "kind": "spectrum", "tree": {"depth": 30, "imaging": True}}
    code, _, err = _run(["run", _write(tmp_path, config), "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_SIZE
    assert json.loads(err)["field"] == "tree"


def test_all_blocked_evolve_points_to_no_target(tmp_path, capsys):
    config = {**BASE, "occlusions": [["1_i", "1_j"], ["T_i", "T_j"]]}
    code, _, err = _run(["run", _write(tmp_path, config), "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_NO_TARGET
    assert json.loads(err)["error"] == "NoValidTargetError"


def test_missing_file(capsys):
    code, _, err = _run(["validate", "/nonexistent/config.json"], capsys)
    assert code == cli.EXIT_CONFIG


def test_list_bundled(capsys):
    code, out, _ = _run(["list"], capsys)
    assert code == 0
    assert len(out.splitlines()) == len(cli.BUNDLED)
