"""Scenario documents, the generator, and the command-line front end."""

import json

import pytest

from lanesim import cli
from lanesim.model import InvalidModel, MalformedDocument, build_system
from lanesim.scenario import (
    dump_scenario,
    generate_scenario,
    load_scenario,
    parse_scenario,
    scenario_violations,
)
from lanesim.timing import ProcessorState

from conftest import proc_fault, scenario_doc, triplex_system


def _messages(doc):
    with pytest.raises(InvalidModel) as err:
        parse_scenario(doc)
    return [v.message for v in err.value.violations]


def test_parse_scenario_happy_path():
    sc = parse_scenario(scenario_doc([proc_fault()]))
    assert sc.settings.seed == 1
    assert sc.settings.horizon_us == 200000
    assert len(sc.faults) == 1
    assert sc.faults[0].target.lane == 0


def test_format_version_is_mandatory():
    doc = scenario_doc([])
    del doc["format_version"]
    with pytest.raises(MalformedDocument):
        parse_scenario(doc)
    doc["format_version"] = 2
    with pytest.raises(MalformedDocument):
        parse_scenario(doc)


def test_unknown_fault_kind_is_malformed():
    doc = scenario_doc([{"at_ms": 10, "kind": "gremlin",
                         "target": {"kind": "lane", "lane": 0}}])
    with pytest.raises(MalformedDocument):
        parse_scenario(doc)


def test_target_requires_its_coordinates():
    doc = scenario_doc([{"at_ms": 10, "kind": "permanent",
                         "target": {"kind": "processor", "lane": 0}}])
    with pytest.raises(MalformedDocument):
        parse_scenario(doc)


def test_transient_needs_a_duration():
    doc = scenario_doc([{"at_ms": 10, "kind": "transient",
                         "target": {"kind": "lane", "lane": 0}}])
    assert any("duration" in m for m in _messages(doc))


def test_permanent_must_not_have_a_duration():
    doc = scenario_doc([proc_fault(duration_ms=5)])
    assert any("duration" in m for m in _messages(doc))


def test_byzantine_needs_a_skew():
    doc = scenario_doc([{"at_ms": 10, "kind": "byzantine",
                         "target": {"kind": "task", "lane": 0, "proc": 0,
                                    "app": 1, "task": 1}}])
    assert any("value_skew" in m for m in _messages(doc))


def test_sensor_faults_are_never_byzantine():
    doc = scenario_doc([{"at_ms": 10, "kind": "byzantine", "value_skew": 2.0,
                         "target": {"kind": "sensor", "app": 1, "lane": 0}}])
    assert any("byzantine" in m for m in _messages(doc))


def test_fault_must_fire_before_the_horizon():
    doc = scenario_doc([proc_fault(at_ms=250)], horizon_ms=200)
    assert any("horizon" in m for m in _messages(doc))


def test_fault_references_must_resolve():
    assert any("unknown lane" in m
               for m in _messages(scenario_doc([proc_fault(lane=7)])))
    doc = scenario_doc([{"at_ms": 10, "kind": "permanent",
                         "target": {"kind": "task", "lane": 0, "proc": 0,
                                    "app": 9, "task": 1}}])
    assert any("unknown app" in m for m in _messages(doc))


def test_approval_references_must_resolve():
    doc = scenario_doc([], policies={"pilot_gate": True,
                                     "pilot_approvals": [{"at_ms": 10,
                                                          "lane": 9}]})
    assert any("unknown lane" in m for m in _messages(doc))


def test_settings_bounds():
    doc = scenario_doc([])
    doc["sim"]["bit_detect_probability"] = 1.5
    assert any("bit_detect_probability" in m for m in _messages(doc))
    doc = scenario_doc([])
    doc["sim"]["horizon_ms"] = 0
    assert any("horizon" in m for m in _messages(doc))


def test_violations_list_is_empty_for_a_clean_scenario():
    sc = parse_scenario(scenario_doc([proc_fault()]))
    assert scenario_violations(sc) == []


# --- the generator ------------------------------------------------


def test_generator_is_deterministic_per_seed():
    a = generate_scenario(lanes=3, procs=3, apps=2, seed=42, faults=3)
    b = generate_scenario(lanes=3, procs=3, apps=2, seed=42, faults=3)
    assert dump_scenario(a) == dump_scenario(b)
    c = generate_scenario(lanes=3, procs=3, apps=2, seed=43, faults=3)
    assert dump_scenario(a) != dump_scenario(c)


def test_generated_documents_parse_cleanly():
    for seed in range(6):
        doc = generate_scenario(lanes=2 + seed % 3, procs=3, apps=2,
                                seed=seed, faults=seed % 4)
        sc = parse_scenario(doc)
        assert scenario_violations(sc) == []


def test_generated_utilization_respects_the_target():
    doc = generate_scenario(lanes=3, procs=4, apps=3,
                            target_utilization=0.6, seed=5)
    model = build_system(doc["system"])
    per_proc = {}
    for app in model.applications:
        for task in app.tasks:
            state = per_proc.setdefault(task.initial_proc, ProcessorState())
            per_proc[task.initial_proc] = state.with_task(
                (app.app_id, task.task_id), task.wcet_us, task.period_us,
                task.deadline_us)
    assert per_proc
    for state in per_proc.values():
        assert state.utilization <= model.timing.effective_bound


def test_infeasible_generation_overloads_and_disables_admission():
    doc = generate_scenario(lanes=3, procs=3, apps=2, seed=3,
                            infeasible=True)
    assert doc["sim"]["enforce_admission"] is False
    model = build_system(doc["system"])
    per_proc = {}
    for app in model.applications:
        for task in app.tasks:
            state = per_proc.setdefault(task.initial_proc, ProcessorState())
            per_proc[task.initial_proc] = state.with_task(
                (app.app_id, task.task_id), task.wcet_us, task.period_us,
                task.deadline_us)
    assert all(state.utilization > 1 for state in per_proc.values())


def test_zero_utilization_target_means_no_applications():
    doc = generate_scenario(lanes=3, procs=3, apps=2, target_utilization=0,
                            seed=0)
    assert doc["system"]["applications"] == []


def test_generator_validates_its_arguments():
    with pytest.raises(ValueError):
        generate_scenario(lanes=1)
    with pytest.raises(ValueError):
        generate_scenario(lanes=5)
    with pytest.raises(ValueError):
        generate_scenario(procs=1)
    with pytest.raises(ValueError):
        generate_scenario(apps=0)


def test_requested_fault_count_is_honoured():
    doc = generate_scenario(lanes=3, procs=3, apps=2, seed=9, faults=4)
    assert len(doc["faults"]) == 4
    ats = [f["at_ms"] for f in doc["faults"]]
    assert ats == sorted(ats)


# --- files and the CLI ------------------------------------------------


def _write_scenario(tmp_path, name="case.json", faults=None):
    path = tmp_path / name
    doc = scenario_doc(faults if faults is not None else [proc_fault()])
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def test_load_scenario_round_trip(tmp_path):
    path = _write_scenario(tmp_path)
    sc = load_scenario(path)
    assert len(sc.model.applications) == 3


def test_validate_reports_shape(tmp_path, capsys):
    path = _write_scenario(tmp_path)
    assert cli.main(["validate", str(path)]) == 0
    out = capsys.readouterr().out
    assert "OK" in out
    assert "3 lanes" in out and "3 applications" in out and "1 faults" in out


def test_validate_rejects_bad_json(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    assert cli.main(["validate", str(path)]) == 2
    assert "cannot parse" in capsys.readouterr().err


def test_validate_rejects_invalid_model(tmp_path, capsys):
    doc = scenario_doc([proc_fault(lane=9)])
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    assert cli.main(["validate", str(path)]) == 1
    assert "unknown lane" in capsys.readouterr().err


def test_missing_file_is_a_parse_error(tmp_path, capsys):
    assert cli.main(["validate", str(tmp_path / "absent.json")]) == 2


def test_run_writes_the_three_reports(tmp_path, capsys):
    path = _write_scenario(tmp_path)
    out_dir = tmp_path / "out"
    assert cli.main(["run", str(path), "--out-dir", str(out_dir)]) == 0
    metrics = json.loads((out_dir / "metrics.json").read_text())
    assert metrics["format_version"] == 1
    assert metrics["summary"]["readmitted"] == 1
    assert metrics["records"][0]["t_a_ms"] == 120.0
    assert metrics["records"][0]["placements"] == {"1": [0, 3]}

    trace = (out_dir / "trace.tsv").read_text().splitlines()
    assert trace[0] == "# format_version=1"
    assert trace[1].split("\t") == ["time_us", "kind", "lane", "proc",
                                    "app", "task", "detail"]
    assert any("Detection" in line for line in trace)

    coverage = (out_dir / "coverage.csv").read_text().splitlines()
    assert coverage[0] == "time_us,app,functional,zonal,peripheral"
    assert "0,1,triplex,triplex,triplex" in coverage

    stdout = capsys.readouterr().out
    assert "1 readmitted" in stdout
    assert "wrote" in stdout


def test_run_overrides_horizon_and_seed(tmp_path):
    path = _write_scenario(tmp_path, faults=[])
    out_dir = tmp_path / "out"
    assert cli.main(["run", str(path), "--out-dir", str(out_dir),
                     "--horizon-ms", "80", "--seed", "9"]) == 0
    metrics = json.loads((out_dir / "metrics.json").read_text())
    assert metrics["horizon_ms"] == 80.0
    assert metrics["seed"] == 9


def test_out_dir_environment_fallback(tmp_path, monkeypatch, capsys):
    path = _write_scenario(tmp_path)
    env_dir = tmp_path / "from-env"
    monkeypatch.setenv(cli.OUT_DIR_ENV, str(env_dir))
    assert cli.main(["run", str(path)]) == 0
    assert (env_dir / "metrics.json").exists()


def test_generate_round_trips_through_the_cli(tmp_path, capsys):
    out = tmp_path / "generated.json"
    assert cli.main(["generate", "--seed", "4", "--faults", "2",
                     "-o", str(out)]) == 0
    doc = json.loads(out.read_text())
    sc = parse_scenario(doc)
    assert scenario_violations(sc) == []
    assert len(sc.faults) == 2


def test_generate_to_stdout(capsys):
    assert cli.main(["generate", "--seed", "4"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["format_version"] == 1


def test_batch_runs_every_scenario(tmp_path, capsys):
    _write_scenario(tmp_path, name="a.json")
    _write_scenario(tmp_path, name="b.json", faults=[])
    out_root = tmp_path / "runs"
    assert cli.main(["batch", str(tmp_path), "--out-dir",
                     str(out_root)]) == 0
    assert (out_root / "a" / "metrics.json").exists()
    assert (out_root / "b" / "trace.tsv").exists()
    assert "batch: 2/2 scenarios completed" in capsys.readouterr().out


def test_batch_reports_the_worst_failure(tmp_path, capsys):
    _write_scenario(tmp_path, name="good.json")
    (tmp_path / "bad.json").write_text("{!", encoding="utf-8")
    out_root = tmp_path / "runs"
    assert cli.main(["batch", str(tmp_path), "--out-dir",
                     str(out_root)]) == 2
    out = capsys.readouterr().out
    assert "parse error" in out
    assert "batch: 1/2 scenarios completed" in out
    assert (out_root / "good" / "metrics.json").exists()


def test_batch_with_no_scenarios_is_an_error(tmp_path, capsys):
    assert cli.main(["batch", str(tmp_path)]) == 2
