import dataclasses
import json

import pytest
from fastapi.testclient import TestClient

from mdt_agents.agents.backends import BackendKind
from mdt_agents.case import case_to_dict
from mdt_agents.errors import ConfigError
from mdt_agents.gateway.cli import main
from mdt_agents.gateway.config import PipelineSettings, ServiceSettings, config_fingerprint
from mdt_agents.gateway.service import create_app, validate_case_doc
from mdt_agents.gateway.store import RunStatus, RunStore
from mdt_agents.rules import Comparator, LabRule

from conftest import CORE_CONFLICT, make_case, scripted_config, transcript, wait_for_run

TRANSCRIPTS = {
    "CASE-1": transcript(),
    "CONFLICT-1": transcript(endo="Lesion confined to the submucosa.", rad="Findings: cT3N1M0.", core=CORE_CONFLICT),
    "DOWN-1": {role: {"error": "transport"} for role in ("text", "endoscopy", "radiology", "laboratory", "core")},
}


@pytest.fixture
def workspace(tmp_path):
    (tmp_path / "transcripts.json").write_text(json.dumps(TRANSCRIPTS))
    (tmp_path / "case.json").write_text(json.dumps(case_to_dict(make_case())))
    (tmp_path / "conflict.json").write_text(json.dumps(case_to_dict(make_case("CONFLICT-1"))))
    return tmp_path


def client_for(tmp_path, rules, **kw):
    cfg = dataclasses.replace(scripted_config(TRANSCRIPTS), core_max_retries=0)
    cfg = dataclasses.replace(cfg, agents={m: dataclasses.replace(s, max_retries=0) for m, s in cfg.agents.items()})
    store = RunStore(tmp_path / "runs")
    return TestClient(create_app(cfg, rules, store, **kw)), store


# settings ------------------------------------------------------------------------


def test_settings_load_resolves_relative_paths(workspace):
    (workspace / "rules.csv").write_text(
        "rule_id,treatment_keyword,analyte,comparator,threshold,unit,message\n"
        "X1,chemotherapy,ANC,LT,1.5,10^9/L,neutropenia\n"
    )
    (workspace / "pipeline.json").write_text(json.dumps({
        "pipeline": {
            "backend": {"kind": "scripted_mock", "transcripts": "transcripts.json"},
            "rules": "rules.csv",
            "two_pass_plan_check": False,
            "enabled_agents": ["text", "radiology", "laboratory"],
        },
        "service": {"max_concurrent": 2},
    }))
    settings = PipelineSettings.load(workspace / "pipeline.json")
    assert settings.backend.transcripts == str(workspace / "transcripts.json")
    config, rules = settings.build()
    assert [r.rule_id for r in rules] == ["X1"]
    assert config.two_pass_plan_check is False
    assert ServiceSettings.load(workspace / "pipeline.json").max_concurrent == 2


def test_settings_validation():
    with pytest.raises(ConfigError):
        PipelineSettings.from_dict({})
    with pytest.raises(ConfigError):
        PipelineSettings.from_dict({"backend": {"kind": "carrier_pigeon"}})
    with pytest.raises(ConfigError):
        PipelineSettings.from_dict({"backend": {"kind": "remote_chat"}})
    with pytest.raises(ConfigError):
        PipelineSettings.from_dict({"backend": {"kind": "scripted_mock"}, "enabled_agents": ["smell"]})
    with pytest.raises(ConfigError):
        ServiceSettings.from_dict({"max_concurrent": 0})


def test_mocked_replaces_every_backend():
    remote = PipelineSettings.from_dict({
        "backend": {"kind": "remote_chat", "endpoint": "http://x/v1", "model_name": "m"},
        "core_backend": {"kind": "remote_chat", "endpoint": "http://y/v1", "model_name": "c"},
        "parallel": False,
    })
    mocked = remote.mocked("t.json")
    assert mocked.backend.kind is BackendKind.SCRIPTED_MOCK and mocked.core_backend is None
    assert mocked.parallel is False


def test_fingerprint_tracks_rules_and_flags(rules):
    cfg = scripted_config(TRANSCRIPTS)
    base = config_fingerprint(cfg, rules)
    assert base == config_fingerprint(scripted_config(TRANSCRIPTS), rules)
    assert base != config_fingerprint(cfg.without_conflict_detection(), rules)
    extra = LabRule("X9", "resection", "ALB", Comparator.LT, 25, "g/L", "low albumin")
    assert base != config_fingerprint(cfg, rules.with_rule(extra))


# store ---------------------------------------------------------------------------


def test_store_is_append_only(tmp_path):
    store = RunStore(tmp_path)
    run_id = store.create({"case_id": "A"}, "fp")
    assert store.status(run_id) is RunStatus.PENDING and not store.started(run_id)
    store.mark_running(run_id)
    assert store.started(run_id)
    store.put_result(run_id, '{"x": 1}', "ctx", [])
    assert store.status(run_id) is RunStatus.DONE
    with pytest.raises(FileExistsError):
        store.put_result(run_id, '{"x": 2}', "ctx", [])
    assert store.read_bytes(run_id, "report.json") == b'{"x": 1}'
    assert [p.name for p in (tmp_path / run_id).iterdir() if p.name.startswith(".")] == []
    with pytest.raises(KeyError):
        store.status("../etc")
    assert store.run_ids() == [run_id]


# validation ----------------------------------------------------------------------


@pytest.mark.parametrize(
    "doc, field",
    [
        ({}, "/"),
        ({"case_id": ""}, "/case_id"),
        ({"case_id": "A", "lab_panel": {"results": [{"analyte": "ANC"}]}}, "/lab_panel/results/0"),
        ({"case_id": "A", "endoscopy": {"frames": ["f"] * 200}}, "/endoscopy/frames"),
        ({"case_id": "A", "surprise": 1}, "/"),
    ],
)
def test_schema_errors_name_fields(doc, field):
    errors = validate_case_doc(doc)
    assert errors and errors[0]["field"] == field


def test_valid_case_passes_schema():
    assert validate_case_doc(case_to_dict(make_case())) == []


# service -------------------------------------------------------------------------


def test_concordant_run(tmp_path, rules):
    client, store = client_for(tmp_path, rules)
    with client:
        r = client.post("/cases", json=case_to_dict(make_case()))
        assert r.status_code == 202 and r.json()["status"] == "pending"
        body = wait_for_run(client, r.json()["run_id"])
        assert body["status"] == "done" and body["report"]["flags"] == []
        assert body["case_id"] == "CASE-1" and len(body["config_fingerprint"]) == 64


def test_conflict_run_and_artifacts(tmp_path, rules):
    client, store = client_for(tmp_path, rules)
    with client:
        run_id = client.post("/cases", json=case_to_dict(make_case("CONFLICT-1"))).json()["run_id"]
        assert wait_for_run(client, run_id)["status"] == "done"
        report = client.get(f"/runs/{run_id}/report")
        assert report.content == (tmp_path / "runs" / run_id / "report.json").read_bytes()
        assert [f["kind"] for f in report.json()["flags"]] == ["StagingDiscrepancy"]
        context = client.get(f"/runs/{run_id}/context")
        assert context.status_code == 200 and "## Radiology Agent" in context.text


def test_malformed_and_unknown(tmp_path, rules):
    client, store = client_for(tmp_path, rules)
    with client:
        r = client.post("/cases", content=b"{not json")
        assert r.status_code == 400
        r = client.post("/cases", json={"case_id": "A", "lab_panel": {"results": [{"analyte": "ANC", "value": "x"}]}})
        assert r.status_code == 400 and r.json()["fields"][0]["field"] == "/lab_panel/results/0/value"
        assert store.run_ids() == []
        assert client.get("/runs/" + "0" * 32).status_code == 404
        assert client.get("/runs/nope/report").status_code == 404


def test_backend_outage_is_failed_with_diagnostics(tmp_path, rules):
    client, store = client_for(tmp_path, rules)
    with client:
        run_id = client.post("/cases", json=case_to_dict(make_case("DOWN-1"))).json()["run_id"]
        body = wait_for_run(client, run_id)
        assert body["status"] == "failed"
        assert body["error"]["error"] and body["error"]["diagnostics"]
        assert client.get(f"/runs/{run_id}/report").status_code == 409
        assert "unavailable" in client.get(f"/runs/{run_id}/context").text


def test_burst_is_fifo_and_complete(tmp_path, rules):
    client, store = client_for(tmp_path, rules, max_concurrent=1)
    with client:
        ids = [client.post("/cases", json=case_to_dict(make_case())).json()["run_id"] for _ in range(12)]
        bodies = [wait_for_run(client, i) for i in ids]
    assert [b["status"] for b in bodies] == ["done"] * 12
    started = [store.read_json(i, "started.json")["started_at"] for i in ids]
    assert started == sorted(started)


def test_auth_token(tmp_path, rules):
    client, _ = client_for(tmp_path, rules, auth_token="s3cret")
    with client:
        assert client.get("/health").status_code == 200
        assert client.post("/cases", json=case_to_dict(make_case())).status_code == 401
        ok = client.post("/cases", json=case_to_dict(make_case()), headers={"Authorization": "Bearer s3cret"})
        assert ok.status_code == 202


# cli -----------------------------------------------------------------------------


def test_cli_run_writes_report(workspace, capsys):
    out = workspace / "out"
    assert main(["run", "--case", str(workspace / "conflict.json"), "--mock", str(workspace / "transcripts.json"),
                 "--out", str(out)]) == 0
    report = json.loads((out / "CONFLICT-1" / "report.json").read_text())
    assert report["deferral"] is True
    assert (out / "fingerprint.txt").read_text().strip()


def test_cli_run_text_to_stdout(workspace, capsys):
    assert main(["run", str(workspace / "case.json"), "--mock", str(workspace / "transcripts.json"),
                 "--format", "text"]) == 0
    assert "Diagnosis" in capsys.readouterr().out


def test_cli_errors(workspace, capsys):
    assert main(["run", "--case", str(workspace / "missing.json"), "--mock", str(workspace / "transcripts.json")]) == 2
    assert main(["run", "--case", str(workspace / "case.json")]) == 2
    assert "error:" in capsys.readouterr().err


def test_cli_evaluate_table2(capsys):
    from pathlib import Path

    cards = Path(__file__).parent / "fixtures" / "table2_cards.csv"
    assert main(["evaluate", "--cards", str(cards)]) == 0
    out = capsys.readouterr().out
    assert "3.76" in out and "4.60" in out


def test_cli_gen_sweep_split(tmp_path, capsys):
    assert main(["gen", "8", "--seed", "3", "--out", str(tmp_path / "syn")]) == 0
    expected = json.loads((tmp_path / "syn" / "expected.json").read_text())
    assert len(expected) == 8
    assert main(["sweep", str(tmp_path / "syn" / "cases"), "--mock", str(tmp_path / "syn" / "transcripts"),
                 "--out", str(tmp_path / "sweep")]) == 0
    assert len((tmp_path / "sweep" / "sweep.csv").read_text().splitlines()) > 1
    ids = tmp_path / "ids.txt"
    ids.write_text("\n".join(f"P{i}" for i in range(2174)))
    capsys.readouterr()
    assert main(["split", "--ids", str(ids), "--seed", "7", "--out", str(tmp_path / "split.json")]) == 0
    assert capsys.readouterr().out.strip() == "train=1500 val=174 test=500"


def test_cli_curate_pipeline(tmp_path, capsys):
    cases = [make_case(f"G{i}", ground_truth_report="Diagnosis: cT3N0M0.\nPlan: resection.") for i in range(4)]
    (tmp_path / "cases.json").write_text(json.dumps([case_to_dict(c) for c in cases]))
    teacher = {
        f"G{i}": {
            "teacher.text": "Epigastric pain.",
            "teacher.endoscopy": "Antral mass.",
            "teacher.radiology": "cT1N0M0." if i == 0 else "cT3N0M0.",
            "teacher.laboratory": "CEA 3.1, ANC 3.2.",
        }
        for i in range(4)
    }
    (tmp_path / "teacher.json").write_text(json.dumps(teacher))
    (tmp_path / "split.json").write_text(json.dumps({"train": ["G0", "G1", "G2"], "validation": [], "test": ["G3"]}))

    def run(*argv):
        return main(["curate", *map(str, argv)])

    assert run("decompose", "--cases", tmp_path / "cases.json", "--teacher-transcripts", tmp_path / "teacher.json",
               "--out", tmp_path / "s1.jsonl") == 0
    assert run("filter", "--cases", tmp_path / "cases.json", "--samples", tmp_path / "s1.jsonl",
               "--out", tmp_path / "s2.jsonl") == 0
    assert "15 passed, 1 rejected" in capsys.readouterr().out
    assert run("audit", "--samples", tmp_path / "s2.jsonl", "--out", tmp_path / "s3.jsonl") == 0
    assert len(capsys.readouterr().out.split()) == 2
    assert run("export", "--samples", tmp_path / "s3.jsonl", "--split", tmp_path / "split.json",
               "--out", tmp_path / "train.jsonl") == 2
    assert "G3" in capsys.readouterr().err
    train_only = [line for line in (tmp_path / "s3.jsonl").read_text().splitlines() if '"G3"' not in line]
    (tmp_path / "s4.jsonl").write_text("\n".join(train_only) + "\n")
    assert run("export", "--samples", tmp_path / "s4.jsonl", "--split", tmp_path / "split.json",
               "--out", tmp_path / "train.jsonl") == 0
    assert len((tmp_path / "train.jsonl").read_text().splitlines()) == 11
