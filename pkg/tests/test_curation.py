import logging
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdt_agents.agents.backends import ScriptedBackend
from mdt_agents.case import DatasetSplit, ModalityKind, split_dataset
from mdt_agents.curation import (
    AuditStatus,
    CuratedSample,
    FilterStatus,
    apply_reviews,
    audit_count,
    audit_sample,
    build_decomposition_jobs,
    contradiction_filter,
    export_training_set,
    load_review_file,
    run_decomposition,
    write_jsonl,
)
from mdt_agents.errors import ConfigError, CurationError, SplitContaminationError
from mdt_agents.staging import TnmStage, staging_distance

from conftest import make_case

REPORT_T4 = "Diagnosis: gastric adenocarcinoma, cT4aN1M0.\nPlan: neoadjuvant chemotherapy."
REPORT_T3 = "Diagnosis: gastric adenocarcinoma, cT3N0M0.\nPlan: resection."


def sample(summary, modality=ModalityKind.RADIOLOGY, case_id="C1", **kw):
    return CuratedSample(case_id, modality, "raw input", summary, **kw)


# filter --------------------------------------------------------------------------


def test_filter_rejects_far_staging():
    assert contradiction_filter(sample("Tumour limited, cT1N0M0."), REPORT_T4) is FilterStatus.REJECTED_CONTRADICTION


def test_filter_passes_adjacent_staging():
    assert contradiction_filter(sample("Thickened wall, cT2N0."), REPORT_T3) is FilterStatus.PASSED


def test_filter_passes_without_staging():
    assert contradiction_filter(sample("No staging statement here."), REPORT_T4) is FilterStatus.PASSED


def test_filter_rejects_empty_summary():
    with pytest.raises(CurationError):
        contradiction_filter(sample("   "), REPORT_T4)


def test_filter_lab_value_contradiction():
    panel = make_case().lab_panel
    lab = ModalityKind.LABORATORY
    assert contradiction_filter(sample("CEA 3.1 ng/mL, ANC 3.2.", lab), REPORT_T3, panel) is FilterStatus.PASSED
    assert contradiction_filter(sample("CEA 3.2 ng/mL.", lab), REPORT_T3, panel) is FilterStatus.PASSED
    assert contradiction_filter(sample("CEA 9.8 ng/mL.", lab), REPORT_T3, panel) is FilterStatus.REJECTED_CONTRADICTION
    assert contradiction_filter(sample("CEA 9.8 ng/mL.", lab), REPORT_T3, None) is FilterStatus.PASSED


T_LABELS = ["T0", "Tis", "T1", "T2", "T3", "T4"]


@pytest.mark.parametrize("a", T_LABELS)
@pytest.mark.parametrize("b", T_LABELS)
def test_filter_shares_conflict_oracle(a, b):
    # the filter and the cross-modal detector must agree on every pair
    status = contradiction_filter(sample(f"Estimate c{a}N0M0."), f"Diagnosis: c{b}N0M0.")
    fires = staging_distance(TnmStage(a), TnmStage(b)) > 1
    assert (status is FilterStatus.REJECTED_CONTRADICTION) is fires


# audit ---------------------------------------------------------------------------


def samples_for(n, modalities=tuple(ModalityKind.ordered())):
    return [sample("s", modalities[i % len(modalities)], case_id=f"C{i:04d}") for i in range(n)]


@pytest.mark.parametrize("n, k", [(100, 10), (7, 1), (10, 1), (11, 2), (1, 1)])
def test_audit_counts(n, k):
    picked = audit_sample(samples_for(n), 0.10, seed=0)
    assert sum(s.audit_status is AuditStatus.SAMPLED for s in picked) == k


def test_audit_deterministic_and_seed_sensitive():
    pool = samples_for(200)
    ids = lambda seed: [s.sample_id for s in audit_sample(pool, 0.1, seed) if s.audit_status is AuditStatus.SAMPLED]
    assert ids(5) == ids(5)
    assert ids(5) != ids(6)


def test_audit_balances_modalities():
    picked = [s for s in audit_sample(samples_for(400), 0.1, seed=1) if s.audit_status is AuditStatus.SAMPLED]
    counts = {m: sum(s.modality is m for s in picked) for m in ModalityKind.ordered()}
    assert set(counts.values()) == {10}


@pytest.mark.parametrize("rate", [0, -0.1, 1.5])
def test_audit_rate_validation(rate):
    with pytest.raises(ConfigError):
        audit_count(10, rate)


@given(st.integers(min_value=1, max_value=1000), st.integers(min_value=0, max_value=2**16))
@settings(max_examples=60, deadline=None)
def test_audit_count_property(n, seed):
    picked = audit_sample(samples_for(n), 0.10, seed)
    assert sum(s.audit_status is AuditStatus.SAMPLED for s in picked) == math.ceil(n / 10)


# reviews -------------------------------------------------------------------------


def test_review_file_round_trip(tmp_path):
    pool = audit_sample(samples_for(20), 0.1, seed=0)
    sampled = [s.sample_id for s in pool if s.audit_status is AuditStatus.SAMPLED]
    path = tmp_path / "reviews.csv"
    path.write_text(f"sample_id,verdict\n{sampled[0]},Verified\n{sampled[1]},Rejected\n")
    reviewed = {s.sample_id: s.audit_status for s in apply_reviews(pool, load_review_file(path))}
    assert reviewed[sampled[0]] is AuditStatus.VERIFIED
    assert reviewed[sampled[1]] is AuditStatus.REJECTED


def test_review_errors(tmp_path):
    pool = audit_sample(samples_for(20), 0.1, seed=0)
    unsampled = next(s.sample_id for s in pool if s.audit_status is AuditStatus.NOT_SAMPLED)
    with pytest.raises(CurationError):
        apply_reviews(pool, {"nope:text": AuditStatus.VERIFIED})
    with pytest.raises(CurationError):
        apply_reviews(pool, {unsampled: AuditStatus.VERIFIED})
    bad = tmp_path / "bad.csv"
    bad.write_text("C0001:text,Maybe\n")
    with pytest.raises(CurationError):
        load_review_file(bad)


# export --------------------------------------------------------------------------


def split_with(train, test=()):
    return DatasetSplit(frozenset(train), frozenset(), frozenset(test))


def test_export_keeps_passed_only(tmp_path):
    passed = [sample("ok", case_id=f"T{i}", filter_status=FilterStatus.PASSED) for i in range(10)]
    rejected = [sample("bad", case_id=f"R{i}", filter_status=FilterStatus.REJECTED_CONTRADICTION) for i in range(2)]
    split = split_with([s.case_id for s in passed + rejected])
    records = export_training_set(passed + rejected, split)
    assert len(records) == 10
    assert set(records[0]) == {"instruction", "input", "output", "case_id", "modality"}
    assert write_jsonl(tmp_path / "out.jsonl", records) == 10
    assert len((tmp_path / "out.jsonl").read_text().splitlines()) == 10


def test_export_drops_audit_rejected():
    s = [
        sample("a", case_id="A", filter_status=FilterStatus.PASSED, audit_status=AuditStatus.VERIFIED),
        sample("b", case_id="B", filter_status=FilterStatus.PASSED, audit_status=AuditStatus.REJECTED),
    ]
    assert [r["case_id"] for r in export_training_set(s, split_with(["A", "B"]))] == ["A"]


def test_export_refuses_test_split_sample():
    s = [sample("ok", case_id="TRAIN", filter_status=FilterStatus.PASSED),
         sample("ok", case_id="HELD", filter_status=FilterStatus.PASSED)]
    with pytest.raises(SplitContaminationError) as info:
        export_training_set(s, split_with(["TRAIN"], test=["HELD"]))
    assert info.value.offending == ["HELD"]


def test_export_empty_warns(caplog):
    s = [sample("bad", filter_status=FilterStatus.REJECTED_CONTRADICTION)]
    with caplog.at_level(logging.WARNING):
        assert export_training_set(s, split_with(["C1"])) == []
    assert "empty" in caplog.text


def test_export_requires_filtering():
    with pytest.raises(CurationError):
        export_training_set([sample("x")], split_with(["C1"]))


@given(st.integers(min_value=3, max_value=300), st.integers(min_value=0, max_value=999))
@settings(max_examples=40, deadline=None)
def test_export_split_hygiene(n, seed):
    ids = [f"ID{i}" for i in range(n)]
    split = split_dataset(ids, (0.69, 0.08, 0.23), seed)
    pool = [sample("ok", case_id=c, filter_status=FilterStatus.PASSED) for c in ids]
    train_only = [s for s in pool if s.case_id in split.train_ids]
    assert {r["case_id"] for r in export_training_set(train_only, split)} == split.train_ids
    if split.validation_ids or split.test_ids:
        with pytest.raises(SplitContaminationError):
            export_training_set(pool, split)


# decomposition -------------------------------------------------------------------


def test_decomposition_jobs_and_samples():
    with_report = make_case("G1", ground_truth_report=REPORT_T3)
    without = make_case("G2")
    teacher = ScriptedBackend({
        "G1": {
            "teacher.text": "64-year-old with epigastric pain.",
            "teacher.endoscopy": "Ulcerated antral mass.",
            "teacher.radiology": "Wall thickening, cT3N0M0.",
            "teacher.laboratory": {"error": "transport"},
        }
    })
    jobs = build_decomposition_jobs([with_report, without], teacher)
    assert [j.case_id for j in jobs] == ["G1"] * 4
    assert "Final MDT report" in jobs[0].request().user
    out = run_decomposition(jobs, max_workers=2, timeout=2.0, max_retries=0)
    assert {s.modality for s in out} == {ModalityKind.TEXT, ModalityKind.ENDOSCOPY, ModalityKind.RADIOLOGY}
    assert all(s.filter_status is None for s in out)
    assert CuratedSample.from_dict(out[0].to_dict()) == out[0]
