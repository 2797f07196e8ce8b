import json

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mdt_agents.agents.backends import (
    BackendKind,
    BackendRef,
    CallableBackend,
    ChatRequest,
    RemoteChatBackend,
    ScriptedBackend,
    load_transcripts,
    save_transcripts,
)
from mdt_agents.agents.prompts import DEFAULT_VQA_QUESTIONS, VqaBattery
from mdt_agents.agents.runtime import (
    AgentSpec,
    call_backend,
    invoke,
    mentioned_results,
    render_prompt,
    run_agent,
    split_confidence,
)
from mdt_agents.agents.stub import TranscriptReplayServer
from mdt_agents.case import LabPanel, LabResult, ModalityKind
from mdt_agents.errors import AgentSkipped, BackendTimeout, ConfigError, MalformedResponse, TransportError
from mdt_agents.evidence import AgentStatus, IntermediateState
from mdt_agents.staging import ExtractionRoute

from conftest import make_case, transcript


def spec(modality, backend, **kw):
    kw.setdefault("backoff", 0.0)
    return AgentSpec(modality=modality, backend=backend, **kw)


# prompts -----------------------------------------------------------------------


def test_text_prompt_contains_narrative_and_instruction():
    case = make_case()
    p = render_prompt(spec(ModalityKind.TEXT, None), case)
    assert case.emr_text in p.user
    assert "demographics, chief complaints, history, and comorbidities" in p.user


def test_endoscopy_prompt_has_battery_and_frames():
    case = make_case()
    p = render_prompt(spec(ModalityKind.ENDOSCOPY, None), case)
    assert len(p.images) == 6
    for ref in case.endoscopy.frames:
        assert ref in p.user
    for i in range(1, len(DEFAULT_VQA_QUESTIONS) + 1):
        assert f"Q{i}. " in p.user
    assert "gastric antrum" in p.user
    lowered = p.user.lower()
    for topic in ("type of lesion", "size", "located", "depth of invasion", "texture", "vascular", "bleeding"):
        assert topic in lowered


def test_empty_radiology_is_skipped():
    with pytest.raises(AgentSkipped):
        render_prompt(spec(ModalityKind.RADIOLOGY, None), make_case(radiology_report="  "))
    state = run_agent(spec(ModalityKind.RADIOLOGY, None), make_case(radiology_report=""))
    assert state.status is AgentStatus.SKIPPED


def test_lab_prompt_renders_normalized_table():
    p = render_prompt(spec(ModalityKind.LABORATORY, None), make_case())
    assert "| CEA | 3.1 | ng/mL | 0-5 | Normal |" in p.user
    assert p.lab_panel is not None


def test_prompt_is_deterministic():
    s = spec(ModalityKind.ENDOSCOPY, None)
    assert render_prompt(s, make_case()) == render_prompt(s, make_case())


def test_battery_must_be_nonempty():
    with pytest.raises(ValueError):
        VqaBattery(())


# invoke --------------------------------------------------------------------------


def scripted(**roles):
    return ScriptedBackend({"CASE-1": roles})


def test_endoscopy_depth_claim():
    backend = scripted(endoscopy="infiltrative mass invading muscularis propria")
    s = spec(ModalityKind.ENDOSCOPY, backend)
    state = invoke(s, render_prompt(s, make_case()))
    (c,) = state.claims
    assert c.stage.t == "T2" and c.extraction_route is ExtractionRoute.INVASION_DEPTH_MAPPED


def test_radiology_tnm_claim():
    backend = scripted(radiology="T3N1M0 gastric lesion")
    s = spec(ModalityKind.RADIOLOGY, backend)
    state = invoke(s, render_prompt(s, make_case()))
    (c,) = state.claims
    assert (c.stage.t, c.stage.n, c.stage.m) == ("T3", "N1", "M0")


def test_always_failing_backend_three_attempts():
    calls = []

    def fail(request):
        calls.append(request)
        raise TransportError("down")

    s = spec(ModalityKind.TEXT, CallableBackend(fail), max_retries=2)
    state = invoke(s, render_prompt(s, make_case()))
    assert state.status is AgentStatus.FAILED and state.attempts == 3 and len(calls) == 3
    assert state.findings_text == "" and state.claims == ()


def test_backoff_is_exponential():
    sleeps = []

    def fail(request):
        raise TransportError("down")

    outcome = call_backend(
        CallableBackend(fail), ChatRequest("s", "u"), timeout=None, max_retries=3, backoff=0.5, sleep=sleeps.append
    )
    assert outcome.status is AgentStatus.FAILED
    assert sleeps == [0.5, 1.0, 2.0]


def test_transient_failure_recovers():
    attempts = iter([TransportError("blip"), "Recovered summary."])

    def flaky(request):
        item = next(attempts)
        if isinstance(item, Exception):
            raise item
        return item

    outcome = call_backend(CallableBackend(flaky), ChatRequest("s", "u"), timeout=5, max_retries=2, backoff=0)
    assert outcome.status is AgentStatus.OK and outcome.attempts == 2


def test_timeout_maps_to_timed_out():
    def slow(request):
        raise BackendTimeout("slow")

    s = spec(ModalityKind.TEXT, CallableBackend(slow))
    assert invoke(s, render_prompt(s, make_case())).status is AgentStatus.TIMED_OUT


def test_scripted_delay_past_deadline_times_out():
    backend = scripted(text={"response": "late", "delay": 0.3})
    s = spec(ModalityKind.TEXT, backend, timeout=0.05)
    assert invoke(s, render_prompt(s, make_case())).status is AgentStatus.TIMED_OUT


def test_malformed_keeps_raw_response():
    def bad(request):
        raise MalformedResponse("not json", raw="<html>oops</html>")

    s = spec(ModalityKind.TEXT, CallableBackend(bad))
    state = invoke(s, render_prompt(s, make_case()))
    assert state.status is AgentStatus.FAILED and state.raw_response == "<html>oops</html>"


def test_agent_crash_is_contained():
    def boom(request):
        raise RuntimeError("bug")

    state = run_agent(spec(ModalityKind.TEXT, CallableBackend(boom)), make_case())
    assert state.status is AgentStatus.FAILED


@pytest.mark.parametrize("entry, status", [
    ({"error": "transport"}, AgentStatus.FAILED),
    ({"error": "timeout"}, AgentStatus.TIMED_OUT),
    ({"error": "malformed", "raw": "??"}, AgentStatus.FAILED),
    ("", AgentStatus.FAILED),
    ("fine", AgentStatus.OK),
])
def test_every_outcome_has_one_status(entry, status):
    s = spec(ModalityKind.TEXT, scripted(text=entry), max_retries=1)
    assert run_agent(s, make_case()).status is status


def test_non_ok_state_carries_no_findings():
    with pytest.raises(ValueError):
        IntermediateState(ModalityKind.TEXT, AgentStatus.FAILED, findings_text="x")


# postprocessing --------------------------------------------------------------------


@pytest.mark.parametrize(
    "text, body, value",
    [
        ("Summary.\nConfidence: 0.8", "Summary.", 0.8),
        ("Summary.\nconfidence = 85%", "Summary.", 0.85),
        ("Summary only.", "Summary only.", None),
        ("Summary.\nConfidence: 7", "Summary.", None),
    ],
)
def test_confidence_line(text, body, value):
    assert split_confidence(text) == (body, value)


def test_lab_highlights_follow_mentions():
    p = LabPanel((LabResult("CEA", 12.0, "ng/mL", 0, 5), LabResult("CA19-9", 20, "U/mL", 0, 37)))
    hits = mentioned_results("Markedly raised carcinoembryonic antigen (CEA 12).", p)
    assert [r.analyte for r in hits] == ["CEA"]
    assert [r.analyte for r in mentioned_results("ca 19-9 normal", p)] == ["CA19-9"]


@given(st.text(max_size=300))
def test_postprocessing_deterministic(raw):
    backend = CallableBackend(lambda r: raw)
    s = spec(ModalityKind.RADIOLOGY, backend)
    prompt = render_prompt(s, make_case())
    a, b = invoke(s, prompt), invoke(s, prompt)
    assert a.to_dict() == b.to_dict()
    for c in a.claims:
        assert c.evidence_span in a.findings_text


# backends ----------------------------------------------------------------------------


def test_scripted_final_pass_falls_back_to_core():
    backend = ScriptedBackend({"C": {"core": "draft"}})
    assert backend.complete(ChatRequest("s", "u", case_id="C", role="core.final")) == "draft"
    with pytest.raises(MalformedResponse):
        backend.complete(ChatRequest("s", "u", case_id="C", role="text"))


def test_scripted_covers_reports_gaps():
    backend = ScriptedBackend({"A": transcript()})
    assert backend.covers(["A", "B"], ["text"]) == ["B/text"]


def test_transcripts_round_trip(tmp_path):
    data = {"A": transcript(), "B": transcript(core="x")}
    save_transcripts(tmp_path / "t", data)
    assert load_transcripts(tmp_path / "t") == data
    (tmp_path / "one.json").write_text(json.dumps(data))
    assert load_transcripts(tmp_path / "one.json") == data


def test_backend_ref_validation():
    with pytest.raises(ConfigError):
        BackendRef(BackendKind.REMOTE_CHAT, model_name="m")
    with pytest.raises(ConfigError):
        BackendRef.from_dict({"kind": "carrier-pigeon"})
    with pytest.raises(ConfigError):
        BackendRef(BackendKind.SCRIPTED_MOCK).build()
    ref = BackendRef.from_dict({"kind": "remote_chat", "endpoint": "http://x", "model_name": "m"})
    assert BackendRef.from_dict(ref.to_dict()) == ref


def _remote(handler, **kw):
    return RemoteChatBackend("http://llm.test/v1/chat", "m", client=httpx.Client(transport=httpx.MockTransport(handler)), **kw)


def test_remote_wire_format(monkeypatch):
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        seen["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    monkeypatch.setenv("LLM_TOKEN", "s3cret")
    out = _remote(handler, auth_env="LLM_TOKEN").complete(
        ChatRequest("sys", "user", images=("img://1",), case_id="C", role="endoscopy")
    )
    assert out == "ok"
    body = seen["body"]
    assert body["temperature"] == 0 and body["model"] == "m"
    assert body["metadata"] == {"case_id": "C", "role": "endoscopy"}
    assert body["messages"][1]["content"][1] == {"type": "image_url", "image_url": {"url": "img://1"}}
    assert seen["auth"] == "Bearer s3cret"


def test_remote_missing_secret(monkeypatch):
    monkeypatch.delenv("NOPE_TOKEN", raising=False)
    with pytest.raises(ConfigError):
        _remote(lambda r: httpx.Response(200), auth_env="NOPE_TOKEN").complete(ChatRequest("s", "u"))


@pytest.mark.parametrize(
    "response, error",
    [
        (httpx.Response(503), TransportError),
        (httpx.Response(429), TransportError),
        (httpx.Response(400, text="bad"), MalformedResponse),
        (httpx.Response(200, text="not json"), MalformedResponse),
        (httpx.Response(200, json={"choices": []}), MalformedResponse),
    ],
)
def test_remote_error_mapping(response, error):
    with pytest.raises(error):
        _remote(lambda r: response).complete(ChatRequest("s", "u"))


def test_remote_timeout_and_connect_errors():
    def timeout(request):
        raise httpx.ReadTimeout("slow", request=request)

    def refused(request):
        raise httpx.ConnectError("refused", request=request)

    with pytest.raises(BackendTimeout):
        _remote(timeout).complete(ChatRequest("s", "u"))
    with pytest.raises(TransportError):
        _remote(refused).complete(ChatRequest("s", "u"))


def test_stub_server_replays_transcripts():
    data = {"CASE-1": transcript(text={"error": "transport"})}
    with TranscriptReplayServer(data) as server:
        remote = RemoteChatBackend(server.url, "stub")
        s = spec(ModalityKind.RADIOLOGY, remote)
        state = invoke(s, render_prompt(s, make_case()))
        assert state.status is AgentStatus.OK and state.claims[0].stage.t == "T2"
        failing = spec(ModalityKind.TEXT, remote, max_retries=1)
        assert invoke(failing, render_prompt(failing, make_case())).status is AgentStatus.FAILED
        assert len(server.requests) == 3
        remote.close()
