from .backends import (
    Backend,
    BackendKind,
    BackendRef,
    CallableBackend,
    ChatRequest,
    RemoteChatBackend,
    ScriptedBackend,
    load_transcripts,
    save_transcripts,
)
from .prompts import VqaBattery
from .runtime import AgentSpec, RenderedPrompt, call_backend, default_specs, invoke, render_prompt, run_agent

__all__ = [
    "AgentSpec",
    "Backend",
    "BackendKind",
    "BackendRef",
    "CallableBackend",
    "ChatRequest",
    "RemoteChatBackend",
    "RenderedPrompt",
    "ScriptedBackend",
    "VqaBattery",
    "call_backend",
    "default_specs",
    "invoke",
    "load_transcripts",
    "render_prompt",
    "run_agent",
    "save_transcripts",
]
