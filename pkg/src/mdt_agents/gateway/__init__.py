"""Configuration, persistence, HTTP service and CLI."""

from .config import PipelineSettings, ServiceSettings, config_fingerprint
from .store import RunStatus, RunStore

__all__ = ["PipelineSettings", "ServiceSettings", "config_fingerprint", "RunStatus", "RunStore"]
