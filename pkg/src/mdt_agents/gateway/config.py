"""Pipeline and service settings loaded from JSON files."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from ..agents.backends import Backend, BackendKind, BackendRef, Transcripts, load_transcripts
from ..agents.runtime import AgentSpec
from ..case import ModalityKind
from ..errors import ConfigError
from ..orchestrator import PipelineConfig
from ..rules import RuleTable


def _modalities(values: Any, key: str) -> tuple[ModalityKind, ...]:
    if not isinstance(values, list):
        raise ConfigError(f"{key}: expected a list of modality names")
    try:
        return tuple(ModalityKind(v) for v in values)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


@dataclass(frozen=True)
class PipelineSettings:
    """Declarative pipeline configuration.

    ``backend`` is used by every agent unless ``agent_backends`` or
    ``core_backend`` overrides it. ``rules`` is a rule-table path; without it
    the demonstration table is used.
    """

    backend: BackendRef
    agent_backends: Mapping[ModalityKind, BackendRef] = field(default_factory=dict)
    core_backend: BackendRef | None = None
    rules: str | None = None
    enabled_agents: tuple[ModalityKind, ...] = ModalityKind.ordered()
    modality_priority: tuple[ModalityKind, ...] = ()
    conflict_detection_enabled: bool = True
    two_pass_plan_check: bool = True
    parallel: bool = True
    agent_timeout: float = 60.0
    agent_max_retries: int = 2
    core_timeout: float = 120.0
    core_max_retries: int = 2

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any], base_dir: Path | None = None) -> "PipelineSettings":
        if not isinstance(doc, Mapping):
            raise ConfigError("pipeline settings must be an object")

        def ref(d: Any, key: str) -> BackendRef:
            if not isinstance(d, Mapping):
                raise ConfigError(f"{key}: expected an object")
            r = BackendRef.from_dict(d)
            if r.transcripts and base_dir is not None and not Path(r.transcripts).is_absolute():
                r = BackendRef(r.kind, r.model_name, r.endpoint, r.auth_env, str(base_dir / r.transcripts))
            return r

        if "backend" not in doc:
            raise ConfigError("pipeline settings need a 'backend'")
        agents = {}
        for name, d in (doc.get("agent_backends") or {}).items():
            try:
                agents[ModalityKind(name)] = ref(d, f"agent_backends.{name}")
            except ValueError:
                raise ConfigError(f"agent_backends: unknown modality {name!r}") from None
        rules = doc.get("rules")
        if rules and base_dir is not None and not Path(rules).is_absolute():
            rules = str(base_dir / rules)
        kwargs: dict[str, Any] = {}
        for key in ("conflict_detection_enabled", "two_pass_plan_check", "parallel"):
            if key in doc:
                kwargs[key] = bool(doc[key])
        for key in ("agent_timeout", "core_timeout"):
            if key in doc:
                kwargs[key] = float(doc[key])
        for key in ("agent_max_retries", "core_max_retries"):
            if key in doc:
                kwargs[key] = int(doc[key])
        if "enabled_agents" in doc:
            kwargs["enabled_agents"] = _modalities(doc["enabled_agents"], "enabled_agents")
        if "modality_priority" in doc:
            kwargs["modality_priority"] = _modalities(doc["modality_priority"], "modality_priority")
        return cls(
            backend=ref(doc["backend"], "backend"),
            agent_backends=agents,
            core_backend=ref(doc["core_backend"], "core_backend") if doc.get("core_backend") else None,
            rules=rules,
            **kwargs,
        )

    @classmethod
    def load(cls, path: str | Path) -> "PipelineSettings":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(doc.get("pipeline", doc), base_dir=path.parent)

    @classmethod
    def scripted(cls, transcripts: str | Path) -> "PipelineSettings":
        return cls(backend=BackendRef(BackendKind.SCRIPTED_MOCK, transcripts=str(transcripts)))

    def mocked(self, transcripts: str | Path) -> "PipelineSettings":
        """Same settings with every backend replaced by a scripted mock."""
        mock = BackendRef(BackendKind.SCRIPTED_MOCK, transcripts=str(transcripts))
        return PipelineSettings(
            backend=mock,
            agent_backends={},
            core_backend=None,
            rules=self.rules,
            enabled_agents=self.enabled_agents,
            modality_priority=self.modality_priority,
            conflict_detection_enabled=self.conflict_detection_enabled,
            two_pass_plan_check=self.two_pass_plan_check,
            parallel=self.parallel,
            agent_timeout=self.agent_timeout,
            agent_max_retries=self.agent_max_retries,
            core_timeout=self.core_timeout,
            core_max_retries=self.core_max_retries,
        )

    def build(self, transcripts: Transcripts | None = None) -> tuple[PipelineConfig, RuleTable]:
        """Instantiate backends and the rule table.

        Scripted backends sharing one transcript path share one loaded copy;
        ``transcripts`` overrides the path for all of them.
        """
        loaded: dict[str, Transcripts] = {}
        built: dict[BackendRef, Backend] = {}

        def backend(r: BackendRef) -> Backend:
            if r in built:
                return built[r]
            data = None
            if r.kind is BackendKind.SCRIPTED_MOCK:
                if transcripts is not None:
                    data = transcripts
                elif r.transcripts:
                    if r.transcripts not in loaded:
                        loaded[r.transcripts] = load_transcripts(r.transcripts)
                    data = loaded[r.transcripts]
            built[r] = r.build(data)
            return built[r]

        agents = {
            m: AgentSpec(
                modality=m,
                backend=backend(self.agent_backends.get(m, self.backend)),
                timeout=self.agent_timeout,
                max_retries=self.agent_max_retries,
            )
            for m in ModalityKind.ordered()
        }
        config = PipelineConfig(
            agents=agents,
            core_backend=backend(self.core_backend or self.backend),
            enabled_agents=frozenset(self.enabled_agents),
            conflict_detection_enabled=self.conflict_detection_enabled,
            modality_priority=self.modality_priority,
            two_pass_plan_check=self.two_pass_plan_check,
            parallel=self.parallel,
            core_timeout=self.core_timeout,
            core_max_retries=self.core_max_retries,
        )
        rules = RuleTable.load(self.rules) if self.rules else RuleTable.demo()
        return config, rules


def config_fingerprint(config: PipelineConfig, rules: RuleTable) -> str:
    """SHA-256 over the pipeline description and rule rows."""
    doc = {"pipeline": config.describe(), "rules": rules.to_rows()}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ServiceSettings:
    store_dir: str = "runs"
    max_concurrent: int = 4
    host: str = "127.0.0.1"
    port: int = 8080
    auth_token_env: str | None = None

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ServiceSettings":
        known = {k: doc[k] for k in ("store_dir", "max_concurrent", "host", "port", "auth_token_env") if k in doc}
        settings = cls(**known)
        if settings.max_concurrent < 1:
            raise ConfigError("max_concurrent must be >= 1")
        return settings

    @classmethod
    def load(cls, path: str | Path) -> "ServiceSettings":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(doc.get("service", {}))
