"""Pipeline and service configuration.

Config files are JSON. Every model role (generator, router, judge, embedder)
gets its own backend block; ``kind`` selects a deterministic mock or an
OpenAI-compatible HTTP client. Environment variables override endpoints and
credentials at load time: ``DCDRAG_<ROLE>_BASE_URL`` replaces a role's
``base_url`` and ``DCDRAG_<ROLE>_API_KEY_ENV`` renames the variable the API
key is read from.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .chunking import ChunkParams

ROLES = ("generator", "router", "judge", "embedder")


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"  # mock | openai
    base_url: str = ""
    model: str = ""
    api_key_env: str | None = None
    temperature: float = 0.0
    script_path: str | None = None  # mock only: JSON file of scripted responses
    dim: int = 256  # mock embedder only

    def __post_init__(self):
        if self.kind not in ("mock", "openai"):
            raise ValueError(f"unknown backend kind: {self.kind!r}")
        if self.kind == "openai" and not self.base_url:
            raise ValueError("openai backend requires base_url")


@dataclass(frozen=True)
class RetrievalConfig:
    k_per_list: int = 10
    context_budget_tokens: int = 2000


@dataclass(frozen=True)
class RouterConfig:
    max_retries: int = 3
    cache_capacity: int = 10_000
    prompt_dir: str | None = None


@dataclass(frozen=True)
class GuardrailConfig:
    stream_prefix_tokens: int = 150
    base_stopwords_path: str | None = None
    custom_stopwords_path: str | None = None
    refusal_notice: str | None = None


@dataclass(frozen=True)
class GenerationConfig:
    temperature: float = 0.0
    retries: int = 2
    backoff_s: float = 0.1


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "dcd"  # default mode; both paths stay callable
    manifest_path: str | None = None
    chunking: ChunkParams = field(default_factory=ChunkParams)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    router: RouterConfig = field(default_factory=RouterConfig)
    guardrails: GuardrailConfig = field(default_factory=GuardrailConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    backends: dict[str, BackendConfig] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("dcd", "naive"):
            raise ValueError(f"mode must be dcd or naive, got {self.mode!r}")

    def backend(self, role: str) -> BackendConfig:
        return self.backends.get(role, BackendConfig())

    @classmethod
    def from_dict(cls, data: dict, *, base_dir: Path | None = None) -> "PipelineConfig":
        def resolve(p: str | None) -> str | None:
            if p is None or base_dir is None:
                return p
            return str((base_dir / p).resolve()) if not Path(p).is_absolute() else p

        backends = {}
        for role, spec in data.get("backends", {}).items():
            if role not in ROLES:
                raise ValueError(f"unknown backend role: {role!r}")
            spec = dict(spec)
            spec["base_url"] = os.environ.get(
                f"DCDRAG_{role.upper()}_BASE_URL", spec.get("base_url", "")
            )
            key_env = os.environ.get(f"DCDRAG_{role.upper()}_API_KEY_ENV")
            if key_env:
                spec["api_key_env"] = key_env
            if spec.get("script_path"):
                spec["script_path"] = resolve(spec["script_path"])
            backends[role] = BackendConfig(**spec)

        chunking = data.get("chunking", {})
        guardrails = dict(data.get("guardrails", {}))
        for key in ("base_stopwords_path", "custom_stopwords_path"):
            if guardrails.get(key):
                guardrails[key] = resolve(guardrails[key])
        return cls(
            mode=data.get("mode", "dcd"),
            manifest_path=resolve(data.get("manifest_path")),
            chunking=ChunkParams(
                window_tokens=chunking.get("window_tokens", 300),
                overlap_fraction=chunking.get("overlap_fraction", 0.20),
            ),
            retrieval=RetrievalConfig(**data.get("retrieval", {})),
            router=RouterConfig(**data.get("router", {})),
            guardrails=GuardrailConfig(**guardrails),
            generation=GenerationConfig(**data.get("generation", {})),
            backends=backends,
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        data = json.loads(path.read_text(encoding="utf-8"))
        return cls.from_dict(data, base_dir=path.parent)


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    pipeline_config: str | None = None
    max_query_chars: int = 4000
    max_concurrent: int = 8

    def __post_init__(self):
        if self.max_query_chars < 1 or self.max_concurrent < 1:
            raise ValueError("request limits must be positive")

    @classmethod
    def from_file(cls, path: str | Path) -> "ServiceConfig":
        path = Path(path)
        data = json.loads(path.read_text(encoding="utf-8"))
        listen = data.get("listen", "127.0.0.1:8080")
        host, _, port = listen.rpartition(":")
        pipeline_config = data.get("pipeline_config")
        if pipeline_config and not Path(pipeline_config).is_absolute():
            pipeline_config = str((path.parent / pipeline_config).resolve())
        limits = data.get("limits", {})
        return cls(
            host=host or "127.0.0.1",
            port=int(port),
            pipeline_config=pipeline_config,
            max_query_chars=int(limits.get("max_query_chars", 4000)),
            max_concurrent=int(limits.get("max_concurrent", 8)),
        )
