"""Pipeline configuration: one TOML file shared by every subcommand.

Unknown keys are rejected with their full field path so typos fail fast
instead of silently running with defaults. Auth tokens never live in the
file; endpoints name an environment variable instead.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .context import TokenBudget
from .evaluation import AdherencePolicy
from .gateway import RetryPolicy

ROLE_NAMES = ("teacher", "candidate", "judge_finesure", "judge_rubric")


class ConfigError(ValueError):
    """Invalid configuration; message carries the offending field path."""


@dataclass(frozen=True)
class EndpointSettings:
    url: str
    model: str
    auth_env: str | None = None


@dataclass(frozen=True)
class Seeds:
    sampling: int = 0
    shuffle: int = 0


@dataclass(frozen=True)
class GenerationSettings:
    k_prompts_per_call: int = 5
    teacher_max_tokens: int = 512
    candidate_max_tokens: int = 256
    failure_threshold: float = 0.05
    counter: str = "heuristic"
    created_at: str | None = None  # pin for byte-reproducible runs


@dataclass(frozen=True)
class PipelineConfig:
    endpoints: dict[str, EndpointSettings] = field(default_factory=dict)
    budget: TokenBudget = TokenBudget()
    retry: RetryPolicy = RetryPolicy()
    concurrency: int = 1
    seeds: Seeds = Seeds()
    adherence: AdherencePolicy = AdherencePolicy()
    generation: GenerationSettings = GenerationSettings()
    workspace: Path = Path("workspace")

    def endpoint(self, role: str) -> EndpointSettings:
        if role not in self.endpoints:
            raise ConfigError(f"endpoints.{role}: role not configured")
        return self.endpoints[role]


def _check(condition: bool, path: str, message: str) -> None:
    if not condition:
        raise ConfigError(f"{path}: {message}")


def _take(table: dict, path: str, allowed: dict[str, type | tuple[type, ...]]) -> dict:
    """Validate one TOML table: no unknown keys, values of the right type."""
    out = {}
    for key, value in table.items():
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown config key")
        expected = allowed[key]
        if expected is float:
            expected = (int, float)
        _check(isinstance(value, expected), f"{path}.{key}",
               f"expected {allowed[key]}, got {type(value).__name__}")
        out[key] = float(value) if allowed[key] is float else value
    return out


def parse_config(data: dict, *, base_dir: Path | None = None) -> PipelineConfig:
    for key in data:
        if key not in ("endpoints", "budget", "retry", "concurrency", "seeds",
                       "adherence", "generation", "paths"):
            raise ConfigError(f"{key}: unknown config key")

    endpoints: dict[str, EndpointSettings] = {}
    for role, table in (data.get("endpoints") or {}).items():
        _check(role in ROLE_NAMES, f"endpoints.{role}",
               f"unknown role (expected one of {', '.join(ROLE_NAMES)})")
        _check(isinstance(table, dict), f"endpoints.{role}", "expected a table")
        fields = _take(table, f"endpoints.{role}",
                       {"url": str, "model": str, "auth_env": str})
        _check("url" in fields, f"endpoints.{role}.url", "required")
        _check("model" in fields, f"endpoints.{role}.model", "required")
        endpoints[role] = EndpointSettings(
            url=fields["url"], model=fields["model"], auth_env=fields.get("auth_env")
        )

    budget_fields = _take(data.get("budget") or {}, "budget",
                          {"context_window": int, "completion_reserve": int,
                           "overhead_reserve": int})
    try:
        budget = TokenBudget(**budget_fields)
    except ValueError as exc:
        raise ConfigError(f"budget: {exc}") from exc

    retry_fields = _take(data.get("retry") or {}, "retry",
                         {"max_attempts": int, "base_backoff": float,
                          "backoff_multiplier": float, "max_backoff": float,
                          "jitter_fraction": float})
    try:
        retry = RetryPolicy(**retry_fields)
    except ValueError as exc:
        raise ConfigError(f"retry: {exc}") from exc

    conc_fields = _take(data.get("concurrency") or {}, "concurrency",
                        {"per_endpoint": int})
    concurrency = conc_fields.get("per_endpoint", 1)
    _check(concurrency >= 1, "concurrency.per_endpoint", "must be >= 1")

    seed_fields = _take(data.get("seeds") or {}, "seeds",
                        {"sampling": int, "shuffle": int})
    seeds = Seeds(**seed_fields)

    adherence_fields = _take(data.get("adherence") or {}, "adherence",
                             {"words_tolerance": float})
    adherence = AdherencePolicy(**adherence_fields)

    gen_fields = _take(data.get("generation") or {}, "generation",
                       {"k_prompts_per_call": int, "teacher_max_tokens": int,
                        "candidate_max_tokens": int, "failure_threshold": float,
                        "counter": str, "created_at": str})
    generation = GenerationSettings(**gen_fields)
    _check(1 <= generation.k_prompts_per_call <= 20,
           "generation.k_prompts_per_call", "must be in [1, 20]")
    _check(0 <= generation.failure_threshold <= 1,
           "generation.failure_threshold", "must be in [0, 1]")

    path_fields = _take(data.get("paths") or {}, "paths", {"workspace": str})
    workspace = Path(path_fields.get("workspace", "workspace"))
    if base_dir is not None and not workspace.is_absolute():
        workspace = base_dir / workspace

    return PipelineConfig(
        endpoints=endpoints,
        budget=budget,
        retry=retry,
        concurrency=concurrency,
        seeds=seeds,
        adherence=adherence,
        generation=generation,
        workspace=workspace,
    )


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    return parse_config(data, base_dir=path.parent)
