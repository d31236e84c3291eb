"""Run configuration: built-in defaults, overlaid by a JSON file, overlaid by flags."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .content_graph import DEFAULT_WINDOW
from .errors import MalformedInput
from .evolution import DEFAULT_ALPHA, DEFAULT_ITERATIONS, DEFAULT_LITE_K, DEFAULT_TOP_K
from .pipeline import DEFAULT_TAU_MAX
from .readout import DEFAULT_NODE_BUDGET

MODES = ("vlm", "lite")
SCHEDULES = ("sequential", "parallel")


@dataclass
class ClientSettings:
    endpoint: str | None = None
    model: str = ""
    embedding_model: str = ""
    api_key_env: str = "G2_API_KEY"
    timeout: float = 120.0
    retry_budget: int = 3
    vision_capable: bool = False


@dataclass
class RunConfig:
    client: ClientSettings = field(default_factory=ClientSettings)
    w: int = DEFAULT_WINDOW
    top_k: int = DEFAULT_TOP_K
    T: int = DEFAULT_ITERATIONS
    mode: str = "vlm"
    alpha: float = DEFAULT_ALPHA
    K: int = DEFAULT_LITE_K
    k: int = DEFAULT_NODE_BUDGET
    tau_max: int = DEFAULT_TAU_MAX
    schedule: str = "sequential"
    workers: int = 1
    store: str | None = None

    def validate(self) -> RunConfig:
        problems = []
        if self.w < 1:
            problems.append("w must be >= 1")
        if self.top_k < 1 or self.K < 1 or self.k < 1:
            problems.append("top_k, K and k must be >= 1")
        if self.T < 0 or self.tau_max < 0:
            problems.append("T and tau_max must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            problems.append("alpha must lie in [0, 1]")
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES}")
        if self.schedule not in SCHEDULES:
            problems.append(f"schedule must be one of {SCHEDULES}")
        if self.workers < 1:
            problems.append("workers must be >= 1")
        if problems:
            raise MalformedInput("invalid configuration: " + "; ".join(problems))
        return self

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _overlay(obj: Any, updates: dict[str, Any], where: str) -> Any:
    known = {f.name: f for f in fields(obj)}
    changes: dict[str, Any] = {}
    for key, value in updates.items():
        if key not in known:
            raise MalformedInput(f"{where}: unknown setting {key!r}")
        current = getattr(obj, key)
        if isinstance(current, ClientSettings):
            if not isinstance(value, dict):
                raise MalformedInput(f"{where}: 'client' must be an object")
            value = _overlay(current, value, f"{where}.client")
        changes[key] = value
    return replace(obj, **changes)


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Defaults < config file < ``overrides`` (flag values; ``None`` entries are ignored)."""
    config = RunConfig()
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise MalformedInput(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise MalformedInput(f"config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise MalformedInput(f"config {path}: top level must be an object")
        config = _overlay(config, data, str(path))
    if overrides:
        client = {k: v for k, v in overrides.get("client", {}).items() if v is not None}
        top = {k: v for k, v in overrides.items() if k != "client" and v is not None}
        if client:
            top["client"] = client
        config = _overlay(config, top, "flags")
    return config.validate()
