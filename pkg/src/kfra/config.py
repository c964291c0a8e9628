"""Layered engine configuration: defaults, a JSON file, then --set overrides.

Relative endpoint and cache paths in a config file resolve against the
file's own directory, so a generated bundle stays relocatable.
"""

import copy
import json
import os
from dataclasses import dataclass
from typing import Optional, Sequence

from .bench.evaluate import EvalRuntime
from .errors import ConfigError
from .loop import LoopConfig
from .stages.grounding import Stage2Config
from .stages.hypothesis import Stage1Config
from .toggles import Toggles
from .tools.cache import DEFAULT_TTL_S, ResponseCache
from .tools.canonical import digest_value
from .tools.client import ToolClient
from .tools.protocol import TOOL_KINDS, ToolBudget
from .tools.transport import FixtureTransport, HttpTransport

ENV_CONFIG = "KFRA_CONFIG"
ENV_CACHE_DIR = "KFRA_CACHE_DIR"


def default_settings() -> dict:
    return {
        "endpoints": {},
        "stage1": Stage1Config().to_dict(),
        "stage2": Stage2Config().to_dict(),
        "loop": LoopConfig().to_dict(),
        "budget": ToolBudget().to_dict(),
        "cache": {"dir": ".kfra-cache", "ttl_s": DEFAULT_TTL_S, "enabled": True},
        "toggles": Toggles().to_dict(),
    }


def _leaf_paths(settings: dict, prefix: str = "") -> dict:
    """Map each leaf name to its dotted path; ambiguous names map to None."""
    out: dict = {}
    for key, value in settings.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            for leaf, leaf_path in _leaf_paths(value, f"{path}.").items():
                out[leaf] = None if leaf in out else leaf_path
        else:
            out[key] = None if key in out else path
    return out


def _set_path(settings: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = settings
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config key {dotted!r}")
        node = node[part]
    leaf = parts[-1]
    # endpoints is an open map keyed by tool kind; everything else is closed.
    if leaf not in node and not dotted.startswith("endpoints"):
        raise ConfigError(f"unknown config key {dotted!r}")
    node[leaf] = value


def _merge_file(settings: dict, data: dict, prefix: str = "") -> None:
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key not in settings and not path.startswith("endpoints"):
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(value, dict) and isinstance(settings.get(key), dict) and key != "endpoints":
            _merge_file(settings[key], value, f"{path}.")
        else:
            settings[key] = value


def _parse_override(raw: str) -> tuple[str, object]:
    if "=" not in raw:
        raise ConfigError(f"override must look like key=value, got {raw!r}")
    key, text = raw.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override must look like key=value, got {raw!r}")
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    return key, value


def _is_url(target: str) -> bool:
    return target.startswith("http://") or target.startswith("https://")


@dataclass(frozen=True)
class EngineConfig:
    """The fully resolved configuration for one engine instance."""

    endpoints: dict
    stage1: Stage1Config
    stage2: Stage2Config
    loop: LoopConfig
    budget: ToolBudget
    cache_dir: str
    cache_ttl_s: float
    cache_enabled: bool
    toggles: Toggles

    def to_dict(self) -> dict:
        return {
            "endpoints": dict(sorted(self.endpoints.items())),
            "stage1": self.stage1.to_dict(),
            "stage2": self.stage2.to_dict(),
            "loop": self.loop.to_dict(),
            "budget": self.budget.to_dict(),
            "cache": {
                "dir": self.cache_dir,
                "ttl_s": self.cache_ttl_s,
                "enabled": self.cache_enabled,
            },
            "toggles": self.toggles.to_dict(),
        }

    @property
    def digest(self) -> str:
        return digest_value(self.to_dict())

    def endpoint_for(self, kind: str) -> str:
        target = self.endpoints.get(kind, self.endpoints.get("default", ""))
        if not target:
            raise ConfigError(f"no endpoint configured for tool kind {kind!r}")
        return target

    def make_transport(self):
        targets = {kind: self.endpoint_for(kind) for kind in TOOL_KINDS}
        built: dict = {}
        for kind, target in targets.items():
            if target not in built:
                built[target] = (
                    HttpTransport(target) if _is_url(target) else FixtureTransport(target)
                )
        if len(built) == 1:
            return next(iter(built.values()))
        return RouterTransport({kind: built[t] for kind, t in targets.items()})

    def make_cache(self) -> Optional[ResponseCache]:
        if not self.cache_enabled:
            return None
        return ResponseCache(self.cache_dir, ttl_s=self.cache_ttl_s)

    def make_client(self) -> ToolClient:
        return ToolClient(self.make_transport(), self.budget, cache=self.make_cache())

    def runtime(self, image_root: str = "", jobs: int = 1) -> EvalRuntime:
        """An EvalRuntime whose per-item clients share one transport and
        one cache, so warm runs skip the transport entirely."""
        transport = self.make_transport()
        cache = self.make_cache()
        return EvalRuntime(
            client_factory=lambda: ToolClient(transport, self.budget, cache=cache),
            stage1=self.stage1,
            stage2=self.stage2,
            loop=self.loop,
            image_root=image_root,
            config_digest=self.digest,
            jobs=jobs,
        )


class RouterTransport:
    """Dispatches each request to the transport bound to its kind."""

    def __init__(self, by_kind: dict):
        self.by_kind = by_kind

    def send(self, request, timeout_s: float):
        return self.by_kind[request.kind].send(request, timeout_s)

    def ping(self):
        for transport in self.by_kind.values():
            ok, latency = transport.ping()
            if not ok:
                return ok, latency
        return True, 0.0


def _build(settings: dict, base_dir: str) -> EngineConfig:
    def resolve(path: str) -> str:
        if not path or _is_url(path) or os.path.isabs(path):
            return path
        return os.path.normpath(os.path.join(base_dir, path))

    endpoints = {}
    for key, target in settings["endpoints"].items():
        if key != "default" and key not in TOOL_KINDS:
            raise ConfigError(f"unknown config key 'endpoints.{key}'")
        if not isinstance(target, str):
            raise ConfigError(f"endpoints.{key} must be a string")
        resolved = resolve(target)
        if resolved and not _is_url(resolved) and not os.path.isdir(resolved):
            raise ConfigError(f"endpoints.{key}: no such fixture bundle: {resolved}")
        endpoints[key] = resolved

    try:
        s1 = settings["stage1"]
        stage1 = Stage1Config(
            vocabulary_seed=tuple(s1["vocabulary_seed"]),
            score_floor=s1["score_floor"],
            dedup_iou=s1["dedup_iou"],
            top_m_exemplars=s1["top_m_exemplars"],
            k_max_candidates=s1["k_max_candidates"],
        )
        s2 = settings["stage2"]
        stage2 = Stage2Config(
            top_n_snippets=s2["top_n_snippets"],
            max_cues=s2["max_cues"],
            coarse_grid=tuple(s2["coarse_grid"]),
            fine_grid=tuple(s2["fine_grid"]),
            support_level=s2["support_level"],
            tau=s2["tau"],
            enhance_scale=s2["enhance_scale"],
            dilation_radius=s2["dilation_radius"],
        )
        loop = LoopConfig(**settings["loop"])
        budget = ToolBudget(**settings["budget"])
        toggles = Toggles.from_dict(settings["toggles"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc

    cache = settings["cache"]
    for key in cache:
        if key not in ("dir", "ttl_s", "enabled"):
            raise ConfigError(f"unknown config key 'cache.{key}'")
    cache_dir = os.environ.get(ENV_CACHE_DIR) or resolve(cache["dir"])
    ttl = cache["ttl_s"]
    if not isinstance(ttl, (int, float)) or ttl <= 0:
        raise ConfigError(f"cache.ttl_s must be positive, got {ttl!r}")

    return EngineConfig(
        endpoints=endpoints,
        stage1=stage1,
        stage2=stage2,
        loop=loop,
        budget=budget,
        cache_dir=cache_dir,
        cache_ttl_s=float(ttl),
        cache_enabled=bool(cache["enabled"]),
        toggles=toggles,
    )


def load_config(path: Optional[str] = None, overrides: Sequence[str] = ()) -> EngineConfig:
    """Defaults, then the file, then dotted key=value overrides.

    Override keys may be full dotted paths ("stage2.tau") or bare leaf
    names ("tau") when unambiguous.
    """
    settings = default_settings()
    base_dir = os.getcwd()
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"no such config file: {path}")
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        _merge_file(settings, copy.deepcopy(data))
        base_dir = os.path.dirname(os.path.abspath(path))

    aliases = _leaf_paths(default_settings())
    for raw in overrides:
        key, value = _parse_override(raw)
        if "." not in key:
            dotted = aliases.get(key)
            if key in ("endpoints",):
                raise ConfigError(f"override key {key!r} is not a leaf")
            if dotted is None and key in aliases:
                raise ConfigError(f"override key {key!r} is ambiguous; use a dotted path")
            if dotted is None:
                raise ConfigError(f"unknown config key {key!r}")
            key = dotted
        _set_path(settings, key, value)

    return _build(settings, base_dir)
