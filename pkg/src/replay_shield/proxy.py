"""Caching reverse proxy: throttle, cache lookup, upstream fetch, header injection, metrics.

The proxy never reads a wall clock; `handle_request` takes `now` explicitly so
in-process runs are deterministic. The live socket front end (wire.py) feeds it
monotonic time instead.
"""

from __future__ import annotations

import math
import threading
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable
from urllib.parse import urlsplit

from . import configtext
from .cache import (
    CachePolicy,
    KeyMode,
    LookupState,
    ResponseCache,
    make_cache_key,
    parse_cache_control,
)
from .configtext import ConfigError
from .httpmsg import Request, Response, text_response
from .urls import FuzzyRuleSet

DEFAULT_INJECTION_HEADER = "public, max-age=600"
METRICS_PATH = "/__metrics"


class UpstreamUnreachable(Exception):
    """Raised by an upstream callable when the origin cannot be reached."""


class InjectionMode(str, Enum):
    ALWAYS = "always"
    MISSING_ONLY = "missing_only"
    STATUS_404_ONLY = "status_404_only"
    OFF = "off"


@dataclass(frozen=True)
class InjectionConfig:
    header_value: str = DEFAULT_INJECTION_HEADER
    mode: InjectionMode = InjectionMode.ALWAYS


@dataclass(frozen=True)
class ThrottleConfig:
    """Sliding-window limiter for patch-style endpoints.

    A key is denied while the trailing window already holds max_requests_per_key
    allowed requests; denied requests do not extend the window.
    """

    enabled: bool = False
    window_seconds: float = 30.0
    max_requests_per_key: int = 1
    matched_path_prefixes: tuple[str, ...] = ("/save/_embed/",)

    def __post_init__(self):
        if self.window_seconds <= 0:
            raise ValueError("window_seconds must be > 0")
        if self.max_requests_per_key < 1:
            raise ValueError("max_requests_per_key must be >= 1")


@dataclass(frozen=True)
class ThrottleDecision:
    allowed: bool
    retry_after: float = 0.0


class SlidingWindowThrottle:
    def __init__(self, cfg: ThrottleConfig):
        self.cfg = cfg
        self._allowed: dict[str, deque[float]] = {}
        self._lock = threading.Lock()

    def check(self, path: str, key: str, now: float) -> ThrottleDecision:
        cfg = self.cfg
        if not cfg.enabled:
            return ThrottleDecision(True)
        if not any(path.startswith(p) for p in cfg.matched_path_prefixes):
            return ThrottleDecision(True)
        with self._lock:
            window = self._allowed.setdefault(key, deque())
            cutoff = now - cfg.window_seconds
            while window and window[0] <= cutoff:
                window.popleft()
            if len(window) >= cfg.max_requests_per_key:
                return ThrottleDecision(False, retry_after=window[0] + cfg.window_seconds - now)
            window.append(now)
            return ThrottleDecision(True)


@dataclass(frozen=True)
class ProxyMetrics:
    client_requests: int = 0
    cache_hits_fresh: int = 0
    upstream_requests: int = 0
    throttled_429: int = 0
    responses_by_status: dict[int, int] = field(default_factory=dict)


class _MetricsCounter:
    def __init__(self):
        self._lock = threading.Lock()
        self._m = ProxyMetrics()

    def count(self, *, client: int = 0, hit: int = 0, upstream: int = 0, throttled: int = 0, status: int | None = None):
        with self._lock:
            by_status = dict(self._m.responses_by_status)
            if status is not None:
                by_status[status] = by_status.get(status, 0) + 1
            self._m = ProxyMetrics(
                client_requests=self._m.client_requests + client,
                cache_hits_fresh=self._m.cache_hits_fresh + hit,
                upstream_requests=self._m.upstream_requests + upstream,
                throttled_429=self._m.throttled_429 + throttled,
                responses_by_status=by_status,
            )

    def snapshot(self) -> ProxyMetrics:
        with self._lock:
            return replace(self._m, responses_by_status=dict(self._m.responses_by_status))


def render_metrics(m: ProxyMetrics) -> str:
    lines = [
        f"client_requests {m.client_requests}",
        f"cache_hits_fresh {m.cache_hits_fresh}",
        f"upstream_requests {m.upstream_requests}",
        f"throttled_429 {m.throttled_429}",
    ]
    for status in sorted(m.responses_by_status):
        lines.append(f"status_{status} {m.responses_by_status[status]}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ProxyConfig:
    listen_address: str = "127.0.0.1:8080"
    upstream_address: str = "127.0.0.1:8081"
    policy: CachePolicy = field(default_factory=CachePolicy)
    injection: InjectionConfig = field(default_factory=InjectionConfig)
    throttle: ThrottleConfig = field(default_factory=ThrottleConfig)
    proxy_caching_enabled: bool = True
    coalesce_requests: bool = False

    def __post_init__(self):
        d = parse_cache_control(self.injection.header_value)
        if d.public and d.private:
            raise ConfigError("injection header must not be both public and private")


def inject_cache_control(response: Response, injection: InjectionConfig) -> Response:
    """Apply the configured Cache-Control header; status and body are untouched."""
    mode = injection.mode
    if mode is InjectionMode.OFF:
        return response
    if mode is InjectionMode.MISSING_ONLY and response.header("Cache-Control") is not None:
        return response
    if mode is InjectionMode.STATUS_404_ONLY and response.status != 404:
        return response
    return response.with_header("Cache-Control", injection.header_value)


class ReverseProxy:
    """Request pipeline: throttle -> cache lookup -> upstream fetch -> inject -> store.

    `upstream` maps a Request to a Response; it may be the in-process simulator
    or a socket client. It signals connection failure with UpstreamUnreachable.
    """

    def __init__(self, config: ProxyConfig, upstream: Callable[[Request], Response]):
        self.config = config
        self.upstream = upstream
        self.cache = ResponseCache(config.policy)
        self.throttle = SlidingWindowThrottle(config.throttle)
        self._metrics = _MetricsCounter()
        self._inflight: dict[tuple[str, str], threading.Lock] = {}
        self._inflight_guard = threading.Lock()

    def metrics_snapshot(self) -> ProxyMetrics:
        return self._metrics.snapshot()

    def handle_request(self, request: Request, now: float) -> Response:
        parts = urlsplit(request.url)
        if parts.path == METRICS_PATH:
            return text_response(200, render_metrics(self.metrics_snapshot()))
        if request.method not in ("GET", "HEAD") or not parts.scheme or not parts.netloc:
            # malformed requests never enter the counted pipeline
            return text_response(400, "bad request").with_header("X-Cache", "MISS")
        self._metrics.count(client=1)

        decision = self.throttle.check(parts.path, request.url, now)
        if not decision.allowed:
            self._metrics.count(throttled=1, status=429)
            return Response(
                429,
                (("Retry-After", str(max(1, math.ceil(decision.retry_after)))), ("X-Cache", "MISS")),
            )

        caching = self.config.proxy_caching_enabled and request.method == "GET"
        key = make_cache_key(request.method, request.url, self.config.policy)
        if caching:
            found = self.cache.lookup(key, now)
            if found.state is LookupState.FRESH:
                self._metrics.count(hit=1, status=found.entry.status)
                return found.entry.to_response().with_header("X-Cache", "HIT")

        if self.config.coalesce_requests and caching:
            lock = self._key_lock(key)
            with lock:
                found = self.cache.lookup(key, now)
                if found.state is LookupState.FRESH:
                    self._metrics.count(hit=1, status=found.entry.status)
                    return found.entry.to_response().with_header("X-Cache", "HIT")
                return self._fetch_and_store(request, key, caching, now)
        return self._fetch_and_store(request, key, caching, now)

    def _fetch_and_store(self, request: Request, key, caching: bool, now: float) -> Response:
        try:
            response = self.upstream(request)
        except UpstreamUnreachable:
            self._metrics.count(upstream=1, status=502)
            return text_response(502, "upstream unreachable").with_header("X-Cache", "MISS")
        self._metrics.count(upstream=1)
        response = inject_cache_control(response, self.config.injection)
        if caching:
            directives = parse_cache_control(response.header("Cache-Control"))
            self.cache.store(key, response, directives, now)
        self._metrics.count(status=response.status)
        return response.with_header("X-Cache", "MISS")

    def _key_lock(self, key) -> threading.Lock:
        k = (key.method, key.key)
        with self._inflight_guard:
            lock = self._inflight.get(k)
            if lock is None:
                lock = self._inflight[k] = threading.Lock()
            return lock


def proxy_config_from_text(text: str) -> ProxyConfig:
    """Build a ProxyConfig from `key = value` config text.

    Recognized keys: listen, upstream, injection.mode, injection.header,
    cache.enabled, cache.statuses, cache.max_age, cache.key_mode,
    cache.capacity, throttle.enabled, throttle.window_seconds, throttle.prefixes.
    """
    items = configtext.parse_config_text(text)
    known = {
        "listen", "upstream", "injection.mode", "injection.header",
        "cache.enabled", "cache.statuses", "cache.max_age", "cache.key_mode",
        "cache.capacity", "throttle.enabled", "throttle.window_seconds",
        "throttle.prefixes", "coalesce",
    }
    unknown = set(items) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")

    defaults = ProxyConfig()
    try:
        injection = InjectionConfig(
            header_value=items.get("injection.header", DEFAULT_INJECTION_HEADER),
            mode=InjectionMode(items.get("injection.mode", "always")),
        )
    except ValueError as exc:
        raise ConfigError(f"injection.mode: {exc}") from None
    try:
        key_mode = KeyMode(items.get("cache.key_mode", "exact"))
    except ValueError:
        raise ConfigError("cache.key_mode: expected one of exact/canonical/fuzzy") from None

    statuses = frozenset(
        configtext.parse_int(s.strip(), "cache.statuses")
        for s in items.get("cache.statuses", "200,404").split(",")
        if s.strip()
    )
    try:
        policy = CachePolicy(
            cacheable_statuses=statuses,
            default_max_age=configtext.parse_int(items.get("cache.max_age", "600"), "cache.max_age"),
            key_mode=key_mode,
            capacity=configtext.parse_int(items.get("cache.capacity", "10000"), "cache.capacity"),
            fuzzy_rules=FuzzyRuleSet(strip_numeric_only_params=True),
        )
        throttle = ThrottleConfig(
            enabled=configtext.parse_bool(items.get("throttle.enabled", "false"), "throttle.enabled"),
            window_seconds=configtext.parse_float(items.get("throttle.window_seconds", "30"), "throttle.window_seconds"),
            matched_path_prefixes=tuple(
                p.strip() for p in items.get("throttle.prefixes", "/save/_embed/").split(",") if p.strip()
            ),
        )
        return ProxyConfig(
            listen_address=items.get("listen", defaults.listen_address),
            upstream_address=items.get("upstream", defaults.upstream_address),
            policy=policy,
            injection=injection,
            throttle=throttle,
            proxy_caching_enabled=configtext.parse_bool(items.get("cache.enabled", "true"), "cache.enabled"),
            coalesce_requests=configtext.parse_bool(items.get("coalesce", "false"), "coalesce"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
