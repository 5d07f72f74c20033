"""Shared response cache with Cache-Control freshness semantics and negative (404) caching.

Time never comes from a wall clock here; every operation takes `now` so runs
are reproducible. An entry stored at t with lifetime L is fresh for queries in
[t, t+L) and stale from t+L on, which makes max-age=0 mean "never fresh".
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum

from .httpmsg import Response
from .urls import FuzzyRuleSet, canonical_key_of, fuzzy_key_of


@dataclass(frozen=True)
class CacheControlDirectives:
    public: bool = False
    private: bool = False
    no_store: bool = False
    no_cache: bool = False
    max_age: int | None = None


def parse_cache_control(header_value: str | None) -> CacheControlDirectives:
    """Lenient Cache-Control parse: case-insensitive names, unknown directives
    ignored, malformed or negative max-age treated as absent. If both public
    and private appear, private wins."""
    public = private = no_store = no_cache = False
    max_age: int | None = None
    for token in (header_value or "").split(","):
        name, _, value = token.strip().partition("=")
        name = name.strip().lower()
        value = value.strip().strip('"')
        if name == "public":
            public = True
        elif name == "private":
            private = True
        elif name == "no-store":
            no_store = True
        elif name == "no-cache":
            no_cache = True
        elif name == "max-age":
            try:
                parsed = int(value)
            except ValueError:
                continue
            if parsed >= 0:
                max_age = parsed
    if private:
        public = False
    return CacheControlDirectives(public, private, no_store, no_cache, max_age)


class KeyMode(str, Enum):
    EXACT = "exact"
    CANONICAL = "canonical"
    FUZZY = "fuzzy"


@dataclass(frozen=True)
class CachePolicy:
    """What may be cached and for how long."""

    cacheable_statuses: frozenset[int] = frozenset({200, 404})
    default_max_age: int = 600
    key_mode: KeyMode = KeyMode.EXACT
    capacity: int = 10_000
    respect_upstream_directives: bool = True
    fuzzy_rules: FuzzyRuleSet = field(default_factory=lambda: FuzzyRuleSet(strip_numeric_only_params=True))

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if self.default_max_age < 0:
            raise ValueError("default_max_age must be >= 0")


@dataclass(frozen=True)
class CacheKey:
    method: str
    key: str


def make_cache_key(method: str, url: str, policy: CachePolicy) -> CacheKey:
    if policy.key_mode == KeyMode.EXACT:
        return CacheKey(method, url)
    if policy.key_mode == KeyMode.CANONICAL:
        return CacheKey(method, canonical_key_of(url))
    return CacheKey(method, fuzzy_key_of(url, policy.fuzzy_rules))


@dataclass(frozen=True)
class CachedResponse:
    status: int
    headers: tuple[tuple[str, str], ...]
    body: bytes
    stored_at: float
    freshness_lifetime: float

    def age(self, now: float) -> float:
        return now - self.stored_at

    def is_fresh(self, now: float) -> bool:
        return self.age(now) < self.freshness_lifetime

    def to_response(self) -> Response:
        return Response(self.status, self.headers, self.body)


class LookupState(Enum):
    FRESH = "fresh"
    STALE = "stale"
    MISS = "miss"


@dataclass(frozen=True)
class LookupResult:
    state: LookupState
    entry: CachedResponse | None = None


class StoreOutcome(Enum):
    STORED = "stored"
    REJECTED_NO_STORE = "no_store"
    REJECTED_METHOD = "method_not_cacheable"
    REJECTED_STATUS = "status_not_cacheable"

    @property
    def stored(self) -> bool:
        return self is StoreOutcome.STORED


class ResponseCache:
    """LRU response cache bound to one CachePolicy.

    Safe under concurrent callers; a lookup racing a store of the same key sees
    either the old entry or the new one, never a torn mix. Stale entries are
    reported as STALE (not dropped) so the proxy can refresh them on demand;
    they keep occupying capacity until overwritten or evicted.
    """

    def __init__(self, policy: CachePolicy):
        self.policy = policy
        self._entries: OrderedDict[tuple[str, str], CachedResponse] = OrderedDict()
        self._lock = threading.RLock()

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def lookup(self, key: CacheKey, now: float) -> LookupResult:
        k = (key.method, key.key)
        with self._lock:
            entry = self._entries.get(k)
            if entry is None:
                return LookupResult(LookupState.MISS)
            self._entries.move_to_end(k)
            state = LookupState.FRESH if entry.is_fresh(now) else LookupState.STALE
            return LookupResult(state, entry)

    def store(self, key: CacheKey, response: Response, directives: CacheControlDirectives, now: float) -> StoreOutcome:
        if directives.no_store:
            return StoreOutcome.REJECTED_NO_STORE
        if key.method != "GET":
            return StoreOutcome.REJECTED_METHOD
        if response.status not in self.policy.cacheable_statuses:
            return StoreOutcome.REJECTED_STATUS
        if self.policy.respect_upstream_directives and directives.max_age is not None:
            lifetime = float(directives.max_age)
        else:
            lifetime = float(self.policy.default_max_age)
        entry = CachedResponse(
            status=response.status,
            headers=response.headers,
            body=response.body,
            stored_at=now,
            freshness_lifetime=lifetime,
        )
        k = (key.method, key.key)
        with self._lock:
            self._entries[k] = entry
            self._entries.move_to_end(k)
            while len(self._entries) > self.policy.capacity:
                self._entries.popitem(last=False)
        return StoreOutcome.STORED

    def purge(self, key: CacheKey) -> bool:
        with self._lock:
            return self._entries.pop((key.method, key.key), None) is not None
