"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion lines.
Criteria 1-9 are deterministic (in-process transport, logical clock);
criteria 10-11 exercise real loopback sockets.
"""

from __future__ import annotations

import functools
import http.client
import random
import time
from dataclasses import replace

from test_urls import REPLAY_URL_FIXTURES, oracle_canonical_key, random_url

from replay_shield.analyzer import build_report, detect_recurring
from replay_shield.cache import (
    CacheKey,
    CachePolicy,
    KeyMode,
    LookupState,
    ResponseCache,
    StoreOutcome,
    parse_cache_control,
)
from replay_shield.cli import ExperimentSpec, run_experiment
from replay_shield.httpmsg import Request, Response
from replay_shield.proxy import InjectionMode, ProxyConfig, ReverseProxy, ThrottleConfig
from replay_shield.upstream import MementoStore, PatchConfig, UpstreamSimulator, parse_manifest_text
from replay_shield.urls import (
    FuzzyRuleSet,
    canonical_form,
    canonicalize,
    format_urim,
    fuzzy_reduce,
    parse_urim,
    parse_urir,
)
from replay_shield.wire import http_fetch, serve_handler
from replay_shield.workload import ClientEvent, EventSource


def criterion(number: int, title: str):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"[acceptance] C{number:02d} FAIL {title}")
                raise
            print(f"[acceptance] C{number:02d} PASS {title}")

        return run

    return wrap


def reproduce(scenario: str, *, cache_on: bool, duration: float = 60.0, **kwargs):
    return run_experiment(
        ExperimentSpec(
            scenario=scenario,
            cache_enabled=cache_on,
            injection_mode=InjectionMode.ALWAYS if cache_on else InjectionMode.OFF,
            duration=duration,
            **kwargs,
        )
    )


@criterion(1, "MRE before/after: ~181 network events uncached, exactly 7 cached")
def test_c01_mre_before_after():
    before = reproduce("mre", cache_on=False)
    assert 166 <= len(before.network_events) <= 188, len(before.network_events)

    after = reproduce("mre", cache_on=True)
    assert len(after.network_events) == 7
    assert after.proxy_metrics.upstream_requests == 7
    seen_network = 0
    for event in after.events:
        if event.source is EventSource.NETWORK:
            seen_network += 1
        elif seen_network == 7:
            assert event.source is EventSource.MEMORY_CACHE, event
    assert {e.source for e in after.events} <= {EventSource.NETWORK, EventSource.MEMORY_CACHE}


@criterion(2, "carousel12 scale: ~1098 req/min uncached, exactly 12 upstream 404s cached")
def test_c02_carousel_scale():
    before = reproduce("carousel12", cache_on=False)
    avg = before.client_report.avg_per_minute
    assert abs(avg - 1098) / 1098 <= 0.05, avg

    after = reproduce("carousel12", cache_on=True)
    assert after.upstream_status_counts.get(404, 0) == 12


@criterion(3, "freshness boundary: fresh below max-age, stale at it, no-store never stored")
def test_c03_freshness_boundary():
    cache = ResponseCache(CachePolicy())
    key = CacheKey("GET", "http://a/missing")
    body = Response(404, (), b"")
    assert cache.store(key, body, parse_cache_control("public, max-age=600"), now=0.0).stored
    assert cache.lookup(key, now=599.9).state is LookupState.FRESH
    assert cache.lookup(key, now=600.0).state is not LookupState.FRESH

    zero = CacheKey("GET", "http://a/zero")
    cache.store(zero, body, parse_cache_control("max-age=0"), now=0.0)
    for t in (0.0, 0.001, 1.0, 100.0):
        assert cache.lookup(zero, now=t).state is not LookupState.FRESH

    ns = CacheKey("GET", "http://a/nostore")
    outcome = cache.store(ns, body, parse_cache_control("no-store"), now=0.0)
    assert outcome is StoreOutcome.REJECTED_NO_STORE
    assert cache.lookup(ns, now=0.0).state is LookupState.MISS


@criterion(4, "throttle window: patch at t=0/10/31 gives allow, 429, allow")
def test_c04_throttle_window():
    store = MementoStore()
    store.live_web[canonicalize(parse_urir("http://x.pt/img.jpg"))] = (200, "image/jpeg", b"jpg")
    sim = UpstreamSimulator(store, patch=PatchConfig(enabled=True))
    statuses = [sim.patch("http://x.pt/img.jpg", now=t).status for t in (0.0, 10.0, 31.0)]
    assert statuses[0] != 429 and statuses[2] != 429
    assert statuses[1] == 429
    assert statuses == [200, 429, 200]


@criterion(5, "conservation: client = hits + upstream + throttled over 100 random traces")
def test_c05_conservation():
    rng = random.Random(50505)
    for trace in range(100):
        n = rng.randint(1000, 1400)
        urls = []
        for _ in range(n):
            if rng.random() < 0.2:
                urls.append(f"http://h.test/save/_embed/http://x/r{rng.randint(0, 4)}")
            else:
                urls.append(f"http://h.test/r{rng.randint(0, 40)}")
        missing = {u for u in urls if rng.random() < 0.4}
        cfg = ProxyConfig(
            policy=CachePolicy(default_max_age=rng.choice([0, 5, 600])),
            throttle=ThrottleConfig(enabled=True),
            proxy_caching_enabled=rng.random() < 0.7,
        )

        def upstream(request: Request) -> Response:
            return Response(404 if request.url in missing else 200, (), b"x")

        proxy = ReverseProxy(cfg, upstream)
        t = 0.0
        for u in urls:
            proxy.handle_request(Request("GET", u), now=t)
            t += rng.random()
        m = proxy.metrics_snapshot()
        assert m.client_requests == n
        assert m.client_requests == m.cache_hits_fresh + m.upstream_requests + m.throttled_429, trace


@criterion(6, "distinct-URL bound: cached upstream requests equal distinct URLs, 100 traces")
def test_c06_distinct_url_bound():
    rng = random.Random(60606)
    for _ in range(100):
        n = rng.randint(200, 500)
        urls = [f"http://h.test/p{rng.randint(0, 60)}?v={rng.randint(0, 3)}" for _ in range(n)]
        cfg = ProxyConfig(
            policy=CachePolicy(key_mode=KeyMode.EXACT, default_max_age=10**9),
            proxy_caching_enabled=True,
        )
        proxy = ReverseProxy(cfg, lambda req: Response(404, (), b""))
        for i, u in enumerate(urls):
            proxy.handle_request(Request("GET", u), now=float(i) * 0.01)
        distinct = len(set(urls))  # brute-force oracle
        assert proxy.metrics_snapshot().upstream_requests == distinct


@criterion(7, "analyzer exactness and burst detection at (203, 13s)")
def test_c07_analyzer():
    rng = random.Random(70707)
    for _ in range(25):
        events = [
            ClientEvent(rng.uniform(0, 80), f"http://a/r{rng.randint(0, 9)}", EventSource.NETWORK, 404)
            for _ in range(rng.randint(2, 400))
        ]
        report = build_report(events)
        assert sum(c for _, c in report.per_second) == report.total
        cums = [c for _, c in report.cumulative]
        assert all(a <= b for a, b in zip(cums, cums[1:])) and cums[-1] == report.total
        assert abs(report.avg_per_minute - report.total * 60.0 / report.duration) < 1e-9

    burst_events = []
    for second, count in enumerate([16] * 8 + [15] * 5):  # 203 requests in 13 seconds
        burst_events += [
            ClientEvent(second + j * 0.05, f"http://a/load/{second}/{j}", EventSource.NETWORK, 200)
            for j in range(count)
        ]
    for second in range(13, 60):  # low steady tail after the knee
        burst_events += [
            ClientEvent(second + j * 0.4, "http://a/missing.png", EventSource.NETWORK, 404)
            for j in range(2)
        ]
    k, t = build_report(burst_events).burst_prefix
    assert k == 203
    assert abs(t - 13.0) <= 1.0


@criterion(8, "fuzzy collapse: 50 cache-busted requests form 1 cluster and 1 upstream fetch")
def test_c08_fuzzy_collapse():
    events = [
        ClientEvent(float(i), f"http://a.test/feed?ts={1630489675000 + i}", EventSource.NETWORK, 404)
        for i in range(50)
    ]
    clusters = detect_recurring(events, min_repeats=3, rules=FuzzyRuleSet(strip_numeric_only_params=True))
    assert len(clusters) == 1
    assert clusters[0].count == 50

    cfg = ProxyConfig(policy=CachePolicy(key_mode=KeyMode.FUZZY))
    calls = []

    def upstream(request: Request) -> Response:
        calls.append(request.url)
        return Response(404, (), b"")

    proxy = ReverseProxy(cfg, upstream)
    for i in range(50):
        proxy.handle_request(Request("GET", f"http://a.test/feed?ts={1630489675000 + i}"), now=float(i))
    assert len(calls) == 1


@criterion(9, "URL round-trips on real replay URLs; canonicalization idempotent on 1000 random URLs")
def test_c09_url_properties():
    for url in REPLAY_URL_FIXTURES:
        assert format_urim(parse_urim(url)) == url

    rng = random.Random(90909)
    rules = FuzzyRuleSet(strip_numeric_only_params=True, strip_params=frozenset({"ts"}))
    for _ in range(1000):
        url = random_url(rng)
        u = parse_urir(url)
        key = canonicalize(u)
        assert key == oracle_canonical_key(url)
        # idempotence: canonicalizing an already-canonical URL changes nothing
        assert canonicalize(canonical_form(u)) == key
        reduced = fuzzy_reduce(u, rules)
        stripped = replace(u, query=tuple(p for p in u.query if not rules.strips(*p)))
        assert fuzzy_reduce(stripped, rules) == reduced


@criterion(10, "live smoke: 3 socket requests, 1 upstream log line, byte-exact header")
def test_c10_live_smoke():
    manifest = "20090628044051\t404\t-\thttp://site.pt/gone.png\tinline:\n"
    sim = UpstreamSimulator(parse_manifest_text(manifest))
    started = time.monotonic()
    with serve_handler(sim.serve) as upstream:
        proxy = ReverseProxy(ProxyConfig(), lambda req: http_fetch(upstream.address, req))
        with serve_handler(proxy.handle_request) as front:
            host, port = front.address.split(":")
            path = "/wayback/20090628044051im_/http://site.pt/gone.png"
            for _ in range(3):
                conn = http.client.HTTPConnection(host, int(port), timeout=10)
                conn.request("GET", path)
                raw = conn.getresponse()
                raw.read()
                assert raw.status == 404
                assert raw.getheader("Cache-Control") == "public, max-age=600"
                conn.close()
            upstream_lines = [l for l in upstream.log_lines if "gone.png" in l]
            assert len(upstream_lines) == 1
    assert time.monotonic() - started < 60


@criterion(11, "throughput: proxy sustains >= 250 req/s for 10s on loopback")
def test_c11_throughput():
    manifest = "20090628044051\t404\t-\thttp://site.pt/gone.png\tinline:\n"
    sim = UpstreamSimulator(parse_manifest_text(manifest))
    with serve_handler(sim.serve) as upstream:
        proxy = ReverseProxy(ProxyConfig(), lambda req: http_fetch(upstream.address, req))
        with serve_handler(proxy.handle_request) as front:
            host, port = front.address.split(":")
            path = "/wayback/20090628044051im_/http://site.pt/gone.png"
            conn = http.client.HTTPConnection(host, int(port), timeout=10)
            count = 0
            start = time.monotonic()
            deadline = start + 10.0
            while time.monotonic() < deadline:
                conn.request("GET", path)
                raw = conn.getresponse()
                raw.read()
                assert raw.status == 404
                count += 1
            elapsed = time.monotonic() - start
            conn.close()
    rate = count / elapsed
    print(f"[acceptance] C11 measured {rate:.0f} req/s over {elapsed:.1f}s")
    assert rate >= 250, rate
