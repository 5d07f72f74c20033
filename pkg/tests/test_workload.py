"""Page behavior simulation: schedules, browser cache model, limiter."""

from __future__ import annotations

import pytest

from replay_shield.cache import CachePolicy
from replay_shield.httpmsg import Request, Response
from replay_shield.proxy import InjectionConfig, InjectionMode, ProxyConfig, ReverseProxy
from replay_shield.upstream import UpstreamSimulator, parse_manifest_text
from replay_shield.workload import (
    BrowserCacheModel,
    CarouselLoop,
    ClientEvent,
    EventSource,
    LimiterRule,
    LoaderRetry,
    LogicalClock,
    OnErrorFallback,
    PageSpec,
    UnknownScenario,
    XhrPoll,
    browser_cache_decide,
    builtin_scenario,
    limiter_filter,
    read_events_csv,
    run_page,
    spec_from_text,
    spec_to_text,
    write_events_csv,
)


def counting_transport(missing: set[str] | None = None, headers: tuple = ()):
    missing = missing or set()
    calls: list[str] = []

    def transport(request: Request) -> Response:
        calls.append(request.url)
        if request.url in missing:
            return Response(404, headers, b"nope")
        return Response(200, headers, b"ok")

    return transport, calls


def network_events(events: list[ClientEvent]) -> list[ClientEvent]:
    return [e for e in events if e.source is EventSource.NETWORK]


def mre_stack(cache_on: bool):
    """Full in-process pipeline: workload -> proxy -> simulated archive."""
    spec, manifest = builtin_scenario("mre")
    sim = UpstreamSimulator(parse_manifest_text(manifest))
    clock = LogicalClock()
    cfg = ProxyConfig(
        injection=InjectionConfig(mode=InjectionMode.ALWAYS if cache_on else InjectionMode.OFF),
        proxy_caching_enabled=cache_on,
        policy=CachePolicy(),
    )
    proxy = ReverseProxy(cfg, lambda req: sim.serve(req, clock.now()))
    transport = lambda req: proxy.handle_request(req, clock.now())
    return spec, transport, clock, proxy, sim


class TestRunPageSchedules:
    def test_mre_without_injection_rate(self):
        spec, transport, clock, _, _ = mre_stack(cache_on=False)
        events = run_page(spec, transport, clock)
        # schedule oracle: essentials + one carousel tick every 1/3 s
        expected_fires = sum(1 for k in range(1, 100000) if k * (1 / 3) <= 60 + 1e-9)
        net = network_events(events)
        assert len(net) == 4 + expected_fires
        assert 166 <= len(net) <= 188

    def test_mre_with_injection_exactly_seven(self):
        spec, transport, clock, proxy, _ = mre_stack(cache_on=True)
        events = run_page(spec, transport, clock)
        net = network_events(events)
        assert len(net) == 7
        assert len({e.url for e in net}) == 7
        later = [e for e in events if e not in net]
        assert all(e.source is EventSource.MEMORY_CACHE for e in later)
        assert proxy.metrics_snapshot().upstream_requests == 7

    def test_no_behaviors_only_essentials(self):
        transport, calls = counting_transport()
        spec = PageSpec("bare", ("http://a/1", "http://a/2"), (), duration=5.0)
        events = run_page(spec, transport)
        assert len(network_events(events)) == 2
        assert calls == ["http://a/1", "http://a/2"]

    def test_xhr_poll_count(self):
        transport, calls = counting_transport(missing={"http://a/feed"})
        spec = PageSpec("poll", (), (XhrPoll("http://a/feed", interval=5.0),), duration=60.0)
        events = run_page(spec, transport)
        assert len(events) == 12
        assert events[0].t == pytest.approx(5.0)
        assert events[-1].t == pytest.approx(60.0)

    def test_carousel_cycles_urls_in_order(self):
        transport, calls = counting_transport(missing={"http://a/1", "http://a/2"})
        spec = PageSpec(
            "c", (), (CarouselLoop(urls=("http://a/1", "http://a/2"), period=1.0),), duration=4.0
        )
        run_page(spec, transport)
        assert calls == ["http://a/1", "http://a/2", "http://a/1", "http://a/2"]

    def test_loader_retry_drops_succeeded_urls(self):
        # URL 0 succeeds; only 404 URLs are retried on later cycles
        transport, calls = counting_transport(missing={"http://a/img-1", "http://a/img-2"})
        spec = PageSpec(
            "l",
            (),
            (LoaderRetry(url_template="http://a/img-#", count=3, cycle_period=1.0),),
            duration=3.0,
        )
        run_page(spec, transport)
        assert calls.count("http://a/img-0") == 1
        assert calls.count("http://a/img-1") == 3
        assert calls.count("http://a/img-2") == 3

    def test_onerror_fallback_pairs(self):
        transport, calls = counting_transport(missing={"http://a/img", "http://a/resize?img=x"})
        spec = PageSpec(
            "o",
            (),
            (OnErrorFallback(primary="http://a/img", fallback_template="http://a/resize?img=x", retry_period=2.0),),
            duration=6.0,
        )
        run_page(spec, transport)
        assert calls == ["http://a/img", "http://a/resize?img=x"] * 3

    def test_onerror_stops_after_primary_succeeds(self):
        transport, calls = counting_transport()
        spec = PageSpec(
            "o",
            (),
            (OnErrorFallback(primary="http://a/img", fallback_template="http://a/r", retry_period=1.0),),
            duration=10.0,
        )
        run_page(spec, transport)
        # 200s enter the session cache, so even the success fires once only
        assert calls == ["http://a/img"]

    def test_sub_tick_periods_fire_multiple_times_per_tick(self):
        transport, calls = counting_transport(missing={"http://a/x"})
        spec = PageSpec("f", (), (XhrPoll("http://a/x", interval=0.05),), duration=1.0)
        events = run_page(spec, transport)
        assert len(events) == 20

    def test_events_nondecreasing_time(self):
        spec, transport, clock, _, _ = mre_stack(cache_on=False)
        events = run_page(spec, transport, clock)
        assert all(a.t <= b.t for a, b in zip(events, events[1:]))

    def test_deterministic_event_log(self):
        runs = []
        for _ in range(2):
            spec, transport, clock, _, _ = mre_stack(cache_on=True)
            runs.append(run_page(spec, transport, clock))
        assert runs[0] == runs[1]


class TestRedirectFollowing:
    def test_nearest_timestamp_redirect_followed_to_capture(self):
        manifest = "20090628044051\t200\timage/png\thttp://site.pt/ok.png\tinline:png!\n"
        sim = UpstreamSimulator(parse_manifest_text(manifest))
        clock = LogicalClock()
        transport = lambda req: sim.serve(req, clock.now())
        # the page asks for a timestamp the archive lacks; the backend answers
        # with a redirect to the closest capture it has
        requested = "http://a.test/wayback/20091231000000im_/http://site.pt/ok.png"
        spec = PageSpec("r", (requested,), (), duration=1.0)
        events = run_page(spec, transport, clock)
        assert [e.status for e in events] == [302, 200]
        assert events[1].url == "http://a.test/wayback/20090628044051im_/http://site.pt/ok.png"
        assert all(e.source is EventSource.NETWORK for e in events)


class TestTransportFailures:
    def test_failure_recorded_as_status_zero(self):
        def exploding(request: Request) -> Response:
            raise ConnectionError("boom")

        spec = PageSpec("x", ("http://a/1",), (), duration=1.0)
        events = run_page(spec, exploding)
        assert len(events) == 1
        assert events[0].status == 0
        assert events[0].source is EventSource.NETWORK


class TestBrowserCacheDecide:
    def test_200_cached_for_session(self):
        assert browser_cache_decide("u", Response(200, (), b"ok")) == float("inf")

    def test_404_without_header_not_cached(self):
        assert browser_cache_decide("u", Response(404, (), b"")) is None

    def test_404_with_public_max_age_cached(self):
        r = Response(404, (("Cache-Control", "public, max-age=600"),), b"")
        assert browser_cache_decide("u", r) == 600.0

    def test_no_store_never_cached(self):
        r = Response(200, (("Cache-Control", "no-store"),), b"")
        assert browser_cache_decide("u", r) is None

    def test_max_age_zero_not_cached(self):
        r = Response(404, (("Cache-Control", "max-age=0"),), b"")
        assert browser_cache_decide("u", r) is None

    def test_model_expiry(self):
        model = BrowserCacheModel()
        r = Response(404, (("Cache-Control", "max-age=10"),), b"")
        model.offer("u", r, now=0.0)
        assert model.fresh_response("u", now=9.9) is not None
        assert model.fresh_response("u", now=10.0) is None


class TestLimiter:
    def test_three_prior_404s_suppresses(self):
        assert limiter_filter([404, 404, 404], LimiterRule(enabled=True, min_repeats=3))

    def test_two_prior_404s_passes(self):
        assert not limiter_filter([404, 404], LimiterRule(enabled=True, min_repeats=3))

    def test_200_repeats_never_suppressed(self):
        assert not limiter_filter([200, 200, 200], LimiterRule(enabled=True, min_repeats=3))

    def test_mixed_statuses_pass(self):
        assert not limiter_filter([404, 500, 404], LimiterRule(enabled=True, min_repeats=3))

    def test_disabled_passes(self):
        assert not limiter_filter([404] * 10, LimiterRule(enabled=False))

    def test_min_repeats_validation(self):
        with pytest.raises(ValueError):
            LimiterRule(min_repeats=1)

    def test_limiter_caps_network_requests(self):
        transport, calls = counting_transport(missing={"http://a/feed"})
        spec = PageSpec("p", (), (XhrPoll("http://a/feed", interval=1.0),), duration=20.0)
        events = run_page(spec, transport, limiter=LimiterRule(enabled=True, min_repeats=3))
        assert calls.count("http://a/feed") == 3
        suppressed = [e for e in events if e.source is EventSource.LIMITER_SUPPRESSED]
        assert len(suppressed) == 17
        assert all(e.status == 404 for e in suppressed)


class TestScenarios:
    def test_mre_shape(self):
        spec, manifest = builtin_scenario("mre")
        assert len(spec.essential_resources) == 4
        (carousel,) = spec.behaviors
        assert isinstance(carousel, CarouselLoop)
        assert carousel.period == pytest.approx(1 / 3)
        assert len(carousel.urls) == 3
        assert len(spec.distinct_urls()) == 7
        store = parse_manifest_text(manifest)
        assert len(store.records) == 7

    def test_carousel12_shape(self):
        spec, manifest = builtin_scenario("carousel12")
        (loader,) = spec.behaviors
        assert isinstance(loader, LoaderRetry)
        assert loader.count == 12
        urls = [loader.url_template.replace("#", str(i)) for i in range(12)]
        assert urls[0].endswith("loader-0.png")
        assert urls[11].endswith("loader-11.png")

    def test_onerror_playlist_shape(self):
        spec, _ = builtin_scenario("onerror_playlist")
        kinds = {type(b) for b in spec.behaviors}
        assert kinds == {OnErrorFallback, XhrPoll}
        (xhr,) = [b for b in spec.behaviors if isinstance(b, XhrPoll)]
        assert xhr.url.endswith(".xsl")

    def test_feed_poll_shape(self):
        spec, _ = builtin_scenario("feed_poll")
        assert len(spec.behaviors) == 2
        assert all(isinstance(b, XhrPoll) for b in spec.behaviors)

    def test_unknown_scenario(self):
        with pytest.raises(UnknownScenario):
            builtin_scenario("nope")


class TestSpecSerialization:
    @pytest.mark.parametrize("name", ["mre", "carousel12", "onerror_playlist", "feed_poll"])
    def test_round_trip(self, name):
        spec, _ = builtin_scenario(name)
        assert spec_from_text(spec_to_text(spec)) == spec

    def test_bad_spec_text(self):
        from replay_shield.configtext import ConfigError

        with pytest.raises(ConfigError):
            spec_from_text("name = x\n")
        with pytest.raises(ConfigError):
            spec_from_text("name = x\nduration = 5\nbehavior.0.type = warp\n")


class TestEventsCsv:
    def test_round_trip(self, tmp_path):
        events = [
            ClientEvent(0.0, "http://a/1", EventSource.NETWORK, 200),
            ClientEvent(0.4, "http://a/2", EventSource.NETWORK, 404),
            ClientEvent(0.7, "http://a/2", EventSource.MEMORY_CACHE, 404),
        ]
        path = tmp_path / "events.csv"
        write_events_csv(events, path)
        assert read_events_csv(path) == events
        header = path.read_text().splitlines()[0]
        assert header == "t_seconds,url,source,status"
