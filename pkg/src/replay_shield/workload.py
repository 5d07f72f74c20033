"""Deterministic simulator of pathological replayed-page behaviors.

A page is a declarative spec: resources fetched once at load plus behaviors
that keep issuing requests on a schedule (carousel loops, loader retries,
onerror fallbacks, XHR polls). Time advances in 0.1s ticks on a logical clock;
the transport has zero latency, so request rates are purely schedule-driven
and two runs over the same upstream state produce identical event logs.

Every would-be request consults the browser memory-cache model first, then the
optional repeat limiter, and only then the transport.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence
from urllib.parse import urljoin

from . import configtext
from .cache import parse_cache_control
from .configtext import ConfigError
from .httpmsg import Request, Response

TICK = 0.1
_EPS = 1e-9
_MAX_REDIRECTS = 5

Transport = Callable[[Request], Response]


class UnknownScenario(ValueError):
    pass


class LogicalClock:
    """Simulation time source; the workload loop is the only writer."""

    def __init__(self, start: float = 0.0):
        self._now = start

    def now(self) -> float:
        return self._now

    def set(self, t: float) -> None:
        self._now = t


@dataclass(frozen=True)
class CarouselLoop:
    """Requests the next URL of a cycle every `period` seconds."""

    urls: tuple[str, ...]
    period: float

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError("period must be > 0")
        if not self.urls:
            raise ValueError("carousel needs at least one URL")


@dataclass(frozen=True)
class LoaderRetry:
    """Each cycle re-requests every templated URL that has not yet returned 200.

    `url_template` contains a `#` placeholder replaced by 0..count-1.
    """

    url_template: str
    count: int
    cycle_period: float

    def __post_init__(self):
        if self.cycle_period <= 0:
            raise ValueError("cycle_period must be > 0")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if "#" not in self.url_template:
            raise ValueError("url_template needs a '#' placeholder")


@dataclass(frozen=True)
class OnErrorFallback:
    """Requests `primary`; on a non-200 also requests the fallback, retrying
    both every `retry_period` seconds until the primary succeeds."""

    primary: str
    fallback_template: str
    retry_period: float

    def __post_init__(self):
        if self.retry_period <= 0:
            raise ValueError("retry_period must be > 0")


@dataclass(frozen=True)
class XhrPoll:
    """Unconditional fixed-interval request."""

    url: str
    interval: float

    def __post_init__(self):
        if self.interval <= 0:
            raise ValueError("interval must be > 0")


Behavior = CarouselLoop | LoaderRetry | OnErrorFallback | XhrPoll


@dataclass(frozen=True)
class PageSpec:
    name: str
    essential_resources: tuple[str, ...]
    behaviors: tuple[Behavior, ...]
    duration: float

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be > 0")

    def distinct_urls(self) -> set[str]:
        urls = set(self.essential_resources)
        for b in self.behaviors:
            if isinstance(b, CarouselLoop):
                urls.update(b.urls)
            elif isinstance(b, LoaderRetry):
                urls.update(b.url_template.replace("#", str(i)) for i in range(b.count))
            elif isinstance(b, OnErrorFallback):
                urls.add(b.primary)
                urls.add(b.fallback_template.replace("#", b.primary))
            elif isinstance(b, XhrPoll):
                urls.add(b.url)
        return urls


@dataclass(frozen=True)
class LimiterRule:
    """Client-side guard: once a URL has returned the same non-200 status
    `min_repeats` times, replay the prior response instead of hitting the network."""

    enabled: bool = False
    min_repeats: int = 3

    def __post_init__(self):
        if self.min_repeats < 2:
            raise ValueError("min_repeats must be >= 2")


def limiter_filter(network_statuses: Sequence[int], rule: LimiterRule) -> bool:
    """True when the URL's network history triggers suppression."""
    if not rule.enabled or len(network_statuses) < rule.min_repeats:
        return False
    first = network_statuses[0]
    return first != 200 and all(s == first for s in network_statuses)


class EventSource(str, Enum):
    NETWORK = "network"
    MEMORY_CACHE = "memory_cache"
    LIMITER_SUPPRESSED = "limiter_suppressed"


@dataclass(frozen=True)
class ClientEvent:
    t: float
    url: str
    source: EventSource
    status: int


def browser_cache_decide(url: str, response: Response) -> float | None:
    """Lifetime to cache `response` under, or None for do-not-cache.

    Browsers keep 200s in the memory cache for the whole session; error
    responses are kept only when Cache-Control grants them a positive max-age.
    """
    directives = parse_cache_control(response.header("Cache-Control"))
    if directives.no_store:
        return None
    if response.status == 200:
        return math.inf
    if directives.max_age is not None and directives.max_age > 0:
        return float(directives.max_age)
    return None


@dataclass
class _BrowserEntry:
    response: Response
    stored_at: float
    lifetime: float


class BrowserCacheModel:
    def __init__(self):
        self.entries: dict[str, _BrowserEntry] = {}

    def fresh_response(self, url: str, now: float) -> Response | None:
        entry = self.entries.get(url)
        if entry is not None and now - entry.stored_at < entry.lifetime:
            return entry.response
        return None

    def offer(self, url: str, response: Response, now: float) -> None:
        lifetime = browser_cache_decide(url, response)
        if lifetime is not None:
            self.entries[url] = _BrowserEntry(response, now, lifetime)


class _BehaviorRun:
    def __init__(self, behavior: Behavior):
        self.behavior = behavior
        self.fired = 0

    @property
    def period(self) -> float:
        b = self.behavior
        if isinstance(b, CarouselLoop):
            return b.period
        if isinstance(b, LoaderRetry):
            return b.cycle_period
        if isinstance(b, OnErrorFallback):
            return b.retry_period
        return b.interval

    def next_due(self) -> float:
        return (self.fired + 1) * self.period


class _CarouselRun(_BehaviorRun):
    def __init__(self, behavior: CarouselLoop):
        super().__init__(behavior)
        self.index = 0

    def fire(self, page: "_PageRun", t: float) -> None:
        page.fetch(self.behavior.urls[self.index % len(self.behavior.urls)], t)
        self.index += 1


class _LoaderRetryRun(_BehaviorRun):
    def __init__(self, behavior: LoaderRetry):
        super().__init__(behavior)
        self.pending = [behavior.url_template.replace("#", str(i)) for i in range(behavior.count)]

    def fire(self, page: "_PageRun", t: float) -> None:
        for url in list(self.pending):
            if page.fetch(url, t).status == 200:
                self.pending.remove(url)


class _OnErrorRun(_BehaviorRun):
    def __init__(self, behavior: OnErrorFallback):
        super().__init__(behavior)
        self.succeeded = False

    def fire(self, page: "_PageRun", t: float) -> None:
        if self.succeeded:
            return
        b = self.behavior
        if page.fetch(b.primary, t).status == 200:
            self.succeeded = True
            return
        page.fetch(b.fallback_template.replace("#", b.primary), t)


class _XhrPollRun(_BehaviorRun):
    def fire(self, page: "_PageRun", t: float) -> None:
        page.fetch(self.behavior.url, t)


def _make_run(behavior: Behavior) -> _BehaviorRun:
    if isinstance(behavior, CarouselLoop):
        return _CarouselRun(behavior)
    if isinstance(behavior, LoaderRetry):
        return _LoaderRetryRun(behavior)
    if isinstance(behavior, OnErrorFallback):
        return _OnErrorRun(behavior)
    if isinstance(behavior, XhrPoll):
        return _XhrPollRun(behavior)
    raise TypeError(f"unknown behavior {behavior!r}")


class _PageRun:
    def __init__(self, transport: Transport, limiter: LimiterRule):
        self.transport = transport
        self.limiter = limiter
        self.browser_cache = BrowserCacheModel()
        self.events: list[ClientEvent] = []
        self.network_statuses: dict[str, list[int]] = {}
        self.last_network_response: dict[str, Response] = {}

    def fetch(self, url: str, t: float) -> Response:
        """One logical resource fetch, following redirects."""
        response = self._request_once(url, t)
        for _ in range(_MAX_REDIRECTS):
            if response.status not in (301, 302, 303, 307, 308):
                break
            location = response.header("Location")
            if not location:
                break
            url = urljoin(url, location)
            response = self._request_once(url, t)
        return response

    def _request_once(self, url: str, t: float) -> Response:
        cached = self.browser_cache.fresh_response(url, t)
        if cached is not None:
            self.events.append(ClientEvent(t, url, EventSource.MEMORY_CACHE, cached.status))
            return cached

        history = self.network_statuses.get(url, [])
        if limiter_filter(history, self.limiter):
            replay = self.last_network_response[url]
            self.events.append(ClientEvent(t, url, EventSource.LIMITER_SUPPRESSED, replay.status))
            return replay

        try:
            response = self.transport(Request("GET", url))
        except Exception:
            response = Response(0)
        self.events.append(ClientEvent(t, url, EventSource.NETWORK, response.status))
        self.network_statuses.setdefault(url, []).append(response.status)
        self.last_network_response[url] = response
        self.browser_cache.offer(url, response, t)
        return response


def run_page(
    spec: PageSpec,
    transport: Transport,
    clock: LogicalClock | None = None,
    limiter: LimiterRule = LimiterRule(),
) -> list[ClientEvent]:
    """Simulate the page for its duration; returns the complete event log."""
    clock = clock or LogicalClock()
    page = _PageRun(transport, limiter)
    runs = [_make_run(b) for b in spec.behaviors]

    clock.set(0.0)
    for url in spec.essential_resources:
        page.fetch(url, 0.0)

    ticks = int(round(spec.duration / TICK))
    for tick in range(1, ticks + 1):
        t = tick * TICK
        clock.set(t)
        for run in runs:
            while run.next_due() <= t + _EPS:
                run.fire(page, t)
                run.fired += 1
    return page.events


def write_events_csv(events: Sequence[ClientEvent], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_seconds", "url", "source", "status"])
        for e in events:
            writer.writerow([f"{e.t:.1f}", e.url, e.source.value, e.status])


def read_events_csv(path: str | Path) -> list[ClientEvent]:
    events = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            events.append(
                ClientEvent(
                    t=float(row["t_seconds"]),
                    url=row["url"],
                    source=EventSource(row["source"]),
                    status=int(row["status"]),
                )
            )
    return events


# ---------------------------------------------------------------------------
# Canned scenarios modeled on pages observed misbehaving in real archives.
# ---------------------------------------------------------------------------

ARCHIVE_PREFIX = "http://archive.test/wayback"

# 12 images per retry cycle tuned to ~1098 requests/minute overall
_CAROUSEL12_CYCLE = 12 * 60 / 1098.36


def _mre() -> tuple[PageSpec, str]:
    ts = "20210915120000"
    site = "http://mre.example"
    page = f"{ARCHIVE_PREFIX}/{ts}/{site}/MREcarousel.html"
    assets = (
        f"{ARCHIVE_PREFIX}/{ts}js_/{site}/js/jquery.min.js",
        f"{ARCHIVE_PREFIX}/{ts}js_/{site}/js/carousel.js",
        f"{ARCHIVE_PREFIX}/{ts}cs_/{site}/css/carousel.css",
    )
    images = tuple(f"{ARCHIVE_PREFIX}/{ts}im_/{site}/img/photo{i}.jpg" for i in (1, 2, 3))
    spec = PageSpec(
        name="mre",
        essential_resources=(page,) + assets,
        behaviors=(CarouselLoop(urls=images, period=1 / 3),),
        duration=60.0,
    )
    manifest = [
        _record(ts, 200, "text/html", f"{site}/MREcarousel.html", "<html>carousel</html>"),
        _record(ts, 200, "application/javascript", f"{site}/js/jquery.min.js", "jquery()"),
        _record(ts, 200, "application/javascript", f"{site}/js/carousel.js", "carousel()"),
        _record(ts, 200, "text/css", f"{site}/css/carousel.css", ".carousel{}"),
    ]
    manifest += [_record(ts, 404, "-", f"{site}/img/photo{i}.jpg", "") for i in (1, 2, 3)]
    return spec, "\n".join(manifest) + "\n"


def _carousel12() -> tuple[PageSpec, str]:
    ts = "20090628044051"
    js_ts = "20090628052553"
    site = "http://www.radiocomercial.iol.pt"
    page = f"{ARCHIVE_PREFIX}/{ts}/{site}/"
    slideshow = f"{ARCHIVE_PREFIX}/{js_ts}js_/{site}/jscript/slideshow/slideshow.js"
    spec = PageSpec(
        name="carousel12",
        essential_resources=(page, slideshow),
        behaviors=(
            LoaderRetry(
                url_template=f"{ARCHIVE_PREFIX}/{ts}im_/{site}/styles/slideshow/loader-#.png",
                count=12,
                cycle_period=_CAROUSEL12_CYCLE,
            ),
        ),
        duration=60.0,
    )
    manifest = [
        _record(ts, 200, "text/html", f"{site}/", "<html>radio</html>"),
        _record(js_ts, 200, "application/javascript", f"{site}/jscript/slideshow/slideshow.js", "loader()"),
    ]
    manifest += [
        _record(ts, 404, "-", f"{site}/styles/slideshow/loader-{i}.png", "") for i in range(12)
    ]
    return spec, "\n".join(manifest) + "\n"


def _onerror_playlist() -> tuple[PageSpec, str]:
    ts = "20100803165224"
    site = "http://www.radiocomercial.iol.pt"
    page = f"{ARCHIVE_PREFIX}/{ts}/{site}/"
    player_js = f"{ARCHIVE_PREFIX}/{ts}js_/{site}/js/player.js"
    cover = f"{ARCHIVE_PREFIX}/{ts}im_/{site}/global_aspx/images/cover_300[35X35].jpg"
    resize = f"{ARCHIVE_PREFIX}/{ts}mp_/{site}/global_aspx/resize.aspx?img=/upload/O/cover_300.jpg&h=35&w=35"
    nowplaying = f"{ARCHIVE_PREFIX}/{ts}mp_/{site}/xsl_files/includes/nowplaying.xsl"
    spec = PageSpec(
        name="onerror_playlist",
        essential_resources=(page, player_js),
        behaviors=(
            OnErrorFallback(primary=cover, fallback_template=resize, retry_period=2.0),
            XhrPoll(url=nowplaying, interval=3.0),
        ),
        duration=60.0,
    )
    manifest = [
        _record(ts, 200, "text/html", f"{site}/", "<html>playlist</html>"),
        _record(ts, 200, "application/javascript", f"{site}/js/player.js", "call_resize()"),
        _record(ts, 404, "-", f"{site}/global_aspx/images/cover_300[35X35].jpg", ""),
        _record(ts, 404, "-", f"{site}/global_aspx/resize.aspx?img=/upload/O/cover_300.jpg&h=35&w=35", ""),
        _record(ts, 404, "-", f"{site}/xsl_files/includes/nowplaying.xsl", ""),
    ]
    return spec, "\n".join(manifest) + "\n"


def _feed_poll() -> tuple[PageSpec, str]:
    page_ts, feed_ts = "20210901092755", "20210901092756"
    page = f"{ARCHIVE_PREFIX}/{page_ts}/https://www.livesport.com/en/"
    feeds = (
        f"{ARCHIVE_PREFIX}/{feed_ts}/https://d.livesport.com/en/x/feed/u_0_1",
        f"{ARCHIVE_PREFIX}/{feed_ts}/https://d.livesport.com/en/x/feed/sys_1",
    )
    spec = PageSpec(
        name="feed_poll",
        essential_resources=(page,),
        behaviors=tuple(XhrPoll(url=f, interval=5.0) for f in feeds),
        duration=60.0,
    )
    manifest = [
        _record(page_ts, 200, "text/html", "https://www.livesport.com/en/", "<html>scores</html>"),
        _record(feed_ts, 404, "-", "https://d.livesport.com/en/x/feed/u_0_1", ""),
        _record(feed_ts, 404, "-", "https://d.livesport.com/en/x/feed/sys_1", ""),
    ]
    return spec, "\n".join(manifest) + "\n"


def _record(ts: str, status: int, content_type: str, target: str, body: str) -> str:
    return f"{ts}\t{status}\t{content_type}\t{target}\tinline:{body}"


_SCENARIOS = {
    "mre": _mre,
    "carousel12": _carousel12,
    "onerror_playlist": _onerror_playlist,
    "feed_poll": _feed_poll,
}

SCENARIO_NAMES = tuple(sorted(_SCENARIOS))


def builtin_scenario(name: str) -> tuple[PageSpec, str]:
    """Return (page spec, upstream manifest text) for a canned scenario."""
    try:
        factory = _SCENARIOS[name]
    except KeyError:
        raise UnknownScenario(f"unknown scenario {name!r}; valid: {', '.join(SCENARIO_NAMES)}") from None
    return factory()


# ---------------------------------------------------------------------------
# Scenario spec file format (same key=value family as the proxy config).
# ---------------------------------------------------------------------------


def spec_to_text(spec: PageSpec) -> str:
    items: dict[str, str] = {"name": spec.name, "duration": repr(spec.duration)}
    for i, url in enumerate(spec.essential_resources):
        items[f"essential.{i}"] = url
    for i, b in enumerate(spec.behaviors):
        p = f"behavior.{i}"
        if isinstance(b, CarouselLoop):
            items[f"{p}.type"] = "carousel_loop"
            items[f"{p}.period"] = repr(b.period)
            for j, url in enumerate(b.urls):
                items[f"{p}.urls.{j}"] = url
        elif isinstance(b, LoaderRetry):
            items[f"{p}.type"] = "loader_retry"
            items[f"{p}.template"] = b.url_template
            items[f"{p}.count"] = str(b.count)
            items[f"{p}.cycle_period"] = repr(b.cycle_period)
        elif isinstance(b, OnErrorFallback):
            items[f"{p}.type"] = "onerror_fallback"
            items[f"{p}.primary"] = b.primary
            items[f"{p}.fallback"] = b.fallback_template
            items[f"{p}.retry_period"] = repr(b.retry_period)
        elif isinstance(b, XhrPoll):
            items[f"{p}.type"] = "xhr_poll"
            items[f"{p}.url"] = b.url
            items[f"{p}.interval"] = repr(b.interval)
    return configtext.format_config_text(items)


def spec_from_text(text: str) -> PageSpec:
    items = configtext.parse_config_text(text)
    if "name" not in items or "duration" not in items:
        raise ConfigError("scenario spec needs 'name' and 'duration'")
    behaviors: list[Behavior] = []
    for i in range(len([k for k in items if k.endswith(".type") and k.startswith("behavior.")])):
        p = f"behavior.{i}"
        btype = items.get(f"{p}.type")
        if btype is None:
            raise ConfigError(f"behavior indices must be contiguous; missing {p}.type")
        try:
            if btype == "carousel_loop":
                behaviors.append(
                    CarouselLoop(
                        urls=tuple(configtext.indexed_values(items, f"{p}.urls")),
                        period=configtext.parse_float(items[f"{p}.period"], f"{p}.period"),
                    )
                )
            elif btype == "loader_retry":
                behaviors.append(
                    LoaderRetry(
                        url_template=items[f"{p}.template"],
                        count=configtext.parse_int(items[f"{p}.count"], f"{p}.count"),
                        cycle_period=configtext.parse_float(items[f"{p}.cycle_period"], f"{p}.cycle_period"),
                    )
                )
            elif btype == "onerror_fallback":
                behaviors.append(
                    OnErrorFallback(
                        primary=items[f"{p}.primary"],
                        fallback_template=items[f"{p}.fallback"],
                        retry_period=configtext.parse_float(items[f"{p}.retry_period"], f"{p}.retry_period"),
                    )
                )
            elif btype == "xhr_poll":
                behaviors.append(
                    XhrPoll(
                        url=items[f"{p}.url"],
                        interval=configtext.parse_float(items[f"{p}.interval"], f"{p}.interval"),
                    )
                )
            else:
                raise ConfigError(f"{p}.type: unknown behavior type {btype!r}")
        except KeyError as exc:
            raise ConfigError(f"{p}: missing key {exc}") from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    try:
        return PageSpec(
            name=items["name"],
            essential_resources=tuple(configtext.indexed_values(items, "essential")),
            behaviors=tuple(behaviors),
            duration=configtext.parse_float(items["duration"], "duration"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
