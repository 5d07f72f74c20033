"""Simulated archive replay backend.

Serves stored captures, 404s for holdings gaps, and optionally emulates
live-web patching: a miss redirects to a /save/_embed/ endpoint that archives
the resource if the (simulated) live web has it, with sliding-window 429
throttling on repeat attempts. No outbound network calls ever happen; the
"live web" is a static map loaded from the manifest.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from email.utils import format_datetime
from pathlib import Path

from .httpmsg import Request, Response, text_response
from .proxy import SlidingWindowThrottle, ThrottleConfig
from .urls import (
    UriR,
    UrlError,
    canonicalize,
    parse_urir,
    split_at_timestamp,
    validate_timestamp14,
)

logger = logging.getLogger(__name__)

NOT_FOUND_BODY = b"<!doctype html><html><body><h1>404 Not Found</h1><p>capture not in archive</p></body></html>"

# logical time 0 of a simulation run, used to mint timestamps for patched captures
DEFAULT_EPOCH = datetime(2021, 9, 1, 0, 0, 0, tzinfo=timezone.utc)


class ManifestParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"manifest line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class MementoRecord:
    target: UriR
    timestamp14: str
    status: int
    content_type: str
    body: bytes

    @property
    def memento_datetime(self) -> str:
        return rfc1123_from_timestamp14(self.timestamp14)


@dataclass
class MementoStore:
    """Archive holdings plus the simulated live web used by patch mode."""

    records: dict[tuple[str, str], MementoRecord] = field(default_factory=dict)
    live_web: dict[str, tuple[int, str, bytes]] = field(default_factory=dict)

    def insert(self, record: MementoRecord) -> None:
        self.records[(canonicalize(record.target), record.timestamp14)] = record

    def exact(self, key: str, timestamp14: str) -> MementoRecord | None:
        return self.records.get((key, timestamp14))

    def nearest_capture(self, key: str, timestamp14: str) -> MementoRecord | None:
        """Closest-in-time 200-status record for the target, if any."""
        wanted = _ts_seconds(timestamp14)
        best: MementoRecord | None = None
        best_gap = math.inf
        for (k, ts), record in self.records.items():
            if k != key or record.status != 200:
                continue
            gap = abs(_ts_seconds(ts) - wanted)
            if gap < best_gap:
                best, best_gap = record, gap
        return best


@dataclass(frozen=True)
class PatchConfig:
    enabled: bool = False
    patch_path_prefix: str = "/save/_embed/"
    throttle: ThrottleConfig = field(default_factory=lambda: ThrottleConfig(enabled=True))

    def __post_init__(self):
        if not (self.patch_path_prefix.startswith("/") and self.patch_path_prefix.endswith("/")):
            raise ValueError("patch_path_prefix must begin and end with '/'")


def rfc1123_from_timestamp14(ts14: str) -> str:
    dt = datetime.strptime(ts14, "%Y%m%d%H%M%S").replace(tzinfo=timezone.utc)
    return format_datetime(dt, usegmt=True)


def timestamp14_at(epoch: datetime, now_seconds: float) -> str:
    return (epoch + timedelta(seconds=now_seconds)).strftime("%Y%m%d%H%M%S")


def _ts_seconds(ts14: str) -> float:
    return datetime.strptime(ts14, "%Y%m%d%H%M%S").replace(tzinfo=timezone.utc).timestamp()


class UpstreamSimulator:
    """In-process archive server; also drives the live upstream role in wire mode."""

    def __init__(
        self,
        store: MementoStore,
        patch: PatchConfig = PatchConfig(),
        epoch: datetime = DEFAULT_EPOCH,
    ):
        self.store = store
        self.patch_config = patch
        self.epoch = epoch
        self.throttle = SlidingWindowThrottle(patch.throttle)
        self.request_log: list[tuple[str, int]] = []

    @property
    def request_count(self) -> int:
        return len(self.request_log)

    def status_counts(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for _, status in self.request_log:
            out[status] = out.get(status, 0) + 1
        return out

    def __call__(self, request: Request, now: float = 0.0) -> Response:
        return self.serve(request, now)

    def serve(self, request: Request, now: float) -> Response:
        response = self._dispatch(request, now)
        self.request_log.append((request.url, response.status))
        return response

    def _dispatch(self, request: Request, now: float) -> Response:
        path_and_query = _path_and_query(request.url)
        if self.patch_config.enabled and path_and_query.startswith(self.patch_config.patch_path_prefix):
            return self._patch(path_and_query[len(self.patch_config.patch_path_prefix):], now)

        try:
            prefix, ts, modifier, remainder = split_at_timestamp(path_and_query)
            target = parse_urir(remainder)
        except UrlError:
            return Response(404, (("Content-Type", "text/html"),), NOT_FOUND_BODY)

        key = canonicalize(target)
        record = self.store.exact(key, ts)
        if record is not None and record.status == 200:
            return Response(
                200,
                (
                    ("Content-Type", record.content_type),
                    ("Memento-Datetime", record.memento_datetime),
                ),
                record.body,
            )

        nearest = self.store.nearest_capture(key, ts)
        if nearest is not None:
            location = f"{prefix}/{nearest.timestamp14}{modifier}/{remainder}"
            return Response(302, (("Location", location),))

        if self.patch_config.enabled:
            return Response(302, (("Location", f"{self.patch_config.patch_path_prefix}{remainder}"),))
        return Response(404, (("Content-Type", "text/html"),), NOT_FOUND_BODY)

    def patch(self, target_url: str, now: float) -> Response:
        """Attempt to archive `target_url` from the simulated live web."""
        response = self._patch(target_url, now)
        self.request_log.append((self.patch_config.patch_path_prefix + target_url, response.status))
        return response

    def _patch(self, target_url: str, now: float) -> Response:
        try:
            target = parse_urir(target_url)
        except UrlError:
            return text_response(404, "unresolvable patch target")
        key = canonicalize(target)
        decision = self.throttle.check(self.patch_config.patch_path_prefix, key, now)
        if not decision.allowed:
            return Response(429, (("Retry-After", str(max(1, math.ceil(decision.retry_after)))),))
        live = self.store.live_web.get(key)
        if live is None or live[0] != 200:
            return text_response(404, "target not on the live web")
        status, content_type, body = live
        self.store.insert(
            MementoRecord(
                target=target,
                timestamp14=timestamp14_at(self.epoch, now),
                status=status,
                content_type=content_type,
                body=body,
            )
        )
        return text_response(200, f"archived {target_url}")


def _path_and_query(url: str) -> str:
    """Origin-form request target: path plus query, host stripped if present."""
    if url.startswith(("http://", "https://")):
        rest = url.split("://", 1)[1]
        slash = rest.find("/")
        return rest[slash:] if slash >= 0 else "/"
    return url


def parse_manifest_text(text: str, base_dir: Path | None = None) -> MementoStore:
    """Parse the tab-separated store manifest.

    Record lines: timestamp14 <TAB> status <TAB> content_type <TAB> target_url
    <TAB> body, where body is `inline:<text>` or a file path (resolved against
    the manifest's directory). Lines whose first field is `live:` describe the
    simulated live web instead. Later duplicates win, with a warning.
    """
    store = MementoStore()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise ManifestParseError(lineno, f"expected 5 tab-separated fields, got {len(fields)}")
        head, status_s, content_type, target_url, body_spec = fields

        try:
            status = int(status_s)
        except ValueError:
            raise ManifestParseError(lineno, f"bad status {status_s!r}") from None
        if not 0 <= status <= 599:
            raise ManifestParseError(lineno, f"status out of range: {status}")
        try:
            target = parse_urir(target_url)
        except UrlError as exc:
            raise ManifestParseError(lineno, str(exc)) from None
        body = _read_body(body_spec, base_dir)
        if content_type == "-":
            content_type = ""

        if head == "live:":
            store.live_web[canonicalize(target)] = (status, content_type, body)
            continue
        try:
            validate_timestamp14(head)
        except UrlError as exc:
            raise ManifestParseError(lineno, str(exc)) from None
        record = MementoRecord(target, head, status, content_type, body)
        dup_key = (canonicalize(target), head)
        if dup_key in store.records:
            logger.warning("manifest line %d: duplicate record for %s@%s, last one wins", lineno, target_url, head)
        store.records[dup_key] = record
    return store


def load_store_from_manifest(path: str | Path) -> MementoStore:
    p = Path(path)
    return parse_manifest_text(p.read_text(encoding="utf-8"), base_dir=p.parent)


def _read_body(spec: str, base_dir: Path | None) -> bytes:
    if spec.startswith("inline:"):
        return spec[len("inline:"):].encode("utf-8")
    path = Path(spec)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    return path.read_bytes()
