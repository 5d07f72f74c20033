"""Request-log analysis: per-second rates, cumulative series, recurring-URL clusters.

Consumes HAR files (the `log.entries[]` subset below) or workload event logs.
All metrics are relative: absolute HAR timestamps are rebased to t=0 at the
first entry. A one-second duration floor keeps single-event logs divisible.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Sequence

from .urls import EMPTY_RULES, FuzzyRuleSet, fuzzy_key_of

# initial-burst rule: leading seconds whose request count exceeds this multiple
# of the whole-run mean rate
BURST_RATE_FACTOR = 2.0


class HarParseError(ValueError):
    pass


@dataclass(frozen=True)
class HarEntry:
    started_at: datetime
    method: str
    url: str
    status: int


@dataclass(frozen=True)
class RecurringCluster:
    key: str
    count: int
    statuses: Counter
    first_t: float
    last_t: float


@dataclass(frozen=True)
class TrafficReport:
    total: int
    duration: float
    per_second: tuple[tuple[int, int], ...]
    cumulative: tuple[tuple[int, int], ...]
    avg_per_minute: float
    burst_prefix: tuple[int, float]
    recurring: tuple[RecurringCluster, ...] = ()


@dataclass(frozen=True)
class ComparisonSummary:
    before_avg: float
    after_avg: float
    reduction_ratio: float
    before_total: int
    after_total: int


def parse_har(path: str | Path) -> list[HarEntry]:
    """Extract (startedDateTime, method, url, status) per entry, time-ordered.

    Extra fields are ignored; a missing response status becomes 0 so partial
    captures still analyze. An empty log is an empty list, not an error.
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise HarParseError(f"not valid JSON: {exc}") from None
    try:
        raw_entries = data["log"]["entries"]
    except (TypeError, KeyError):
        raise HarParseError("missing log.entries[]") from None
    if not isinstance(raw_entries, list):
        raise HarParseError("log.entries is not a list")

    entries = []
    for i, raw in enumerate(raw_entries):
        try:
            started = _parse_iso8601(raw["startedDateTime"])
            request = raw.get("request", {})
            method = request.get("method", "GET")
            url = request["url"]
        except (TypeError, KeyError, ValueError) as exc:
            raise HarParseError(f"entry {i}: {exc}") from None
        status = raw.get("response", {}).get("status", 0)
        if not isinstance(status, int):
            status = 0
        entries.append(HarEntry(started, method, url, status))
    entries.sort(key=lambda e: e.started_at)
    return entries


def _parse_iso8601(text: str) -> datetime:
    # Python 3.10 fromisoformat has no Z support
    return datetime.fromisoformat(text.replace("Z", "+00:00"))


def _normalize(entries: Sequence) -> list[tuple[float, str, int]]:
    """Reduce HarEntry or ClientEvent sequences to (t, url, status) triples."""
    if not entries:
        return []
    first = entries[0]
    if isinstance(first, HarEntry):
        base = min(e.started_at for e in entries)
        triples = [((e.started_at - base).total_seconds(), e.url, e.status) for e in entries]
    else:
        triples = [(e.t, e.url, e.status) for e in entries]
    triples.sort(key=lambda x: x[0])
    return triples


def build_report(entries: Sequence, min_repeats: int = 3) -> TrafficReport:
    """Compute every report field from a request log.

    The burst prefix is the run of leading seconds whose per-second count stays
    above BURST_RATE_FACTOR times the whole-run mean rate; reported as
    (requests within the run, seconds it lasted).
    """
    triples = _normalize(entries)
    if not triples:
        return TrafficReport(0, 1.0, ((0, 0),), ((0, 0),), 0.0, (0, 0.0))

    total = len(triples)
    t_first = triples[0][0]
    t_last = triples[-1][0]
    duration = max(1.0, t_last - t_first)

    seconds = int(math.floor(duration))
    counts = [0] * (seconds + 1)
    for t, _, _ in triples:
        idx = min(int(math.floor(t - t_first)), seconds)
        counts[idx] += 1
    per_second = tuple(enumerate(counts))
    cumulative = []
    running = 0
    for i, c in enumerate(counts):
        running += c
        cumulative.append((i, running))

    mean_rate = total / duration
    threshold = BURST_RATE_FACTOR * mean_rate
    burst_requests = 0
    burst_seconds = 0
    for _, count in per_second:
        if count > threshold:
            burst_requests += count
            burst_seconds += 1
        else:
            break

    return TrafficReport(
        total=total,
        duration=duration,
        per_second=per_second,
        cumulative=tuple(cumulative),
        avg_per_minute=total * 60.0 / duration,
        burst_prefix=(burst_requests, float(burst_seconds)),
        recurring=tuple(detect_recurring(entries, min_repeats, EMPTY_RULES)),
    )


def detect_recurring(
    entries: Sequence, min_repeats: int, rules: FuzzyRuleSet = EMPTY_RULES
) -> list[RecurringCluster]:
    """Group requests by fuzzy-reduced URL; clusters of at least `min_repeats`
    come back largest first, ties broken by earliest first appearance."""
    triples = _normalize(entries)
    grouped: dict[str, list[tuple[float, int]]] = {}
    for t, url, status in triples:
        grouped.setdefault(fuzzy_key_of(url, rules), []).append((t, status))

    clusters = []
    for key, hits in grouped.items():
        if len(hits) < min_repeats:
            continue
        clusters.append(
            RecurringCluster(
                key=key,
                count=len(hits),
                statuses=Counter(s for _, s in hits),
                first_t=min(t for t, _ in hits),
                last_t=max(t for t, _ in hits),
            )
        )
    clusters.sort(key=lambda c: (-c.count, c.first_t))
    return clusters


def compare_reports(before: TrafficReport, after: TrafficReport) -> ComparisonSummary:
    if before.total == 0:
        ratio = 0.0
    else:
        ratio = 1.0 - after.total / before.total
    return ComparisonSummary(
        before_avg=before.avg_per_minute,
        after_avg=after.avg_per_minute,
        reduction_ratio=ratio,
        before_total=before.total,
        after_total=after.total,
    )


def render_comparison(summary: ComparisonSummary) -> str:
    lines = [
        f"before_total:     {summary.before_total}",
        f"after_total:      {summary.after_total}",
        f"before_avg_per_minute: {summary.before_avg:.2f}",
        f"after_avg_per_minute:  {summary.after_avg:.2f}",
        f"reduction_ratio:  {summary.reduction_ratio:.3f}",
    ]
    return "\n".join(lines) + "\n"


def emit_series_csv(report: TrafficReport, path: str | Path) -> None:
    """Plot-ready per-second series: one row per second from 0 to floor(duration)."""
    with open(path, "w", newline="") as fh:
        fh.write("second,count,cumulative\n")
        for (sec, count), (_, cum) in zip(report.per_second, report.cumulative):
            fh.write(f"{sec},{count},{cum}\n")


def render_report_text(report: TrafficReport, top_clusters: int = 5) -> str:
    burst_k, burst_t = report.burst_prefix
    lines = [
        f"total_requests:   {report.total}",
        f"duration_seconds: {report.duration:.1f}",
        f"avg_per_minute:   {report.avg_per_minute:.2f}",
        f"burst_prefix:     {burst_k} requests in first {burst_t:.0f}s",
        f"recurring_clusters: {len(report.recurring)}",
    ]
    for cluster in report.recurring[:top_clusters]:
        statuses = ",".join(f"{s}x{n}" for s, n in sorted(cluster.statuses.items()))
        lines.append(f"  {cluster.count:>6}  [{statuses}]  {cluster.key}")
    return "\n".join(lines) + "\n"
