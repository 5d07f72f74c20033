"""Archival replay URL handling: URI-M parsing/formatting, canonical keys, fuzzy reduction.

A replay URL embeds the original resource URL behind an archive prefix and a
14-digit capture timestamp, e.g.

    https://arquivo.pt/wayback/20090628044051im_/http://example.org/img.png

Percent-encoding in paths and queries is preserved byte-for-byte so that
formatting a parsed URL reproduces the input exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from datetime import datetime

# Modifiers observed on real replay URLs. Unknown two-or-three-letter suffixes
# ending in "_" are accepted as opaque modifiers rather than rejected.
KNOWN_MODIFIERS = frozenset({"im_", "js_", "cs_", "mp_", "oe_", "id_"})

_TS_SEGMENT = re.compile(r"/(\d{14})([a-z]{2,3}_)?/")
_DEFAULT_PORTS = {"http": 80, "https": 443}


class UrlError(ValueError):
    """Base class for replay-URL parsing failures."""


class NoTimestampSegment(UrlError):
    """The URL contains no /YYYYMMDDHHMMSS[mod_]/ path segment."""


class InvalidTimestamp(UrlError):
    """The 14-digit segment is not a valid calendar datetime."""


class MalformedTarget(UrlError):
    """The embedded target is not an absolute http(s) URL."""


@dataclass(frozen=True)
class UriR:
    """An original-resource URL, split into comparable parts.

    `query` keeps raw (undecoded) name/value strings in document order; a value
    of None means the parameter had no "=" at all.
    """

    scheme: str
    host: str
    port: int | None = None
    path: str = ""
    query: tuple[tuple[str, str | None], ...] = ()
    fragment: str | None = None

    def format(self) -> str:
        netloc = self.host if self.port is None else f"{self.host}:{self.port}"
        out = f"{self.scheme}://{netloc}{self.path}"
        if self.query:
            out += "?" + format_query(self.query)
        if self.fragment is not None:
            out += "#" + self.fragment
        return out


@dataclass(frozen=True)
class UriM:
    """A replay URL: archive prefix + 14-digit timestamp + optional modifier + target."""

    archive_prefix: str
    timestamp14: str
    modifier: str  # "" when absent
    target: UriR

    def format(self) -> str:
        return f"{self.archive_prefix}/{self.timestamp14}{self.modifier}/{self.target.format()}"


@dataclass(frozen=True)
class FuzzyRuleSet:
    """Query-parameter stripping rules applied before canonicalization.

    A parameter is dropped when its name is in `strip_params`, or when
    `strip_numeric_only_params` is set and its value is all digits and longer
    than `threshold_digits` characters. Scheme, host, and path are never touched.
    """

    strip_params: frozenset[str] = frozenset()
    strip_numeric_only_params: bool = False
    threshold_digits: int = 8

    def strips(self, name: str, value: str | None) -> bool:
        if name in self.strip_params:
            return True
        if (
            self.strip_numeric_only_params
            and value is not None
            and value.isdigit()
            and len(value) > self.threshold_digits
        ):
            return True
        return False


EMPTY_RULES = FuzzyRuleSet()


def split_query(raw: str) -> tuple[tuple[str, str | None], ...]:
    """Split a raw query string into (name, value) pairs without decoding."""
    if raw == "":
        return ()
    pairs = []
    for seg in raw.split("&"):
        name, sep, value = seg.partition("=")
        pairs.append((name, value if sep else None))
    return tuple(pairs)


def format_query(pairs: tuple[tuple[str, str | None], ...]) -> str:
    return "&".join(n if v is None else f"{n}={v}" for n, v in pairs)


def parse_urir(url: str) -> UriR:
    """Parse an absolute http(s) URL into a UriR.

    Scheme and host are lowercased (DNS names are case-insensitive); path,
    query, and fragment bytes are kept exactly as given.
    """
    m = re.match(r"^([A-Za-z][A-Za-z0-9+.-]*)://([^/?#]*)([^?#]*)(?:\?([^#]*))?(?:#(.*))?$", url)
    if not m:
        raise MalformedTarget(f"not an absolute URL: {url!r}")
    scheme = m.group(1).lower()
    if scheme not in ("http", "https"):
        raise MalformedTarget(f"unsupported scheme {scheme!r} in {url!r}")
    netloc, path = m.group(2), m.group(3)
    rawquery, fragment = m.group(4), m.group(5)

    host, port = netloc, None
    if ":" in netloc:
        head, _, tail = netloc.rpartition(":")
        if tail.isdigit():
            host, port = head, int(tail)
        elif tail == "":
            host = head
    host = host.lower()
    if not host:
        raise MalformedTarget(f"empty host in {url!r}")

    return UriR(
        scheme=scheme,
        host=host,
        port=port,
        path=path,
        query=split_query(rawquery) if rawquery is not None else (),
        fragment=fragment,
    )


def parse_urim(url: str) -> UriM:
    """Split a replay URL at its first /{14 digits}{modifier}/ path segment.

    Everything before the segment is the archive prefix, everything after is
    the embedded target, which must itself be an absolute http(s) URL.
    """
    prefix, ts, modifier, target_str = split_at_timestamp(url)
    if not re.match(r"^[A-Za-z][A-Za-z0-9+.-]*://", url):
        raise MalformedTarget(f"not an absolute URL: {url!r}")
    return UriM(
        archive_prefix=prefix,
        timestamp14=ts,
        modifier=modifier,
        target=parse_urir(target_str),
    )


def split_at_timestamp(path_or_url: str) -> tuple[str, str, str, str]:
    """Return (prefix, timestamp14, modifier, remainder) around the first timestamp segment.

    Works on absolute URLs and on bare request paths alike; validates that the
    timestamp is a real calendar datetime.
    """
    m = _TS_SEGMENT.search(path_or_url)
    if not m:
        raise NoTimestampSegment(f"no 14-digit timestamp segment in {path_or_url!r}")
    ts = m.group(1)
    validate_timestamp14(ts)
    modifier = m.group(2) or ""
    return path_or_url[: m.start()], ts, modifier, path_or_url[m.end():]


def validate_timestamp14(ts: str) -> None:
    if len(ts) != 14 or not ts.isdigit():
        raise InvalidTimestamp(f"timestamp must be 14 digits: {ts!r}")
    try:
        datetime.strptime(ts, "%Y%m%d%H%M%S")
    except ValueError:
        raise InvalidTimestamp(f"not a calendar datetime: {ts!r}") from None


def format_urim(m: UriM) -> str:
    return m.format()


def canonical_form(u: UriR) -> UriR:
    """Normalize a UriR: drop fragment and default port, sort query pairs by name.

    The sort is stable, so pairs sharing a name keep their original order.
    Idempotent by construction.
    """
    port = u.port
    if port is not None and port == _DEFAULT_PORTS.get(u.scheme):
        port = None
    return replace(
        u,
        port=port,
        path=u.path or "/",
        query=tuple(sorted(u.query, key=lambda p: p[0])),
        fragment=None,
    )


def canonicalize(u: UriR) -> str:
    """Render a SURT-style cache key: reversed host, no scheme, normalized parts.

    Example: http://www.example.org/a?b=2&a=1 -> "org,example,www)/a?a=1&b=2"
    """
    c = canonical_form(u)
    rev_host = ",".join(reversed(c.host.split(".")))
    port_part = f":{c.port}" if c.port is not None else ""
    query_part = "?" + format_query(c.query) if c.query else ""
    return f"{rev_host}{port_part}){c.path}{query_part}"


def fuzzy_reduce(u: UriR, rules: FuzzyRuleSet = EMPTY_RULES) -> str:
    """Canonical key after deleting volatile query parameters per `rules`."""
    kept = tuple(p for p in u.query if not rules.strips(p[0], p[1]))
    return canonicalize(replace(u, query=kept))


def canonical_key_of(url: str) -> str:
    """Canonical key for a raw URL string; falls back to the string itself when unparsable."""
    try:
        return canonicalize(parse_urir(url))
    except UrlError:
        return url


def fuzzy_key_of(url: str, rules: FuzzyRuleSet = EMPTY_RULES) -> str:
    try:
        return fuzzy_reduce(parse_urir(url), rules)
    except UrlError:
        return url


def detect_volatile_params(urls: list[UriR]) -> set[str]:
    """Find query parameters that vary across otherwise-identical URLs.

    URLs are grouped by (host, path); a parameter is volatile when at least two
    URLs in a group agree on everything but that parameter's value.
    """
    if len(urls) < 2:
        return set()
    groups: dict[tuple[str, str], list[UriR]] = {}
    for u in urls:
        groups.setdefault((u.host, u.path), []).append(u)

    # None values (bare names) must not be compared against strings
    pair_order = lambda p: (p[0], p[1] is not None, p[1] or "")

    volatile: set[str] = set()
    for members in groups.values():
        names = {n for u in members for n, _ in u.query}
        for name in names:
            # bucket by everything-but-name; a bucket holding two distinct
            # value sequences for the name means the name varies across
            # otherwise-identical URLs
            buckets: dict[tuple, set[tuple]] = {}
            for u in members:
                rest = tuple(sorted((p for p in u.query if p[0] != name), key=pair_order))
                values = tuple(v for n, v in u.query if n == name)
                if not values:
                    continue
                buckets.setdefault(rest, set()).add(values)
            if any(len(seqs) > 1 for seqs in buckets.values()):
                volatile.add(name)
    return volatile
