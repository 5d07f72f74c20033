"""Minimal HTTP request/response values shared by the proxy, upstream, and workload."""

from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class Request:
    method: str
    url: str
    headers: tuple[tuple[str, str], ...] = ()

    def header(self, name: str) -> str | None:
        return _get_header(self.headers, name)


@dataclass(frozen=True)
class Response:
    status: int
    headers: tuple[tuple[str, str], ...] = ()
    body: bytes = b""

    def header(self, name: str) -> str | None:
        return _get_header(self.headers, name)

    def with_header(self, name: str, value: str) -> "Response":
        """Return a copy with `name` set to `value`, replacing any existing occurrence."""
        kept = tuple((n, v) for n, v in self.headers if n.lower() != name.lower())
        return replace(self, headers=kept + ((name, value),))


def _get_header(headers: tuple[tuple[str, str], ...], name: str) -> str | None:
    wanted = name.lower()
    for n, v in headers:
        if n.lower() == wanted:
            return v
    return None


def text_response(status: int, text: str, content_type: str = "text/plain") -> Response:
    return Response(
        status=status,
        headers=(("Content-Type", content_type),),
        body=text.encode("utf-8"),
    )
