"""Socket front end: HTTP/1.1 servers for the proxy and upstream roles, plus the
client used for proxy-to-upstream fetches.

Request handlers stay transport-agnostic: a handler is any
`(Request, seconds_since_start) -> Response` callable, so the same proxy and
simulator objects run in-process or behind a real listener.
"""

from __future__ import annotations

import http.client
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable
from urllib.parse import urlsplit

from .httpmsg import Request, Response
from .proxy import UpstreamUnreachable

Handler = Callable[[Request, float], Response]
LogSink = Callable[[str], None]


def split_hostport(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected host:port, got {address!r}")
    return host, int(port)


def origin_form(url: str) -> str:
    parts = urlsplit(url)
    path = parts.path or "/"
    return f"{path}?{parts.query}" if parts.query else path


def http_fetch(address: str, request: Request, timeout: float = 10.0) -> Response:
    """Issue `request` to host:port `address`; connection failure raises
    UpstreamUnreachable so the proxy can answer 502."""
    host, port = split_hostport(address)
    conn = http.client.HTTPConnection(host, port, timeout=timeout)
    try:
        conn.request(request.method, origin_form(request.url))
        raw = conn.getresponse()
        body = raw.read()
        return Response(raw.status, tuple(raw.getheaders()), body)
    except OSError as exc:
        raise UpstreamUnreachable(str(exc)) from exc
    finally:
        conn.close()


class _WireServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, handler_cls, app: Handler, echo: LogSink | None):
        super().__init__(address, handler_cls)
        self.app = app
        self.echo = echo
        self.started = time.monotonic()
        self.log_lines: list[str] = []
        self._log_lock = threading.Lock()

    def record(self, line: str) -> None:
        with self._log_lock:
            self.log_lines.append(line)
        if self.echo is not None:
            self.echo(line)


class _WireHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: _WireServer

    def do_GET(self):
        self._run("GET")

    def do_HEAD(self):
        self._run("HEAD")

    def _run(self, method: str) -> None:
        now = time.monotonic() - self.server.started
        host = self.headers.get("Host") or "%s:%d" % self.server.server_address
        url = f"http://{host}{self.path}"
        request = Request(method, url, tuple(self.headers.items()))
        try:
            response = self.server.app(request, now)
        except Exception:  # a handler bug must not kill the connection thread
            response = Response(500, (("Content-Type", "text/plain"),), b"internal error")
        self.send_response(response.status)
        have_length = False
        for name, value in response.headers:
            if name.lower() == "content-length":
                have_length = True
            self.send_header(name, value)
        if not have_length:
            self.send_header("Content-Length", str(len(response.body)))
        self.end_headers()
        if method != "HEAD" and response.body:
            self.wfile.write(response.body)
        marker = response.header("X-Cache") or "-"
        self.server.record(f"{now:.3f} {method} {url} {response.status} {marker}")

    def log_message(self, format, *args):  # noqa: A002 - stdlib signature
        pass


class ServerHandle:
    """A running listener; shut it down with close()."""

    def __init__(self, server: _WireServer, thread: threading.Thread):
        self._server = server
        self._thread = thread

    @property
    def address(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    @property
    def log_lines(self) -> list[str]:
        return list(self._server.log_lines)

    def close(self) -> None:
        self._server.shutdown()
        self._thread.join(timeout=5)
        self._server.server_close()

    def __enter__(self) -> "ServerHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def serve_handler(app: Handler, listen: str = "127.0.0.1:0", echo: LogSink | None = None) -> ServerHandle:
    """Start `app` behind a threaded HTTP listener; port 0 picks a free port."""
    host, port = split_hostport(listen)
    server = _WireServer((host, port), _WireHandler, app, echo)
    thread = threading.Thread(target=server.serve_forever, name=f"wire-{server.server_address[1]}", daemon=True)
    thread.start()
    return ServerHandle(server, thread)
