"""Command-line front end: serve, run-workload, analyze, reproduce.

`reproduce` wires the simulated archive behind the caching proxy, replays a
scenario against it, and emits the before/after request-rate artifacts
(series_before.csv / series_after.csv / summary.txt / metrics.txt). The
default in-process transport is fully deterministic; `--transport live` sends
the same traffic over loopback sockets instead.

Exit codes: 0 success, 2 configuration/parse error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

from .analyzer import (
    HarParseError,
    TrafficReport,
    build_report,
    compare_reports,
    detect_recurring,
    emit_series_csv,
    parse_har,
    render_comparison,
    render_report_text,
)
from .cache import CachePolicy, KeyMode
from .configtext import ConfigError
from .httpmsg import Request
from .proxy import (
    InjectionConfig,
    InjectionMode,
    ProxyConfig,
    ProxyMetrics,
    ReverseProxy,
    proxy_config_from_text,
    render_metrics,
)
from .upstream import (
    ManifestParseError,
    PatchConfig,
    UpstreamSimulator,
    load_store_from_manifest,
    parse_manifest_text,
)
from .urls import FuzzyRuleSet
from .wire import http_fetch, serve_handler
from .workload import (
    ClientEvent,
    EventSource,
    LimiterRule,
    LogicalClock,
    PageSpec,
    UnknownScenario,
    builtin_scenario,
    read_events_csv,
    run_page,
    spec_from_text,
    write_events_csv,
)

CONFIG_ENV_VAR = "REPLAY_SHIELD_CONFIG"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: str
    cache_enabled: bool = True
    injection_mode: InjectionMode = InjectionMode.ALWAYS
    duration: float | None = None
    transport: str = "in_process"
    output_dir: Path = Path(".")
    key_mode: KeyMode = KeyMode.EXACT
    patch_mode: str = "off"
    limiter: LimiterRule = LimiterRule()
    manifest_path: Path | None = None
    min_repeats: int = 3


@dataclass(frozen=True)
class ExperimentResult:
    client_report: TrafficReport
    events: tuple[ClientEvent, ...]
    network_events: tuple[ClientEvent, ...]
    proxy_metrics: ProxyMetrics
    upstream_request_count: int
    upstream_status_counts: dict[int, int]


def load_scenario(spec: ExperimentSpec) -> tuple[PageSpec, str | None]:
    """Resolve a builtin name or a scenario spec file; returns (page, manifest text)."""
    path = Path(spec.scenario)
    if path.suffix in (".spec", ".conf", ".txt") or path.exists():
        page = spec_from_text(path.read_text(encoding="utf-8"))
        manifest = None
    else:
        page, manifest = builtin_scenario(spec.scenario)
    if spec.duration is not None:
        page = replace(page, duration=spec.duration)
    return page, manifest


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    page, manifest_text = load_scenario(spec)
    if spec.manifest_path is not None:
        store = load_store_from_manifest(spec.manifest_path)
    elif manifest_text is not None:
        store = parse_manifest_text(manifest_text)
    else:
        raise ConfigError("a scenario file needs --manifest for the upstream holdings")

    sim = UpstreamSimulator(store, patch=PatchConfig(enabled=spec.patch_mode == "ia"))
    proxy_cfg = ProxyConfig(
        policy=CachePolicy(key_mode=spec.key_mode, fuzzy_rules=FuzzyRuleSet(strip_numeric_only_params=True)),
        injection=InjectionConfig(mode=spec.injection_mode),
        proxy_caching_enabled=spec.cache_enabled,
    )
    clock = LogicalClock()

    if spec.transport == "live":
        events, metrics = _run_live(page, sim, proxy_cfg, clock, spec.limiter)
    else:
        proxy = ReverseProxy(proxy_cfg, lambda req: sim.serve(req, clock.now()))
        events = run_page(page, lambda req: proxy.handle_request(req, clock.now()), clock, spec.limiter)
        metrics = proxy.metrics_snapshot()

    network = tuple(e for e in events if e.source is EventSource.NETWORK)
    return ExperimentResult(
        client_report=build_report(list(network), min_repeats=spec.min_repeats),
        events=tuple(events),
        network_events=network,
        proxy_metrics=metrics,
        upstream_request_count=sim.request_count,
        upstream_status_counts=sim.status_counts(),
    )


def _run_live(page, sim, proxy_cfg, clock, limiter):
    """Same pipeline over loopback sockets, paced against the wall clock."""
    with serve_handler(sim.serve) as upstream_handle:
        proxy = ReverseProxy(proxy_cfg, lambda req: http_fetch(upstream_handle.address, req))
        with serve_handler(proxy.handle_request) as proxy_handle:
            start = time.monotonic()

            def transport(request: Request):
                wait = clock.now() - (time.monotonic() - start)
                if wait > 0:
                    time.sleep(wait)
                return http_fetch(proxy_handle.address, request)

            events = run_page(page, transport, clock, limiter)
            return events, proxy.metrics_snapshot()


def write_experiment_files(result: ExperimentResult, out_dir: Path, label: str) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    series = out_dir / f"series_{label}.csv"
    emit_series_csv(result.client_report, series)
    events = out_dir / f"events_{label}.csv"
    write_events_csv(result.events, events)
    return [series, events]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_reproduce(args) -> int:
    out_dir = Path(args.output)
    base = ExperimentSpec(
        scenario=args.scenario,
        duration=args.duration,
        transport=args.transport,
        output_dir=out_dir,
        key_mode=KeyMode(args.key_mode),
        patch_mode=args.patch,
        limiter=LimiterRule(enabled=args.limiter, min_repeats=args.min_repeats)
        if args.limiter
        else LimiterRule(),
        manifest_path=Path(args.manifest) if args.manifest else None,
        min_repeats=args.min_repeats,
    )

    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_chunks: list[str] = []
    if args.both:
        before = run_experiment(
            replace(base, cache_enabled=False, injection_mode=InjectionMode.OFF)
        )
        after = run_experiment(
            replace(base, cache_enabled=True, injection_mode=InjectionMode(args.injection))
        )
        write_experiment_files(before, out_dir, "before")
        write_experiment_files(after, out_dir, "after")
        summary = render_comparison(
            compare_reports(before.client_report, after.client_report)
        )
        summary += "\n[before]\n" + render_report_text(before.client_report)
        summary += "\n[after]\n" + render_report_text(after.client_report)
        metrics_chunks.append("[before]\n" + render_metrics(before.proxy_metrics))
        metrics_chunks.append("[after]\n" + render_metrics(after.proxy_metrics))
    else:
        cache_on = args.cache == "on"
        injection = InjectionMode(args.injection) if cache_on else InjectionMode.OFF
        result = run_experiment(
            replace(base, cache_enabled=cache_on, injection_mode=injection)
        )
        label = "after" if cache_on else "before"
        write_experiment_files(result, out_dir, label)
        summary = render_report_text(result.client_report)
        summary += f"upstream_requests: {result.upstream_request_count}\n"
        metrics_chunks.append(render_metrics(result.proxy_metrics))

    (out_dir / "summary.txt").write_text(summary, encoding="utf-8")
    (out_dir / "metrics.txt").write_text("\n".join(metrics_chunks), encoding="utf-8")
    print(summary, end="")
    return EXIT_OK


def cmd_run_workload(args) -> int:
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.base:
        page, _ = load_scenario(ExperimentSpec(scenario=args.scenario, duration=args.duration))
        limiter = LimiterRule(enabled=args.limiter, min_repeats=args.min_repeats) if args.limiter else LimiterRule()
        clock = LogicalClock()
        start = time.monotonic()

        def transport(request: Request):
            wait = clock.now() - (time.monotonic() - start)
            if wait > 0:
                time.sleep(wait)
            return http_fetch(args.base, request)

        events = run_page(page, transport, clock, limiter)
        report = build_report([e for e in events if e.source is EventSource.NETWORK], args.min_repeats)
        write_events_csv(events, out_dir / "events.csv")
        emit_series_csv(report, out_dir / "series.csv")
        print(render_report_text(report), end="")
        return EXIT_OK

    spec = ExperimentSpec(
        scenario=args.scenario,
        cache_enabled=args.cache == "on",
        injection_mode=InjectionMode(args.injection) if args.cache == "on" else InjectionMode.OFF,
        duration=args.duration,
        output_dir=out_dir,
        patch_mode=args.patch,
        limiter=LimiterRule(enabled=args.limiter, min_repeats=args.min_repeats) if args.limiter else LimiterRule(),
        manifest_path=Path(args.manifest) if args.manifest else None,
        min_repeats=args.min_repeats,
    )
    result = run_experiment(spec)
    write_events_csv(result.events, out_dir / "events.csv")
    emit_series_csv(result.client_report, out_dir / "series.csv")
    print(render_report_text(result.client_report), end="")
    return EXIT_OK


def cmd_analyze(args) -> int:
    path = Path(args.input)
    rules = FuzzyRuleSet(
        strip_params=frozenset(args.fuzzy_strip.split(",")) if args.fuzzy_strip else frozenset(),
        strip_numeric_only_params=args.fuzzy_numeric,
    )
    if path.suffix == ".csv":
        entries: list = read_events_csv(path)
    else:
        entries = parse_har(path)
    report = build_report(entries, min_repeats=args.min_repeats)
    clusters = detect_recurring(entries, args.min_repeats, rules)
    report = replace(report, recurring=tuple(clusters))

    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    emit_series_csv(report, out_dir / "series.csv")
    print(render_report_text(report), end="")
    return EXIT_OK


def _echo_line(line: str) -> None:
    # request logs must not lag behind the traffic they describe
    print(line, flush=True)


def cmd_serve(args) -> int:
    if args.role == "upstream":
        if not args.manifest:
            raise ConfigError("serve upstream needs --manifest")
        store = load_store_from_manifest(args.manifest)
        sim = UpstreamSimulator(store, patch=PatchConfig(enabled=args.patch == "ia"))
        handle = serve_handler(sim.serve, listen=args.listen, echo=_echo_line)
    else:
        config_path = args.config or os.environ.get(CONFIG_ENV_VAR)
        cfg = proxy_config_from_text(Path(config_path).read_text(encoding="utf-8")) if config_path else ProxyConfig()
        if args.listen != "127.0.0.1:0":
            cfg = replace(cfg, listen_address=args.listen)
        if args.upstream:
            cfg = replace(cfg, upstream_address=args.upstream)
        proxy = ReverseProxy(cfg, lambda req: http_fetch(cfg.upstream_address, req))
        handle = serve_handler(proxy.handle_request, listen=cfg.listen_address, echo=_echo_line)

    print(f"serving {args.role} on {handle.address}", file=sys.stderr)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        return EXIT_OK
    finally:
        handle.close()


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="replay-shield",
        description="Eliminate and measure recurring 404 traffic against archival replay backends.",
    )
    parser.add_argument("--config", help="proxy config file (fallback: $" + CONFIG_ENV_VAR + ")")
    parser.add_argument("--output", default="out", help="output directory (default: ./out)")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_workload_flags(p):
        p.add_argument("--scenario", required=True, help="builtin scenario name or spec file path")
        p.add_argument("--duration", type=float, default=None, help="override run duration (seconds)")
        p.add_argument("--cache", choices=("on", "off"), default="on")
        p.add_argument("--injection", choices=[m.value for m in InjectionMode], default="always")
        p.add_argument("--key-mode", choices=[m.value for m in KeyMode], default="exact")
        p.add_argument("--patch", choices=("off", "ia", "arquivo"), default="off")
        p.add_argument("--limiter", action="store_true", help="enable the client-side repeat limiter")
        p.add_argument("--min-repeats", type=int, default=3)
        p.add_argument("--manifest", help="upstream holdings manifest (required for spec files)")
        p.add_argument("--transport", choices=("in_process", "live"), default="in_process")

    p_rep = sub.add_parser("reproduce", help="run a scenario through the proxy and report rates")
    add_workload_flags(p_rep)
    p_rep.add_argument("--both", action="store_true", help="run cache-off then cache-on and compare")
    p_rep.set_defaults(fn=cmd_reproduce)

    p_run = sub.add_parser("run-workload", help="replay a page workload and dump its event log")
    add_workload_flags(p_run)
    p_run.add_argument("--base", help="live proxy address (host:port); skips the in-process stack")
    p_run.set_defaults(fn=cmd_run_workload)

    p_an = sub.add_parser("analyze", help="analyze a HAR file or an events CSV")
    p_an.add_argument("input", help="path to .har/.json or events .csv")
    p_an.add_argument("--min-repeats", type=int, default=3)
    p_an.add_argument("--fuzzy-numeric", action="store_true", help="strip long all-digit query params")
    p_an.add_argument("--fuzzy-strip", help="comma-separated query param names to strip")
    p_an.set_defaults(fn=cmd_analyze)

    p_srv = sub.add_parser("serve", help="run the proxy or the simulated upstream on real sockets")
    p_srv.add_argument("role", choices=("proxy", "upstream"))
    p_srv.add_argument("--listen", default="127.0.0.1:0")
    p_srv.add_argument("--upstream", help="proxy role: upstream host:port")
    p_srv.add_argument("--manifest", help="upstream role: holdings manifest path")
    p_srv.add_argument("--patch", choices=("off", "ia", "arquivo"), default="off")
    p_srv.set_defaults(fn=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_arg_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        import logging

        logging.basicConfig(level=logging.DEBUG, format="%(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, UnknownScenario, ManifestParseError, HarParseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
