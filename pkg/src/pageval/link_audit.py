"""Link auditing: external reachability probes, internal anchor checks,
optional model-based relevance assessment, and the census that feeds the
connectivity score.

External probes run over a bounded thread pool with per-host pacing so a
single origin is never hammered. Verdicts are cached in a JSON Lines
file with a TTL; offline mode answers from the cache alone and never
touches the network.
"""

from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, replace
from pathlib import Path
from urllib.parse import urlparse

import httpx

from .clock import SYSTEM_CLOCK
from .errors import GatewayError
from .html_analyzer import LinkRef, fragment_target
from .resources import load_text, render

# HEAD statuses that mean "method refused", worth retrying as GET
_HEAD_REJECTED = (405, 501)


@dataclass(frozen=True)
class AuditConfig:
    timeout: float = 10.0
    max_redirects: int = 5
    parallelism: int = 8
    per_host_interval: float = 0.5
    offline: bool = False
    cache_ttl: float = 7 * 86400.0
    cache_path: Path | None = None

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_redirects < 0:
            raise ValueError("max_redirects must be >= 0")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.per_host_interval < 0:
            raise ValueError("per_host_interval must be >= 0")
        if self.cache_ttl < 0:
            raise ValueError("cache_ttl must be >= 0")


@dataclass(frozen=True)
class LinkVerdict:
    target: str
    kind: str  # external | internal
    reachable: bool
    status: int | None = None
    reason: str = ""
    latency: float | None = None
    relevance: str = "unknown"  # relevant | irrelevant | unknown
    relevance_reason: str = ""
    cached: bool = False


@dataclass(frozen=True)
class LinkCensus:
    n_external_unique: int
    n_external_total: int
    n_internal_total: int
    n_mailto: int
    n_other: int
    n_external_valid: int
    n_internal_valid: int
    relevance_checked: bool
    # (reason, count) pairs for failed probes, sorted by reason
    breakdown: tuple = ()


class AuditCache:
    """JSON Lines verdict cache with TTL. Later lines win; puts append,
    so concurrent runs at worst re-probe rather than corrupt."""

    def __init__(self, path, ttl: float, clock=None):
        self._path = Path(path)
        self._ttl = ttl
        self._clock = clock or SYSTEM_CLOCK
        self._lock = threading.Lock()
        self._entries = {}
        self._load()

    def _load(self):
        if not self._path.exists():
            return
        for line in self._path.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                self._entries[rec["url"]] = rec
            except (json.JSONDecodeError, KeyError, TypeError):
                continue  # a torn line only costs a re-probe

    def get(self, url: str) -> LinkVerdict | None:
        with self._lock:
            rec = self._entries.get(url)
        if rec is None:
            return None
        if self._clock.time() - float(rec.get("ts", 0)) > self._ttl:
            return None
        return LinkVerdict(
            target=url,
            kind="external",
            reachable=bool(rec.get("reachable")),
            status=rec.get("status"),
            reason=str(rec.get("reason", "")),
            latency=rec.get("latency"),
            cached=True,
        )

    def put(self, url: str, verdict: LinkVerdict):
        rec = {
            "url": url,
            "ts": self._clock.time(),
            "reachable": verdict.reachable,
            "status": verdict.status,
            "reason": verdict.reason,
            "latency": verdict.latency,
        }
        with self._lock:
            self._entries[url] = rec
            self._path.parent.mkdir(parents=True, exist_ok=True)
            with self._path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


class _HostPacer:
    """Hands out dispatch slots spaced at least `interval` apart per host."""

    def __init__(self, interval: float, clock):
        self._interval = interval
        self._clock = clock
        self._next = {}
        self._lock = threading.Lock()

    def reserve(self, host: str) -> float:
        with self._lock:
            now = self._clock.monotonic()
            slot = max(now, self._next.get(host, now))
            self._next[host] = slot + self._interval
        return slot

    def wait_until(self, slot: float):
        while True:
            remaining = slot - self._clock.monotonic()
            if remaining <= 0:
                return
            self._clock.sleep(remaining)


def _external_urls(links) -> list[str]:
    """Unique external URLs in first-seen order."""
    seen = set()
    urls = []
    for link in links:
        url = link.raw_href if isinstance(link, LinkRef) else str(link)
        if isinstance(link, LinkRef) and link.kind != "external":
            continue
        if url not in seen:
            seen.add(url)
            urls.append(url)
    return urls


def _probe(client: httpx.Client, url: str, clock) -> LinkVerdict:
    t0 = clock.monotonic()
    try:
        resp = client.head(url)
        if resp.status_code in _HEAD_REJECTED:
            resp = client.get(url)
        latency = clock.monotonic() - t0
        ok = 200 <= resp.status_code < 300
        return LinkVerdict(
            target=url,
            kind="external",
            reachable=ok,
            status=resp.status_code,
            reason="ok" if ok else f"http {resp.status_code}",
            latency=latency,
        )
    except httpx.TimeoutException:
        return LinkVerdict(target=url, kind="external", reachable=False,
                           reason="timeout", latency=clock.monotonic() - t0)
    except httpx.TooManyRedirects:
        return LinkVerdict(target=url, kind="external", reachable=False,
                           reason="too many redirects", latency=clock.monotonic() - t0)
    except httpx.ConnectError:
        return LinkVerdict(target=url, kind="external", reachable=False,
                           reason="connection error", latency=clock.monotonic() - t0)
    except httpx.HTTPError as exc:
        return LinkVerdict(target=url, kind="external", reachable=False,
                           reason=f"transport error: {exc}", latency=clock.monotonic() - t0)


def audit_external(links, cfg: AuditConfig, *, cache: AuditCache | None = None,
                   transport=None, clock=None, pacing_log=None) -> list[LinkVerdict]:
    """Probe unique external URLs (HEAD, GET fallback on 405/501).

    Returns one verdict per unique URL in first-seen order. `transport`
    and `clock` exist for tests; `pacing_log`, when given, receives
    (url, host, slot) tuples at dispatch time.
    """
    clock = clock or SYSTEM_CLOCK
    urls = _external_urls(links)
    if cache is None and cfg.cache_path is not None:
        cache = AuditCache(cfg.cache_path, cfg.cache_ttl, clock)

    verdicts: dict[str, LinkVerdict] = {}
    pending = []
    for url in urls:
        hit = cache.get(url) if cache is not None else None
        if hit is not None:
            verdicts[url] = hit
        elif cfg.offline:
            verdicts[url] = LinkVerdict(target=url, kind="external", reachable=False,
                                        reason="offline cache miss")
        else:
            pending.append(url)

    if pending:
        pacer = _HostPacer(cfg.per_host_interval, clock)

        def worker(url: str) -> LinkVerdict:
            host = urlparse(url).netloc
            slot = pacer.reserve(host)
            pacer.wait_until(slot)
            if pacing_log is not None:
                pacing_log.append((url, host, slot))
            return _probe(client, url, clock)

        client = httpx.Client(
            timeout=httpx.Timeout(cfg.timeout),
            follow_redirects=True,
            max_redirects=cfg.max_redirects,
            transport=transport,
        )
        try:
            with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
                futures = {pool.submit(worker, url): url for url in pending}
                for fut in as_completed(futures):
                    verdict = fut.result()
                    verdicts[verdict.target] = verdict
                    if cache is not None:
                        cache.put(verdict.target, verdict)
        finally:
            client.close()

    return [verdicts[url] for url in urls]


def check_internal(links, anchors) -> list[LinkVerdict]:
    """Resolve fragment links against the page's defined anchor ids.

    A bare "#" counts as unreachable: it is a script placeholder, not
    navigation to a defined anchor.
    """
    anchors = set(anchors)
    out = []
    for link in links:
        if isinstance(link, LinkRef) and link.kind != "internal":
            continue
        href = link.raw_href if isinstance(link, LinkRef) else str(link)
        frag = fragment_target(href)
        if not frag:
            out.append(LinkVerdict(target=href, kind="internal", reachable=False,
                                   reason="empty fragment"))
        elif frag in anchors:
            out.append(LinkVerdict(target=href, kind="internal", reachable=True,
                                   reason="anchor defined"))
        else:
            out.append(LinkVerdict(target=href, kind="internal", reachable=False,
                                   reason=f"no element with id {frag!r}"))
    return out


def assess_relevance(link: LinkRef, page_context: str, gateway, profile,
                     *, tag: str = "") -> tuple[str, str]:
    """Ask a model whether a link belongs in its surrounding context.

    Returns (relevance, reason); any gateway failure degrades to
    ("unknown", reason) rather than aborting the audit.
    """
    if gateway is None or profile is None:
        return "unknown", "relevance check disabled"
    from .gateway import ChatRequest, Message, TextPart

    prompt = render(
        load_text("link_relevance"),
        href=link.raw_href,
        anchor_text=link.anchor_text or "(no anchor text)",
        context=link.context_snippet or "(no surrounding text)",
        page_context=page_context,
    )
    req = ChatRequest(
        messages=(Message(role="user", parts=(TextPart(prompt),)),),
        temperature=0.0,
        max_tokens=300,
        schema_tag="link_relevance_v1",
    )

    def validate(data):
        if not isinstance(data, dict):
            raise ValueError("reply must be a JSON object")
        rel = str(data.get("relevance", "")).strip().lower()
        if rel not in ("relevant", "irrelevant"):
            raise ValueError("field 'relevance' must be 'relevant' or 'irrelevant'")
        return rel, str(data.get("reason", ""))

    try:
        (rel, reason), _ = gateway.complete_structured(req, validate, profile,
                                                       family="relevance", tag=tag)
        return rel, reason
    except GatewayError as exc:
        return "unknown", f"relevance check failed: {exc}"


def annotate_relevance(verdicts, links, page_context: str, gateway, profile,
                       *, tag: str = "") -> list[LinkVerdict]:
    """Attach relevance assessments to reachable external verdicts. The
    first LinkRef matching each verdict's URL supplies the context."""
    by_url = {}
    for link in links:
        if isinstance(link, LinkRef) and link.kind == "external":
            by_url.setdefault(link.raw_href, link)
    out = []
    for v in verdicts:
        if v.kind != "external" or not v.reachable:
            out.append(replace(v, relevance_reason="not assessed: unreachable")
                       if v.kind == "external" else v)
            continue
        link = by_url.get(v.target)
        if link is None:
            out.append(v)
            continue
        rel, reason = assess_relevance(link, page_context, gateway, profile, tag=tag)
        out.append(replace(v, relevance=rel, relevance_reason=reason))
    return out


def census(links, external_verdicts, internal_verdicts, *,
           relevance_checked: bool = False) -> LinkCensus:
    """Tally verdicts into the counts the connectivity score consumes.

    With relevance checking on, only reachable links judged relevant
    count as valid; unknown is excluded. With it off, reachability alone
    decides. Duplicate external URLs count once toward validity.
    """
    kinds = [link.kind for link in links]
    failures = {}
    n_external_valid = 0
    for v in external_verdicts:
        if v.reachable and (v.relevance == "relevant" if relevance_checked
                            else v.relevance != "irrelevant"):
            n_external_valid += 1
        elif not v.reachable:
            failures[v.reason] = failures.get(v.reason, 0) + 1
        elif v.relevance == "irrelevant":
            failures["irrelevant"] = failures.get("irrelevant", 0) + 1
        else:
            failures["relevance unknown"] = failures.get("relevance unknown", 0) + 1
    n_internal_valid = 0
    for v in internal_verdicts:
        if v.reachable:
            n_internal_valid += 1
        else:
            failures[v.reason] = failures.get(v.reason, 0) + 1
    return LinkCensus(
        n_external_unique=len(external_verdicts),
        n_external_total=kinds.count("external"),
        n_internal_total=kinds.count("internal"),
        n_mailto=kinds.count("mailto"),
        n_other=kinds.count("other"),
        n_external_valid=n_external_valid,
        n_internal_valid=n_internal_valid,
        relevance_checked=relevance_checked,
        breakdown=tuple(sorted(failures.items())),
    )
