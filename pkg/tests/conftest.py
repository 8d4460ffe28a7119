"""Shared test fixtures.

Builds a small fixture corpus with exactly known geometry (every
container's character count and image box is a constant below, so
expected deviations are hand-computable), a deterministic scripted model
server for record/replay tests, a seeded link-verdict cache, and a local
HTTP server for live audit tests.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import httpx
import pytest
import yaml

from pageval.corpus import load_manifest
from pageval.gateway import Gateway, ReplayStore
from pageval.report import load_config, run as run_report

LABELS = ("A", "B", "C", "D")

GLYPH_AREA = (0.55 * 16.0) * (1.5 * 16.0)  # 211.2 px^2 per character


class FakeClock:
    """Deterministic clock: sleep() advances time instead of waiting."""

    def __init__(self, start: float = 1_000_000.0):
        self._now = start
        self._lock = threading.Lock()

    def time(self) -> float:
        with self._lock:
            return self._now

    def monotonic(self) -> float:
        with self._lock:
            return self._now

    def sleep(self, seconds: float):
        if seconds > 0:
            with self._lock:
                self._now += seconds

    def advance(self, seconds: float):
        self.sleep(seconds)


@pytest.fixture
def fake_clock():
    return FakeClock()


def fixture_png(seed: str) -> bytes:
    return b"\x89PNG\r\n\x1a\n" + (seed.encode("utf-8") * 8)[:64]


# -- fixture pages -------------------------------------------------------
#
# Container contents are exact: text runs contain no whitespace except
# deliberate single spaces, so normalized length == raw length.

F1_CHARS = 5000
F2_CHARS = 1000
F2_IMG = (240, 200)  # 48,000 px^2 against 211,200 px^2 of text
F4_C1_CHARS = 1000
F4_C1_IMG = (800, 264)  # 211,200 px^2, exactly the text area of container 1

F4_LINKS = (
    ("https://codehost.example/repo", "code"),
    ("https://papers.example/p/123", "paper"),
    ("https://data.example/set", "data"),
    ("https://codehost.example/repo", "mirror"),  # duplicate URL
    ("https://ads.example/buy", "sponsor"),
    ("https://gone.example/404", "broken"),
)
F4_INTERNAL = (("#top", "top"), ("#missing", "missing"))

F5_IMG = (600, 352)  # 211,200 px^2
# (section id, heading, body characters); heading chars count too
F5_SECTIONS = (
    ("abstract", "Abstract", 392),
    ("method", "Method", 594),
    ("results", "Results", 293),
    ("cite", "Citation", 192),
)


def _chars(n: int) -> str:
    return ("abcdefghij" * (n // 10 + 1))[:n]


def _f4_container2_html() -> tuple[str, int]:
    parts = ["See "]
    for i, (href, anchor) in enumerate(F4_LINKS):
        if i:
            parts.append(" and ")
        parts.append((href, anchor))
    parts.append(" then ")
    for i, (href, anchor) in enumerate(F4_INTERNAL):
        if i:
            parts.append(" or ")
        parts.append((href, anchor))
    parts.append(".")
    html = []
    chars = 0
    for part in parts:
        if isinstance(part, str):
            html.append(part)
            chars += len(part)
        else:
            href, anchor = part
            html.append(f'<a href="{href}">{anchor}</a>')
            chars += len(anchor)
    return "".join(html), chars


F4_C2_HTML, F4_C2_CHARS = _f4_container2_html()


def fixture_pages() -> dict:
    f1 = (f"<html><head><title>F1</title></head><body>"
          f"<div>{_chars(F1_CHARS)}</div></body></html>")
    f2 = (f"<html><head><title>F2</title></head><body>"
          f'<div><img src="fig.png" width="{F2_IMG[0]}" height="{F2_IMG[1]}" '
          f'alt="diagram">{_chars(F2_CHARS)}</div></body></html>')
    f3 = ('<html><head><title>F3</title></head><body>'
          '<section><img src="hero.png"></section></body></html>')
    f4 = (f"<html><head><title>F4</title></head><body>"
          f'<div id="top"><img src="a.png" width="{F4_C1_IMG[0]}" '
          f'height="{F4_C1_IMG[1]}">{_chars(F4_C1_CHARS)}</div>'
          f"<div>{F4_C2_HTML}</div></body></html>")
    nav = " ".join(f'<a href="#{sid}">{heading}</a>'
                   for sid, heading, _ in F5_SECTIONS)
    nav += ' <a href="#nowhere">Missing</a> <a href="#">Top</a>'
    sections = []
    for i, (sid, heading, body_chars) in enumerate(F5_SECTIONS):
        img = (f'<img src="plot.png" width="{F5_IMG[0]}" height="{F5_IMG[1]}">'
               if sid == "results" else "")
        sections.append(f'<section id="{sid}"><h2>{heading}</h2>{img}'
                        f"{_chars(body_chars)}</section>")
    f5 = (f"<html><head><title>F5</title></head><body><nav>{nav}</nav>"
          f"{''.join(sections)}</body></html>")
    return {"f1": f1, "f2": f2, "f3": f3, "f4": f4, "f5": f5}


# Geometry constants the acceptance oracle recomputes independently.
FIXTURE_GEOMETRY = {
    "f1": {"containers": [{"chars": F1_CHARS, "images": []}]},
    "f2": {"containers": [{"chars": F2_CHARS, "images": [F2_IMG]}]},
    "f3": {"containers": [{"chars": 0, "images": [None]}]},  # None = defaults
    "f4": {"containers": [
        {"chars": F4_C1_CHARS, "images": [F4_C1_IMG]},
        {"chars": F4_C2_CHARS, "images": []},
    ]},
    "f5": {"containers": [
        {"chars": len(h) + b, "images": ([F5_IMG] if sid == "results" else [])}
        for sid, h, b in F5_SECTIONS
    ]},
}


# -- scripted model server ----------------------------------------------


def quiz_block(n: int = 25, kind: str = "verbatim") -> dict:
    alphabet = "ABCDEFGHIJKLM" if kind == "verbatim" else "ABCDEFGHIJ"
    questions, answers, aspects = {}, {}, {}
    for i in range(1, n + 1):
        key = f"Question {i}"
        correct = LABELS[(i - 1) % 4]
        options = [f"{label}. {kind} option {label}{i}" for label in LABELS]
        questions[key] = {"question": f"What does {kind} fact {i} state?",
                          "options": options}
        answers[key] = options[LABELS.index(correct)]
        aspects[key] = alphabet[(i - 1) % len(alphabet)]
    return {"questions": questions, "answers": answers, "aspects": aspects}


def _flatten_text(messages) -> str:
    chunks = []
    for m in messages:
        content = m.get("content")
        if isinstance(content, str):
            chunks.append(content)
        else:
            chunks.extend(p.get("text", "") for p in content
                          if p.get("type") == "text")
    return "\n".join(chunks)


_JUDGE_SCORES = {
    "Rate how interactive": 3.2,
    "Rate its visual quality": 4.0,
    "Rate how well it informs": 4.5,
    "Rate how complete": 3.8,
    "Rate how well connected": 2.9,
}


def _answer_sheet_reply(model: str, prompt: str) -> str:
    sheet_json = prompt[prompt.rindex("questions:") + len("questions:"):]
    questions = json.loads(sheet_json)
    reply = {}
    for key in questions:
        n = int(key.split()[1])
        correct = LABELS[((n - 1) % 25) % 4]
        if "open" in model:
            if n <= 40:
                reply[key] = {"answer": correct, "reference": f"section {n}"}
            else:
                reply[key] = {"answer": "NA", "reference": "NA"}
        else:
            if n % 2 == 1:
                reply[key] = {"answer": correct, "reference": f"figure {n}"}
            else:
                wrong = LABELS[(LABELS.index(correct) + 1) % 4]
                reply[key] = {"answer": wrong, "reference": f"guess {n}"}
    return json.dumps(reply)


def model_server_handler(request: httpx.Request) -> httpx.Response:
    payload = json.loads(request.content.decode("utf-8"))
    model = payload["model"]
    prompt = _flatten_text(payload["messages"])
    if "answers appear verbatim" in prompt:
        reply = json.dumps(quiz_block(25, "verbatim"))
    elif "genuine comprehension" in prompt:
        reply = json.dumps(quiz_block(25, "interpretive"))
    elif "You are an answering agent" in prompt:
        reply = _answer_sheet_reply(model, prompt)
    elif "outbound link belongs" in prompt:
        reply = json.dumps({"relevance": "relevant", "reason": "fixture link"})
    else:
        for marker, score in _JUDGE_SCORES.items():
            if marker in prompt:
                reply = json.dumps({"score": score,
                                    "rationale": f"scripted verdict: {marker}"})
                break
        else:
            reply = json.dumps({"score": 3, "rationale": "scripted default"})
    usage = {"prompt_tokens": len(prompt) // 7,
             "completion_tokens": len(reply) // 5}
    return httpx.Response(200, json={
        "model": model,
        "choices": [{"message": {"content": reply}}],
        "usage": usage,
    })


def scripted_gateway(replies, mode: str = "live", store=None):
    """Gateway whose transport pops canned reply texts in order. Returns
    (gateway, request_log); request_log collects flattened prompts."""
    queue = list(replies)
    request_log = []

    def handler(request: httpx.Request) -> httpx.Response:
        payload = json.loads(request.content.decode("utf-8"))
        request_log.append(_flatten_text(payload["messages"]))
        if not queue:
            raise AssertionError("scripted gateway ran out of replies")
        reply = queue.pop(0)
        return httpx.Response(200, json={
            "model": payload["model"],
            "choices": [{"message": {"content": reply}}],
            "usage": {"prompt_tokens": 10, "completion_tokens": 10},
        })

    gateway = Gateway(mode, store, transport=httpx.MockTransport(handler))
    return gateway, request_log


# -- fixture corpus on disk ----------------------------------------------

PAPER_MD = """# Deterministic Fixture Study

## Abstract
A small synthetic paper used to exercise the scoring pipeline end to end.

## Method
The method applies a fixed transformation to fixture pages and measures
their balance, efficiency, and connectivity.

## Results
The method reaches a score of 4.2 on the synthetic benchmark, beating
the baseline by 0.8 points.
"""


@dataclass
class Corpus:
    root: Path
    manifest_path: Path
    config_path: Path
    store_dir: Path
    cache_path: Path
    manifest: object
    pages: dict


@pytest.fixture(scope="session")
def corpus(tmp_path_factory) -> Corpus:
    root = tmp_path_factory.mktemp("corpus")
    pages_dir = root / "pages"
    shots_dir = root / "shots"
    layout_dir = root / "layout"
    cache_dir = root / "cache"
    store_dir = root / "store"
    for d in (pages_dir, shots_dir, layout_dir, cache_dir, store_dir):
        d.mkdir()

    pages = fixture_pages()
    for name, html in pages.items():
        (pages_dir / f"{name}.html").write_text(html, encoding="utf-8")
    for name in pages:
        for i in range(2):
            (shots_dir / f"{name}-{i}.png").write_bytes(
                fixture_png(f"{name}-{i}"))

    # imported geometry for f2, matching the heuristic's numbers
    (layout_dir / "f2.yaml").write_text(yaml.safe_dump({
        "containers": [{
            "path": "body/div[0]",
            "area": F2_CHARS * GLYPH_AREA + F2_IMG[0] * F2_IMG[1],
            "image_area": float(F2_IMG[0] * F2_IMG[1]),
        }],
    }), encoding="utf-8")

    # seeded audit cache: every F4 external URL has a fresh verdict
    now = time.time()
    cache_lines = [
        {"url": "https://codehost.example/repo", "ts": now, "reachable": True,
         "status": 200, "reason": "ok", "latency": 0.05},
        {"url": "https://papers.example/p/123", "ts": now, "reachable": True,
         "status": 200, "reason": "ok", "latency": 0.04},
        {"url": "https://data.example/set", "ts": now, "reachable": True,
         "status": 200, "reason": "ok", "latency": 0.03},
        {"url": "https://ads.example/buy", "ts": now, "reachable": True,
         "status": 200, "reason": "ok", "latency": 0.02},
        {"url": "https://gone.example/404", "ts": now, "reachable": False,
         "status": 404, "reason": "http 404", "latency": 0.06},
    ]
    cache_path = cache_dir / "links.jsonl"
    cache_path.write_text(
        "".join(json.dumps(line, sort_keys=True) + "\n" for line in cache_lines),
        encoding="utf-8")

    manifest_doc = {
        "papers": [{"id": "fixture-paper", "title": "Deterministic Fixture Study",
                    "markdown": PAPER_MD, "meta": {"year": "2024"}}],
        "artifacts": [
            {"id": "f1", "method": "generated", "html": "pages/f1.html",
             "screenshots": ["shots/f1-0.png", "shots/f1-1.png"]},
            {"id": "f2", "method": "original", "html": "pages/f2.html",
             "screenshots": ["shots/f2-0.png", "shots/f2-1.png"],
             "layout_import": "layout/f2.yaml"},
            {"id": "f3", "method": "generated", "html": "pages/f3.html",
             "screenshots": ["shots/f3-0.png", "shots/f3-1.png"]},
            {"id": "f4", "method": "original", "html": "pages/f4.html",
             "screenshots": ["shots/f4-0.png", "shots/f4-1.png"]},
            {"id": "f5", "method": "original", "html": "pages/f5.html",
             "screenshots": ["shots/f5-0.png", "shots/f5-1.png"]},
        ],
        "entries": [{"paper": "fixture-paper",
                     "artifacts": ["f1", "f2", "f3", "f4", "f5"]}],
    }
    manifest_path = root / "manifest.yaml"
    manifest_path.write_text(yaml.safe_dump(manifest_doc, sort_keys=False),
                             encoding="utf-8")

    config_doc = {
        "families": ["rule", "judge", "quiz"],
        "balance": {"gamma": 1.0, "mode": "monotone"},
        "efficiency": {"beta": 0.6, "reference_length": 2000},
        "saturation": {"sat_external": 12, "sat_internal": 8},
        "audit": {"offline": True, "cache_path": str(cache_path),
                  "per_host_interval": 0.0},
        "viewport": {"width": 1440, "base_font": 16},
        "profiles": [
            {"name": "judge-vision", "endpoint": "http://models.test/v1/chat",
             "model": "judge-model", "auth_env": ""},
            {"name": "examiner", "endpoint": "http://models.test/v1/chat",
             "model": "examiner-model", "auth_env": "", "supports_vision": False},
            {"name": "reader-open", "endpoint": "http://models.test/v1/chat",
             "model": "reader-open-model", "auth_env": ""},
            {"name": "reader-closed", "endpoint": "http://models.test/v1/chat",
             "model": "reader-closed-model", "auth_env": ""},
        ],
        "judge_profile": "judge-vision",
        "examiner_profile": "examiner",
        "readers": [{"profile": "reader-open", "group": "open"},
                    {"profile": "reader-closed", "group": "closed"}],
        "gateway_mode": "replay",
        "replay_store": str(store_dir),
        "self_hosts": ["project.example"],
        "workers": 2,
    }
    config_path = root / "config.yaml"
    config_path.write_text(yaml.safe_dump(config_doc, sort_keys=False),
                           encoding="utf-8")

    return Corpus(
        root=root,
        manifest_path=manifest_path,
        config_path=config_path,
        store_dir=store_dir,
        cache_path=cache_path,
        manifest=load_manifest(manifest_path),
        pages=pages,
    )


@pytest.fixture(scope="session")
def replay_store(corpus) -> ReplayStore:
    """Populate the corpus replay store by one record-mode run against
    the scripted model server."""
    from dataclasses import replace

    store = ReplayStore(corpus.store_dir)
    cfg = load_config(corpus.config_path)
    cfg = replace(cfg, gateway_mode="record")
    gateway = Gateway("record", store,
                      transport=httpx.MockTransport(model_server_handler))
    with gateway:
        run_report(corpus.manifest, cfg, gateway=gateway)
    assert len(store) > 0
    return store


# -- local HTTP fixture server -------------------------------------------


class _FixtureHandler(BaseHTTPRequestHandler):
    slow_delay = 2.0

    def _respond(self, method: str):
        if self.path == "/ok":
            body = b"ok"
            self.send_response(200)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            if method == "GET":
                self.wfile.write(body)
        elif self.path == "/redirect":
            self.send_response(301)
            self.send_header("Location", "/ok")
            self.send_header("Content-Length", "0")
            self.end_headers()
        elif self.path == "/missing":
            self.send_response(404)
            self.send_header("Content-Length", "0")
            self.end_headers()
        elif self.path == "/slow":
            time.sleep(self.slow_delay)
            self.send_response(200)
            self.send_header("Content-Length", "0")
            self.end_headers()
        elif self.path == "/head-reject":
            if method == "HEAD":
                self.send_response(405)
            else:
                self.send_response(200)
            self.send_header("Content-Length", "0")
            self.end_headers()
        else:
            self.send_response(404)
            self.send_header("Content-Length", "0")
            self.end_headers()

    def do_GET(self):
        self._respond("GET")

    def do_HEAD(self):
        self._respond("HEAD")

    def log_message(self, *args):
        pass


@pytest.fixture(scope="session")
def fixture_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _FixtureHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{server.server_address[1]}"
    yield base
    server.shutdown()
    thread.join(timeout=5)
