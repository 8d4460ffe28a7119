"""Error-tolerant HTML parsing and structural fact extraction.

Builds a recovered element tree from arbitrary HTML bytes and derives the
facts the rule metrics consume: hyperlinks with classification, images
with declared dimensions, defined anchor ids, visible text length, and
the section outline.

Visible text excludes script, style, and template content as well as
everything inside <head>; attribute text (alt, title) never counts.
Whitespace is normalized so any run of whitespace contributes a single
character.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from html.parser import HTMLParser
from urllib.parse import unquote, urlsplit

VOID_ELEMENTS = frozenset({
    "area", "base", "br", "col", "embed", "hr", "img", "input",
    "link", "meta", "param", "source", "track", "wbr",
})

# Start tags that implicitly close an open <p>, per browser recovery rules.
_P_CLOSERS = frozenset({
    "address", "article", "aside", "blockquote", "details", "div", "dl",
    "fieldset", "figcaption", "figure", "footer", "form", "h1", "h2", "h3",
    "h4", "h5", "h6", "header", "hgroup", "hr", "main", "menu", "nav",
    "ol", "p", "pre", "section", "table", "ul",
})

# tag -> set of open tags it implicitly closes when encountered
_SIBLING_CLOSERS = {
    "li": {"li"},
    "dt": {"dt", "dd"},
    "dd": {"dt", "dd"},
    "tr": {"tr", "td", "th"},
    "td": {"td", "th"},
    "th": {"td", "th"},
    "option": {"option"},
    "thead": {"thead", "tbody", "tfoot", "tr", "td", "th"},
    "tbody": {"thead", "tbody", "tfoot", "tr", "td", "th"},
    "tfoot": {"thead", "tbody", "tfoot", "tr", "td", "th"},
}

_INVISIBLE_TAGS = frozenset({"script", "style", "template", "head"})

_BLOCK_TAGS = frozenset(_P_CLOSERS | {"body", "td", "th", "li", "dd", "dt", "caption"})

_WS_RE = re.compile(r"\s+")

HEADING_TAGS = ("h1", "h2", "h3", "h4", "h5", "h6")


def normalize_text(text: str) -> str:
    """Collapse whitespace runs to single spaces and strip the ends."""
    return _WS_RE.sub(" ", text).strip()


class Element:
    """One element node. Treat as immutable once parsing completes."""

    __slots__ = ("tag", "attrs", "children")

    def __init__(self, tag, attrs=None):
        self.tag = tag
        self.attrs = dict(attrs or {})
        self.children = []  # Element or str (text run)

    def __repr__(self):
        return f"<Element {self.tag} children={len(self.children)}>"

    def __eq__(self, other):
        if not isinstance(other, Element):
            return NotImplemented
        return (self.tag == other.tag and self.attrs == other.attrs
                and self.children == other.children)

    def __hash__(self):
        return hash((self.tag, tuple(sorted(self.attrs.items())), len(self.children)))

    def iter_text(self, _visible_only=True):
        """Yield text runs in document order, skipping invisible subtrees."""
        if _visible_only and self.tag in _INVISIBLE_TAGS:
            return
        for child in self.children:
            if isinstance(child, str):
                yield child
            else:
                yield from child.iter_text(_visible_only)

    def find_all(self, tags):
        """Yield (element, path) pairs for descendants with the given tags."""
        wanted = frozenset(tags)
        stack = [(self, ())]
        while stack:
            node, path = stack.pop()
            ordered = [
                (child, path + (i,))
                for i, child in enumerate(node.children)
                if isinstance(child, Element)
            ]
            for child, child_path in reversed(ordered):
                stack.append((child, child_path))
            if node.tag in wanted:
                yield node, path


def resolve_path(root: Element, path: tuple) -> Element:
    node = root
    for index in path:
        node = node.children[index]
    return node


def visible_text(node: Element) -> str:
    """Normalized visible text of a subtree."""
    return normalize_text("".join(node.iter_text()))


@dataclass(frozen=True)
class Length:
    """A declared dimension: numeric value plus its unit (px, %, em...)."""

    value: float
    unit: str = "px"


_LENGTH_RE = re.compile(r"^\s*([0-9]+(?:\.[0-9]+)?)\s*(px|%|em|rem)?\s*$", re.I)


def parse_length(raw) -> Length | None:
    """Parse an HTML length attribute; unparsable or non-positive gives None."""
    if raw is None:
        return None
    match = _LENGTH_RE.match(str(raw))
    if not match:
        return None
    value = float(match.group(1))
    if value <= 0:
        return None
    return Length(value, (match.group(2) or "px").lower())


@dataclass(frozen=True)
class LinkRef:
    raw_href: str
    kind: str  # external | internal | mailto | other
    anchor_text: str
    context_snippet: str
    node_path: tuple


@dataclass(frozen=True)
class ImageRef:
    src: str
    declared_width: Length | None
    declared_height: Length | None
    alt: str
    node_path: tuple


@dataclass(frozen=True)
class PageModel:
    """Parsed, query-ready representation of one HTML page."""

    root: Element
    anchors_defined: frozenset
    links: tuple
    images: tuple
    visible_text_length: int
    sections: tuple  # (heading text, depth, node path)
    self_hosts: frozenset = frozenset()
    warnings: tuple = ()


class _TreeBuilder(HTMLParser):
    """Builds a recovered tree with browser-style implicit closes."""

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.root = Element("document")
        self.stack = [self.root]

    def _open_tags(self):
        return [node.tag for node in self.stack]

    def _close_until(self, tags):
        # pop back to (and including) the nearest open tag in `tags`
        open_tags = self._open_tags()
        for i in range(len(open_tags) - 1, 0, -1):
            if open_tags[i] in tags:
                del self.stack[i:]
                return

    def handle_starttag(self, tag, attrs):
        if tag in _SIBLING_CLOSERS:
            closable = _SIBLING_CLOSERS[tag]
            while len(self.stack) > 1 and self.stack[-1].tag in closable:
                self.stack.pop()
        elif tag in _P_CLOSERS:
            while len(self.stack) > 1 and self.stack[-1].tag == "p":
                self.stack.pop()
        element = Element(tag, attrs)
        self.stack[-1].children.append(element)
        if tag not in VOID_ELEMENTS:
            self.stack.append(element)

    def handle_startendtag(self, tag, attrs):
        self.stack[-1].children.append(Element(tag, attrs))

    def handle_endtag(self, tag):
        if tag in VOID_ELEMENTS:
            return
        open_tags = self._open_tags()
        if tag in open_tags[1:]:
            self._close_until({tag})
        # unmatched end tags are dropped, as a browser would

    def handle_data(self, data):
        if data:
            self.stack[-1].children.append(data)


def classify_href(raw_href: str, self_hosts: frozenset) -> str:
    if raw_href.startswith("#"):
        return "internal"
    parts = urlsplit(raw_href)
    scheme = parts.scheme.lower()
    if scheme == "mailto":
        return "mailto"
    if scheme in ("http", "https"):
        host = (parts.hostname or "").lower()
        if host and host not in self_hosts:
            return "external"
    return "other"


def _context_snippet(root: Element, path: tuple, anchor_text: str, limit=240) -> str:
    # nearest block-level ancestor provides the surrounding text
    node = root
    block = root
    for index in path:
        node = node.children[index]
        if isinstance(node, Element) and node.tag in _BLOCK_TAGS:
            block = node
    text = visible_text(block)
    if len(text) <= limit:
        return text
    pos = text.find(anchor_text) if anchor_text else -1
    if pos < 0:
        return text[:limit]
    start = max(0, pos - (limit - len(anchor_text)) // 2)
    return text[start:start + limit]


def extract_links(page: PageModel) -> list[LinkRef]:
    """All a[href] elements of the page, one LinkRef each."""
    return list(page.links)


def visible_text_length(page: PageModel) -> int:
    """Whitespace-normalized count of visible text characters."""
    return page.visible_text_length


def _collect_links(root: Element, self_hosts: frozenset) -> list[LinkRef]:
    links = []
    for node, path in root.find_all({"a"}):
        href = node.attrs.get("href")
        if href is None:
            continue
        anchor_text = visible_text(node)
        links.append(LinkRef(
            raw_href=href,
            kind=classify_href(href, self_hosts),
            anchor_text=anchor_text,
            context_snippet=_context_snippet(root, path, anchor_text),
            node_path=path,
        ))
    return links


def _collect_images(root: Element) -> tuple[list[ImageRef], list[str]]:
    images = []
    warnings = []
    for node, path in root.find_all({"img"}):
        width = parse_length(node.attrs.get("width"))
        height = parse_length(node.attrs.get("height"))
        for attr in ("width", "height"):
            raw = node.attrs.get(attr)
            if raw is not None and parse_length(raw) is None:
                warnings.append(f"img {attr}={raw!r} ignored (not a positive length)")
        images.append(ImageRef(
            src=node.attrs.get("src", ""),
            declared_width=width,
            declared_height=height,
            alt=node.attrs.get("alt", ""),
            node_path=path,
        ))
    return images, warnings


def _collect_anchors(root: Element) -> tuple[frozenset, list[str]]:
    seen = set()
    warnings = []
    stack = [root]
    order = []
    while stack:
        node = stack.pop()
        order.append(node)
        stack.extend(
            child for child in reversed(node.children) if isinstance(child, Element)
        )
    for node in order:
        candidates = []
        if "id" in node.attrs and node.attrs["id"]:
            candidates.append(node.attrs["id"])
        if node.tag == "a" and node.attrs.get("name"):
            candidates.append(node.attrs["name"])
        for anchor in candidates:
            if anchor in seen:
                warnings.append(f"duplicate anchor id {anchor!r} (first occurrence wins)")
            else:
                seen.add(anchor)
    return frozenset(seen), warnings


def _collect_sections(root: Element) -> list[tuple]:
    sections = []
    for node, path in root.find_all(HEADING_TAGS):
        depth = int(node.tag[1])
        sections.append((visible_text(node), depth, path))
    return sections


def parse_html(data, self_hosts=frozenset()) -> PageModel:
    """Parse raw HTML (bytes or str) into a PageModel.

    Accepts malformed input; only empty input raises. Bytes are decoded
    as UTF-8 with replacement.
    """
    if isinstance(data, bytes):
        text = data.decode("utf-8", errors="replace")
    else:
        text = data
    if not text or not text.strip():
        raise ValueError("cannot parse empty HTML input")

    builder = _TreeBuilder()
    builder.feed(text)
    builder.close()
    root = builder.root

    hosts = frozenset(h.lower() for h in self_hosts)
    links = _collect_links(root, hosts)
    images, image_warnings = _collect_images(root)
    anchors, anchor_warnings = _collect_anchors(root)
    return PageModel(
        root=root,
        anchors_defined=anchors,
        links=tuple(links),
        images=tuple(images),
        visible_text_length=len(visible_text(root)),
        sections=tuple(_collect_sections(root)),
        self_hosts=hosts,
        warnings=tuple(image_warnings + anchor_warnings),
    )


def fragment_target(raw_href: str) -> str:
    """Fragment identifier of an internal link, percent-decoded."""
    return unquote(raw_href[1:]) if raw_href.startswith("#") else ""
