"""HTML analysis: parsing recovery, link extraction, visible text.

The visible-text oracle here is a second, independent implementation
built on HTMLParser event callbacks (no tree), so agreement is not
circular.
"""

import re
from html.parser import HTMLParser

import pytest
from hypothesis import given, strategies as st

from pageval.html_analyzer import (
    classify_href,
    fragment_target,
    normalize_text,
    parse_html,
    parse_length,
    visible_text,
)


class _OracleTextCounter(HTMLParser):
    """Event-stream visible-text collector, independent of the tree builder."""

    INVISIBLE = {"script", "style", "template", "head"}

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self._depth = 0
        self.chunks = []

    def handle_starttag(self, tag, attrs):
        if tag in self.INVISIBLE:
            self._depth += 1

    def handle_endtag(self, tag):
        if tag in self.INVISIBLE and self._depth:
            self._depth -= 1

    def handle_data(self, data):
        if not self._depth:
            self.chunks.append(data)


def oracle_text_length(html: str) -> int:
    counter = _OracleTextCounter()
    counter.feed(html)
    counter.close()
    return len(re.sub(r"\s+", " ", "".join(counter.chunks)).strip())


class TestNormalizeText:
    def test_collapses_whitespace(self):
        assert normalize_text("  a\n\t b \r\n c  ") == "a b c"

    def test_empty(self):
        assert normalize_text("   \n ") == ""


class TestParseLength:
    def test_px_and_bare_numbers(self):
        assert parse_length("240").value == 240.0
        assert parse_length("240px").value == 240.0
        assert parse_length("240px").unit == "px"

    def test_percent_and_font_units(self):
        assert parse_length("50%").unit == "%"
        assert parse_length("2em").unit == "em"
        assert parse_length("1.5rem").value == 1.5

    def test_garbage_is_none(self):
        assert parse_length("auto") is None
        assert parse_length("") is None
        assert parse_length(None) is None


class TestClassify:
    def test_fragment_is_internal(self):
        assert classify_href("#method", frozenset()) == "internal"
        assert classify_href("#", frozenset()) == "internal"

    def test_http_is_external(self):
        assert classify_href("https://example.com/x", frozenset()) == "external"
        assert classify_href("http://example.com", frozenset()) == "external"

    def test_self_host_is_not_external(self):
        hosts = frozenset({"project.example"})
        assert classify_href("https://project.example/assets", hosts) == "other"
        assert classify_href("https://other.example/", hosts) == "external"

    def test_mailto(self):
        assert classify_href("mailto:a@b.c", frozenset()) == "mailto"

    def test_relative_is_other(self):
        assert classify_href("assets/paper.pdf", frozenset()) == "other"

    def test_fragment_target_decodes(self):
        assert fragment_target("#sec%202") == "sec 2"
        assert fragment_target("#plain") == "plain"


class TestParseHtml:
    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            parse_html(b"")
        with pytest.raises(ValueError):
            parse_html("   ")

    def test_basic_structure(self):
        page = parse_html(
            "<html><head><title>T</title></head>"
            "<body><div id='a'>hello <a href='#a'>link</a></div></body></html>")
        assert page.visible_text_length == len("hello link")
        assert "a" in page.anchors_defined
        assert len(page.links) == 1
        assert page.links[0].kind == "internal"
        assert page.links[0].anchor_text == "link"

    def test_head_content_invisible(self):
        page = parse_html(
            "<html><head><title>Very Long Title Here</title>"
            "<style>.x{color:red}</style></head><body>ab</body></html>")
        assert page.visible_text_length == 2

    def test_script_invisible(self):
        page = parse_html("<body><script>var x = 'aaaa';</script>ok</body>")
        assert page.visible_text_length == 2

    def test_unclosed_p_recovery(self):
        page = parse_html("<body><p>one<p>two</body>")
        paragraphs = list(page.root.find_all(("p",)))
        assert len(paragraphs) == 2
        texts = [visible_text(node) for node, _ in paragraphs]
        assert texts == ["one", "two"]

    def test_unclosed_li_recovery(self):
        page = parse_html("<body><ul><li>a<li>b<li>c</ul></body>")
        items = page.root.find_all(("li",))
        assert [visible_text(n) for n, _ in items] == ["a", "b", "c"]

    def test_truncated_document(self):
        page = parse_html("<body><div><p>dangling")
        assert page.visible_text_length == len("dangling")

    def test_stray_end_tags_ignored(self):
        page = parse_html("<body></div></span>text</body>")
        assert page.visible_text_length == 4

    def test_void_elements_do_not_nest(self):
        page = parse_html("<body><div><img src='x.png'><br>text</div></body>")
        assert page.visible_text_length == 4
        assert len(page.images) == 1

    def test_image_attributes(self):
        page = parse_html(
            "<body><img src='f.png' width='240' height='200' alt='fig'></body>")
        img = page.images[0]
        assert img.src == "f.png"
        assert img.declared_width.value == 240.0
        assert img.declared_height.value == 200.0
        assert img.alt == "fig"

    def test_anchor_name_defines_target(self):
        page = parse_html("<body><a name='legacy'></a><a href='#legacy'>x</a></body>")
        assert "legacy" in page.anchors_defined

    def test_duplicate_ids_warn_first_wins(self):
        page = parse_html("<body><div id='x'>a</div><span id='x'>b</span></body>")
        assert "x" in page.anchors_defined
        assert any("duplicate" in w for w in page.warnings)

    def test_entity_refs_counted_as_characters(self):
        page = parse_html("<body>a&amp;b</body>")
        assert page.visible_text_length == 3

    def test_bytes_decoded_with_replacement(self):
        page = parse_html(b"<body>caf\xc3\xa9</body>")
        assert page.visible_text_length == 4

    def test_link_context_snippet(self):
        page = parse_html(
            "<body><p>Read the <a href='https://x.example/p'>paper</a> "
            "for details.</p></body>")
        link = page.links[0]
        assert "paper" in link.context_snippet
        assert link.kind == "external"

    def test_parse_is_deterministic(self):
        html = "<body><div id='a'>x<p>y<img src='i.png'></div></body>"
        first = parse_html(html)
        second = parse_html(html)
        assert first.visible_text_length == second.visible_text_length
        assert first.anchors_defined == second.anchors_defined
        assert [l.raw_href for l in first.links] == \
               [l.raw_href for l in second.links]


_WORDS = st.lists(
    st.text(alphabet="abcdefg", min_size=1, max_size=8), min_size=1,
    max_size=30)


class TestOracleAgreement:
    @given(_WORDS, st.integers(min_value=0, max_value=3))
    def test_visible_length_matches_event_oracle(self, words, style_blocks):
        body = " ".join(words)
        html = "<html><head>"
        html += "<style>body{margin:0}</style>" * style_blocks
        html += f"</head><body><div><p>{body}</p></div></body></html>"
        page = parse_html(html)
        assert page.visible_text_length == oracle_text_length(html)

    def test_oracle_agreement_on_fixture_like_page(self):
        html = ("<html><head><title>T</title></head><body>"
                "<nav><a href='#a'>A</a> <a href='#b'>B</a></nav>"
                "<section id='a'><h2>A</h2>alpha beta</section>"
                "<section id='b'><h2>B</h2>gamma</section>"
                "<script>ignore()</script></body></html>")
        page = parse_html(html)
        assert page.visible_text_length == oracle_text_length(html)
