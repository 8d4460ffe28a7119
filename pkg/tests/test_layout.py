"""Layout estimation vs hand-computed geometry, plus the import path."""

import math

import pytest
import yaml
from hypothesis import given, strategies as st

from pageval.errors import DegeneratePageError, LayoutImportError
from pageval.html_analyzer import parse_html
from pageval.layout import (
    ContainerMeasure,
    Viewport,
    balance_deviation,
    estimate_layout,
    import_layout,
)

from conftest import FIXTURE_GEOMETRY, GLYPH_AREA, fixture_pages


def oracle_deviation(geometry, vp_width=1440.0, default=(640.0, 360.0)):
    """Independent arithmetic from the fixture constants, no src reuse."""
    rows = []
    for c in geometry["containers"]:
        image_area = 0.0
        for dims in c["images"]:
            w, h = (float(dims[0]), float(dims[1])) if dims else default
            if w > vp_width:
                s = vp_width / w
                w, h = w * s, h * s
            image_area += w * h
        area = image_area + c["chars"] * GLYPH_AREA
        rows.append((area, image_area))
    total = sum(a for a, _ in rows)
    return sum((a / total) * abs((ia / a if a else 0.0) - 0.5) / 0.5
               for a, ia in rows)


# literals derived once by hand from the fixture constants
HAND_DEVIATIONS = {
    "f1": 1.0,                       # text only
    "f2": 17.0 / 27.0,               # 48,000 px^2 image vs 211,200 px^2 text
    "f3": 1.0,                       # image only
    "f4": 17318.4 / 439718.4,        # tiny text-only second container
    "f5": 0.76,                      # 0.48*1 + 0.52*(7/13)
}


class TestFixtureDeviations:
    @pytest.mark.parametrize("name", sorted(FIXTURE_GEOMETRY))
    def test_matches_hand_value(self, name):
        page = parse_html(fixture_pages()[name])
        measured = estimate_layout(page)
        got = balance_deviation(measured)
        assert math.isclose(got, HAND_DEVIATIONS[name], abs_tol=1e-6)

    @pytest.mark.parametrize("name", sorted(FIXTURE_GEOMETRY))
    def test_matches_independent_oracle(self, name):
        page = parse_html(fixture_pages()[name])
        got = balance_deviation(estimate_layout(page))
        assert math.isclose(got, oracle_deviation(FIXTURE_GEOMETRY[name]),
                            abs_tol=1e-9)

    def test_f2_container_numbers(self):
        page = parse_html(fixture_pages()["f2"])
        (c,) = estimate_layout(page)
        assert math.isclose(c.image_area, 48_000.0, abs_tol=1e-9)
        assert math.isclose(c.area, 48_000.0 + 1000 * GLYPH_AREA, abs_tol=1e-9)
        assert math.isclose(c.image_fraction, 5.0 / 27.0, abs_tol=1e-12)
        assert c.area_weight == 1.0

    def test_f4_has_two_containers(self):
        page = parse_html(fixture_pages()["f4"])
        measured = estimate_layout(page)
        assert [c.node_path for c in measured] == ["body/div[0]", "body/div[1]"]
        assert math.isclose(measured[0].image_fraction, 0.5, abs_tol=1e-12)
        assert measured[1].image_area == 0.0


class TestMediaBoxes:
    def test_default_box_when_undeclared(self):
        page = parse_html("<body><div><img src='x.png'></div></body>")
        (c,) = estimate_layout(page)
        assert math.isclose(c.image_area, 640.0 * 360.0, abs_tol=1e-9)

    def test_missing_height_uses_default_aspect(self):
        page = parse_html("<body><div><img src='x.png' width='320'></div></body>")
        (c,) = estimate_layout(page)
        assert math.isclose(c.image_area, 320.0 * 180.0, abs_tol=1e-9)

    def test_missing_width_uses_default_aspect(self):
        page = parse_html("<body><div><img src='x.png' height='90'></div></body>")
        (c,) = estimate_layout(page)
        assert math.isclose(c.image_area, 160.0 * 90.0, abs_tol=1e-9)

    def test_percent_width_resolves_against_viewport(self):
        page = parse_html("<body><div><img src='x.png' width='50%' height='100'></div></body>")
        (c,) = estimate_layout(page)
        assert math.isclose(c.image_area, 720.0 * 100.0, abs_tol=1e-9)

    def test_em_units_resolve_against_base_font(self):
        page = parse_html("<body><div><img src='x.png' width='10em' height='5em'></div></body>")
        (c,) = estimate_layout(page)
        assert math.isclose(c.image_area, 160.0 * 80.0, abs_tol=1e-9)

    def test_oversized_image_scaled_to_viewport(self):
        page = parse_html(
            "<body><div><img src='x.png' width='2880' height='1000'></div></body>")
        (c,) = estimate_layout(page)
        assert math.isclose(c.image_area, 1440.0 * 500.0, abs_tol=1e-6)

    def test_video_and_iframe_count_as_media(self):
        page = parse_html(
            "<body><div><video width='100' height='100'></video>"
            "<iframe width='50' height='50'></iframe></div></body>")
        (c,) = estimate_layout(page)
        assert math.isclose(c.image_area, 100.0 * 100.0 + 50.0 * 50.0,
                            abs_tol=1e-9)

    def test_custom_viewport(self):
        vp = Viewport(width=800, base_font=20)
        page = parse_html("<body><div><img src='x.png' width='1000' height='500'>ab</div></body>")
        (c,) = estimate_layout(page, vp)
        assert math.isclose(c.image_area, 800.0 * 400.0, abs_tol=1e-6)
        assert math.isclose(c.area - c.image_area,
                            2 * (0.55 * 20) * (1.5 * 20), abs_tol=1e-9)

    def test_viewport_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            Viewport(width=0)


class TestContainers:
    def test_body_fallback_without_sections(self):
        page = parse_html("<body><p>one</p><p>two</p></body>")
        measured = estimate_layout(page)
        assert [c.node_path for c in measured] == ["body"]

    def test_root_fallback_without_body(self):
        page = parse_html("<div>naked fragment</div>")
        measured = estimate_layout(page)
        assert len(measured) == 1

    def test_nested_containers_not_split(self):
        # only direct children of body become containers
        page = parse_html(
            "<body><div><div>inner text</div><img src='x.png' width='10' height='10'></div></body>")
        measured = estimate_layout(page)
        assert len(measured) == 1


class TestDeviation:
    def test_empty_page_is_degenerate(self):
        page = parse_html("<body></body>")
        with pytest.raises(DegeneratePageError):
            balance_deviation(estimate_layout(page))

    def test_perfect_split_is_zero(self):
        containers = [ContainerMeasure("c", 200.0, 100.0, 1.0, 0.5)]
        assert balance_deviation(containers) == 0.0

    @given(st.floats(min_value=1e-3, max_value=1e6))
    def test_scale_invariance(self, k):
        base = [
            ContainerMeasure("a", 400.0, 100.0, 0.0, 0.25),
            ContainerMeasure("b", 600.0, 500.0, 0.0, 5.0 / 6.0),
        ]
        weighted = [
            ContainerMeasure(c.node_path, c.area * k, c.image_area * k,
                             c.area * k / (1000.0 * k), c.image_fraction)
            for c in base
        ]
        reference = [
            ContainerMeasure(c.node_path, c.area, c.image_area,
                             c.area / 1000.0, c.image_fraction)
            for c in base
        ]
        assert math.isclose(balance_deviation(weighted),
                            balance_deviation(reference), abs_tol=1e-9)

    @given(st.lists(
        st.tuples(st.floats(min_value=1.0, max_value=1e5),
                  st.floats(min_value=0.0, max_value=1.0)),
        min_size=1, max_size=6))
    def test_bounded_unit_interval(self, rows):
        total = sum(a for a, _ in rows)
        containers = [
            ContainerMeasure(f"c{i}", a, a * f, a / total, f)
            for i, (a, f) in enumerate(rows)
        ]
        d = balance_deviation(containers)
        assert -1e-12 <= d <= 1.0 + 1e-12


class TestImportLayout:
    def _write(self, tmp_path, doc):
        path = tmp_path / "layout.yaml"
        path.write_text(yaml.safe_dump(doc), encoding="utf-8")
        return path

    def test_valid_import(self, tmp_path):
        path = self._write(tmp_path, {"containers": [
            {"path": "main", "area": 1000.0, "image_area": 400.0},
            {"path": "aside", "area": 500.0, "image_area": 0.0},
        ]})
        measured = import_layout(path)
        assert [c.node_path for c in measured] == ["main", "aside"]
        assert math.isclose(measured[0].area_weight, 1000.0 / 1500.0,
                            abs_tol=1e-12)
        assert measured[0].image_fraction == 0.4

    def test_import_agrees_with_heuristic_on_same_measures(self, tmp_path):
        page = parse_html(fixture_pages()["f5"])
        heuristic = estimate_layout(page)
        path = self._write(tmp_path, {"containers": [
            {"path": c.node_path, "area": c.area, "image_area": c.image_area}
            for c in heuristic
        ]})
        imported = import_layout(path)
        assert math.isclose(balance_deviation(imported),
                            balance_deviation(heuristic), abs_tol=1e-9)

    def test_explicit_weights_renormalized(self, tmp_path):
        path = self._write(tmp_path, {"containers": [
            {"path": "a", "area": 10.0, "image_area": 0.0, "weight": 0.7004},
            {"path": "b", "area": 10.0, "image_area": 10.0, "weight": 0.2999},
        ]})
        measured = import_layout(path)
        assert math.isclose(sum(c.area_weight for c in measured), 1.0,
                            abs_tol=1e-12)

    def test_weights_off_by_too_much_rejected(self, tmp_path):
        path = self._write(tmp_path, {"containers": [
            {"path": "a", "area": 10.0, "image_area": 0.0, "weight": 0.7},
            {"path": "b", "area": 10.0, "image_area": 0.0, "weight": 0.2},
        ]})
        with pytest.raises(LayoutImportError, match="sum"):
            import_layout(path)

    def test_partial_weights_rejected(self, tmp_path):
        path = self._write(tmp_path, {"containers": [
            {"path": "a", "area": 10.0, "image_area": 0.0, "weight": 1.0},
            {"path": "b", "area": 10.0, "image_area": 0.0},
        ]})
        with pytest.raises(LayoutImportError, match="all containers"):
            import_layout(path)

    def test_negative_area_rejected(self, tmp_path):
        path = self._write(tmp_path, {"containers": [
            {"path": "a", "area": -1.0, "image_area": 0.0}]})
        with pytest.raises(LayoutImportError, match="area"):
            import_layout(path)

    def test_image_exceeding_area_rejected(self, tmp_path):
        path = self._write(tmp_path, {"containers": [
            {"path": "a", "area": 10.0, "image_area": 11.0}]})
        with pytest.raises(LayoutImportError, match="exceeds"):
            import_layout(path)

    def test_missing_field_names_locus(self, tmp_path):
        path = self._write(tmp_path, {"containers": [{"path": "a", "area": 10.0}]})
        with pytest.raises(LayoutImportError) as err:
            import_layout(path)
        assert "containers[0]" in str(err.value)

    def test_unparsable_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("containers: [{unclosed", encoding="utf-8")
        with pytest.raises(LayoutImportError):
            import_layout(path)

    def test_missing_containers_key(self, tmp_path):
        path = self._write(tmp_path, {"panels": []})
        with pytest.raises(LayoutImportError):
            import_layout(path)
