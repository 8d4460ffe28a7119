"""Renderer-free layout estimation and the weighted balance deviation.

Approximates the geometry a browser would produce: top-level sectioning
elements become containers, media elements contribute declared-or-default
pixel boxes scaled to fit the viewport, and text contributes one glyph
box per normalized character. The deviation D aggregates per-container
image fractions against the ideal 1:1 image-text split, weighted by
container area, and is normalized to [0, 1].

Exact geometry measured by a real browser can be imported instead; both
paths feed the same deviation computation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import DegeneratePageError, LayoutImportError
from .html_analyzer import Element, Length, PageModel, parse_length, visible_text

# Tags contributing visual-media area. Videos and embedded frames count as
# image boxes: they occupy the visual channel the balance metric measures.
MEDIA_TAGS = frozenset({"img", "video", "iframe", "embed", "object", "canvas", "svg"})

CONTAINER_TAGS = frozenset({"section", "article", "div"})

# glyph box: advance width and line height in em units
GLYPH_ADVANCE_EM = 0.55
GLYPH_LINE_EM = 1.5


@dataclass(frozen=True)
class Viewport:
    """Assumed rendering surface for the heuristic estimator."""

    width: float = 1440.0
    base_font: float = 16.0
    default_image_width: float = 640.0
    default_image_height: float = 360.0

    def __post_init__(self):
        for name in ("width", "base_font", "default_image_width", "default_image_height"):
            if getattr(self, name) <= 0:
                raise ValueError(f"viewport {name} must be positive")


@dataclass(frozen=True)
class ContainerMeasure:
    """Measured geometry of one container."""

    node_path: str
    area: float
    image_area: float
    area_weight: float
    image_fraction: float


def _resolve_length(length: Length | None, container_width: float,
                    base_font: float) -> float | None:
    if length is None:
        return None
    if length.unit == "px":
        return length.value
    if length.unit == "%":
        return length.value / 100.0 * container_width
    if length.unit in ("em", "rem"):
        return length.value * base_font
    return None


def _media_box_area(node: Element, container_width: float, vp: Viewport) -> float:
    width = _resolve_length(parse_length(node.attrs.get("width")), container_width, vp.base_font)
    height = _resolve_length(parse_length(node.attrs.get("height")), container_width, vp.base_font)
    aspect = vp.default_image_height / vp.default_image_width
    if width is None and height is None:
        width, height = vp.default_image_width, vp.default_image_height
    elif width is None:
        width = height / aspect
    elif height is None:
        height = width * aspect
    if width > container_width:
        scale = container_width / width
        width *= scale
        height *= scale
    return width * height


def _subtree_media(container: Element):
    yield from (node for node, _ in container.find_all(MEDIA_TAGS))


def _label(parent_label: str, tag: str, index: int) -> str:
    return f"{parent_label}/{tag}[{index}]"


def _find_body(root: Element) -> tuple[Element, str]:
    for node, _ in root.find_all({"body"}):
        return node, "body"
    return root, "page"


def measure_container(container: Element, label: str, vp: Viewport) -> tuple[str, float, float]:
    """Return (label, total area, image area) for one container subtree."""
    image_area = sum(_media_box_area(node, vp.width, vp) for node in _subtree_media(container))
    char_count = len(visible_text(container))
    glyph_area = (GLYPH_ADVANCE_EM * vp.base_font) * (GLYPH_LINE_EM * vp.base_font)
    text_area = char_count * glyph_area
    return label, image_area + text_area, image_area


def estimate_layout(page: PageModel, vp: Viewport | None = None) -> list[ContainerMeasure]:
    """Measure containers heuristically: top-level sectioning children of
    body, or body itself when it has none. Empty containers get zero area.
    """
    vp = vp or Viewport()
    body, body_label = _find_body(page.root)
    containers = [
        (child, _label(body_label, child.tag, i))
        for i, child in enumerate(body.children)
        if isinstance(child, Element) and child.tag in CONTAINER_TAGS
    ]
    if not containers:
        containers = [(body, body_label)]
    measured = [measure_container(node, label, vp) for node, label in containers]
    return _weigh(measured)


def _weigh(measured: list[tuple[str, float, float]]) -> list[ContainerMeasure]:
    total = sum(area for _, area, _ in measured)
    result = []
    for label, area, image_area in measured:
        weight = area / total if total > 0 else 0.0
        fraction = image_area / area if area > 0 else 0.0
        result.append(ContainerMeasure(
            node_path=label,
            area=area,
            image_area=image_area,
            area_weight=weight,
            image_fraction=fraction,
        ))
    return result


def balance_deviation(containers: list[ContainerMeasure]) -> float:
    """Weighted deviation of image fractions from the ideal 1:1 split.

    D = sum_c w_c * |rho_c - 0.5| / 0.5, in [0, 1]. Raises
    DegeneratePageError when no container has measurable area.
    """
    total_weight = sum(c.area_weight for c in containers)
    if not containers or total_weight <= 0:
        raise DegeneratePageError("page has no measurable container area")
    return sum(
        (c.area_weight / total_weight) * abs(c.image_fraction - 0.5) / 0.5
        for c in containers
    )


def import_layout(path) -> list[ContainerMeasure]:
    """Load externally measured container geometry.

    The file is a YAML document with a ``containers`` list; each record
    carries ``path`` (selector label), ``area`` and ``image_area`` in
    px^2, and optionally an explicit ``weight``. Explicit weights must
    sum to 1 within 1e-3 and are renormalized to sum exactly 1.
    """
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise LayoutImportError(f"unparsable layout file {path}: {exc}") from exc
    if not isinstance(doc, dict) or "containers" not in doc:
        raise LayoutImportError("layout file must define a 'containers' list", field="containers")
    records = doc["containers"]
    if not isinstance(records, list) or not records:
        raise LayoutImportError("'containers' must be a non-empty list", field="containers")

    rows = []
    weights = []
    for i, record in enumerate(records):
        locus = f"containers[{i}]"
        if not isinstance(record, dict):
            raise LayoutImportError("container record must be a mapping", field=locus)
        try:
            area = float(record["area"])
            image_area = float(record["image_area"])
        except KeyError as exc:
            raise LayoutImportError(f"missing required field {exc}", field=locus) from exc
        except (TypeError, ValueError) as exc:
            raise LayoutImportError("area fields must be numbers", field=locus) from exc
        if area < 0:
            raise LayoutImportError("area must be >= 0", field=f"{locus}.area")
        if image_area < 0:
            raise LayoutImportError("image_area must be >= 0", field=f"{locus}.image_area")
        if image_area > area:
            raise LayoutImportError("image_area exceeds area", field=f"{locus}.image_area")
        rows.append((str(record.get("path", f"container[{i}]")), area, image_area))
        if "weight" in record:
            weights.append(float(record["weight"]))

    if weights:
        if len(weights) != len(rows):
            raise LayoutImportError("either all containers carry a weight or none do",
                                    field="containers")
        if any(w < 0 for w in weights):
            raise LayoutImportError("weights must be >= 0", field="containers")
        total = sum(weights)
        if abs(total - 1.0) > 1e-3 or total <= 0:
            raise LayoutImportError(f"weights sum to {total}, expected 1 within 1e-3",
                                    field="containers")
        return [
            ContainerMeasure(
                node_path=label,
                area=area,
                image_area=image_area,
                area_weight=w / total,
                image_fraction=image_area / area if area > 0 else 0.0,
            )
            for (label, area, image_area), w in zip(rows, weights)
        ]
    return _weigh(rows)
