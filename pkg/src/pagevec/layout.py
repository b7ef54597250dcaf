"""Layout-region extraction from detector output.

Turns raw layout-detector records for a page into a filtered, reading-ordered,
capped list of crop regions:

  * category ids are mapped onto a fixed content-type label set,
  * regions are ordered top-to-bottom by greedy vertical banding and
    left-to-right within a band,
  * tiny regions are dropped by an area-ratio threshold and the list is
    capped at a maximum length,
  * pages with no detections fall back to a uniform grid, and pages where
    filtering removed everything fall back to a single whole-page region.

No pixel decoding happens here; regions are pure geometry plus labels.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from sklearn.base import BaseEstimator, TransformerMixin

from .errors import InvalidGeometry

logger = logging.getLogger(__name__)


class ContentType(str, Enum):
    """Closed label set for what a layout region contains."""

    TITLE = "title"
    TEXT = "text"
    FIGURE = "figure"
    FIGURE_CAPTION = "figure_caption"
    TABLE = "table"
    TABLE_CAPTION = "table_caption"
    TABLE_FOOTNOTE = "table_footnote"
    FORMULA = "formula"
    FORMULA_CAPTION = "formula_caption"
    LIST = "list"
    HEADER = "header"
    FOOTER = "footer"
    PAGE_NUMBER = "page_number"
    OTHER = "other"


# Category ids follow the common 10-class document-layout detector convention.
DEFAULT_CATEGORY_MAP: dict[int, ContentType] = {
    0: ContentType.TITLE,
    1: ContentType.TEXT,
    2: ContentType.OTHER,
    3: ContentType.FIGURE,
    4: ContentType.FIGURE_CAPTION,
    5: ContentType.TABLE,
    6: ContentType.TABLE_CAPTION,
    7: ContentType.TABLE_FOOTNOTE,
    8: ContentType.FORMULA,
    9: ContentType.FORMULA_CAPTION,
}


@dataclass(frozen=True)
class PageGeometry:
    """Identity and pixel dimensions of one page image."""

    page_id: str
    width: float
    height: float

    def __post_init__(self):
        if not self.page_id:
            raise ValueError("page_id must be non-empty")
        if self.width <= 0 or self.height <= 0:
            raise InvalidGeometry(
                f"page {self.page_id!r} has non-positive size {self.width}x{self.height}"
            )


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel coordinates, (x1, y1) top-left inclusive.

    Raw detector boxes may be out of bounds or degenerate; validity against a
    page is only guaranteed after clamp_to_page.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return max(0.0, self.width) * max(0.0, self.height)

    @property
    def center_x(self) -> float:
        return (self.x1 + self.x2) / 2.0

    @property
    def center_y(self) -> float:
        return (self.y1 + self.y2) / 2.0

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class DetectionRecord:
    """One raw detector hit: box, category id, confidence."""

    bbox: BoundingBox
    category_id: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class LayoutRegion:
    """A kept crop region: dense index, clamped box, label, share of page area."""

    index: int
    bbox: BoundingBox
    content_type: ContentType
    area_ratio: float


@dataclass(frozen=True)
class LayoutParseConfig:
    """Knobs for split_page.

    min_area_ratio  drop regions covering less than this share of the page
    max_regions     hard cap on regions kept per page
    grid_rows/cols  fallback grid shape for pages with no detections
    band_epsilon    vertical-band tolerance as a fraction of page height
    """

    min_area_ratio: float = 0.01
    max_regions: int = 20
    grid_rows: int = 3
    grid_cols: int = 3
    band_epsilon: float = 0.02

    def __post_init__(self):
        if not 0.0 <= self.min_area_ratio <= 1.0:
            raise ValueError(f"min_area_ratio must be in [0, 1], got {self.min_area_ratio}")
        if self.max_regions < 1:
            raise ValueError("max_regions must be >= 1")
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ValueError("grid shape must be at least 1x1")
        if self.band_epsilon < 0:
            raise ValueError("band_epsilon must be >= 0")


@dataclass(frozen=True)
class PageDetections:
    """One detector-output page: geometry plus raw detections."""

    page: PageGeometry
    detections: tuple[DetectionRecord, ...]


def map_category_id(
    category_id: int, mapping: Mapping[int, ContentType] | None = None
) -> ContentType:
    """Map a detector category id onto a content-type label.

    Unknown ids map to OTHER; the function is total.
    """
    table = DEFAULT_CATEGORY_MAP if mapping is None else mapping
    return table.get(category_id, ContentType.OTHER)


def clamp_to_page(bbox: BoundingBox, page: PageGeometry) -> BoundingBox:
    """Clamp a box into page bounds; degenerate results raise InvalidGeometry."""
    x1 = min(max(bbox.x1, 0.0), page.width)
    x2 = min(max(bbox.x2, 0.0), page.width)
    y1 = min(max(bbox.y1, 0.0), page.height)
    y2 = min(max(bbox.y2, 0.0), page.height)
    if x1 >= x2 or y1 >= y2:
        raise InvalidGeometry(
            f"box {bbox.as_list()} degenerate after clamping into "
            f"{page.width}x{page.height} page {page.page_id!r}"
        )
    return BoundingBox(x1, y1, x2, y2)


def reading_order(
    boxes: Sequence[BoundingBox], page_height: float, band_epsilon: float = 0.02
) -> list[int]:
    """Return the reading-order permutation of box indices.

    Boxes are grouped into vertical bands greedily: walking boxes by
    ascending center-Y, a box joins the current band while its center-Y is
    within band_epsilon * page_height of the band's running mean center-Y,
    otherwise it opens a new band. Bands read top to bottom; within a band,
    boxes read left to right by center-X. All ties fall back to input order.
    """
    if page_height <= 0:
        raise InvalidGeometry(f"page_height must be positive, got {page_height}")
    n = len(boxes)
    if n == 0:
        return []
    tol = band_epsilon * page_height
    by_y = sorted(range(n), key=lambda i: (boxes[i].center_y, i))

    bands: list[list[int]] = []
    band_sum = 0.0
    for i in by_y:
        cy = boxes[i].center_y
        if bands and abs(cy - band_sum / len(bands[-1])) <= tol:
            bands[-1].append(i)
            band_sum += cy
        else:
            bands.append([i])
            band_sum = cy

    order: list[int] = []
    for band in bands:
        order.extend(sorted(band, key=lambda i: (boxes[i].center_x, i)))
    return order


def sort_reading_order(
    entries: Sequence[tuple[BoundingBox, ContentType]],
    page_height: float,
    band_epsilon: float = 0.02,
) -> list[tuple[BoundingBox, ContentType]]:
    """Reorder (box, content_type) pairs into reading order."""
    boxes = [bbox for bbox, _ in entries]
    return [entries[i] for i in reading_order(boxes, page_height, band_epsilon)]


def grid_fallback(page: PageGeometry, rows: int = 3, cols: int = 3) -> list[LayoutRegion]:
    """Tile the page into a rows x cols grid of OTHER regions, row-major.

    Cell edges sit at floor multiples of the uniform cell size; the last row
    and column absorb any remainder, so cells tile the page exactly.
    """
    if rows < 1 or cols < 1:
        raise ValueError("grid shape must be at least 1x1")
    cell_w = float(math.floor(page.width / cols))
    cell_h = float(math.floor(page.height / rows))
    if cell_w < 1 or cell_h < 1:
        raise InvalidGeometry(
            f"page {page.page_id!r} ({page.width}x{page.height}) too small for a "
            f"{rows}x{cols} grid"
        )
    xs = [cell_w * c for c in range(cols)] + [page.width]
    ys = [cell_h * r for r in range(rows)] + [page.height]

    total = page.width * page.height
    regions = []
    for r in range(rows):
        for c in range(cols):
            box = BoundingBox(xs[c], ys[r], xs[c + 1], ys[r + 1])
            regions.append(
                LayoutRegion(
                    index=r * cols + c,
                    bbox=box,
                    content_type=ContentType.OTHER,
                    area_ratio=box.area / total,
                )
            )
    return regions


def split_page(
    page: PageGeometry,
    detections: Sequence[DetectionRecord],
    cfg: LayoutParseConfig | None = None,
) -> list[LayoutRegion]:
    """Turn detector output for one page into the final crop-region list.

    Empty detections take the grid fallback (capped at max_regions). Otherwise
    boxes are clamped (degenerate ones raise InvalidGeometry rather than being
    dropped), sorted into reading order, and kept while their area ratio
    clears min_area_ratio, stopping at max_regions. If filtering removed
    everything, a single whole-page OTHER region is emitted. Region indices in
    the result are always dense from 0.
    """
    cfg = cfg or LayoutParseConfig()

    if not detections:
        cells = grid_fallback(page, cfg.grid_rows, cfg.grid_cols)
        if len(cells) > cfg.max_regions:
            logger.warning(
                "grid fallback for page %s capped from %d to %d regions",
                page.page_id, len(cells), cfg.max_regions,
            )
            cells = cells[: cfg.max_regions]
        return cells

    clamped = [clamp_to_page(det.bbox, page) for det in detections]
    labels = [map_category_id(det.category_id) for det in detections]

    order = reading_order(clamped, page.height, cfg.band_epsilon)
    total = page.width * page.height

    regions: list[LayoutRegion] = []
    for src in order:
        if len(regions) >= cfg.max_regions:
            break
        ratio = clamped[src].area / total
        if ratio >= cfg.min_area_ratio:
            regions.append(
                LayoutRegion(
                    index=len(regions),
                    bbox=clamped[src],
                    content_type=labels[src],
                    area_ratio=ratio,
                )
            )

    if not regions:
        logger.warning(
            "all %d detections on page %s fell below area ratio %.4g; "
            "falling back to whole-page region",
            len(detections), page.page_id, cfg.min_area_ratio,
        )
        whole = BoundingBox(0.0, 0.0, page.width, page.height)
        regions = [LayoutRegion(0, whole, ContentType.OTHER, 1.0)]
    return regions


# ---------------------------------------------------------------------------
# File formats: detector ingestion and crop-spec output, both JSON lines.
# ---------------------------------------------------------------------------

def read_detector_file(path: str | Path) -> list[PageDetections]:
    """Read detector output: one JSON object per line.

    Each line looks like
      {"page_id": ..., "width": ..., "height": ...,
       "regions": [{"bbox": [x1, y1, x2, y2], "category_id": ..., "score": ...}, ...]}
    Duplicate page ids are rejected.
    """
    pages: list[PageDetections] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            page = PageGeometry(str(obj["page_id"]), float(obj["width"]), float(obj["height"]))
            if page.page_id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate page_id {page.page_id!r}")
            seen.add(page.page_id)
            dets = tuple(
                DetectionRecord(
                    bbox=BoundingBox(*(float(v) for v in reg["bbox"])),
                    category_id=int(reg["category_id"]),
                    score=float(reg.get("score", 1.0)),
                )
                for reg in obj.get("regions", [])
            )
            pages.append(PageDetections(page=page, detections=dets))
    return pages


def write_crop_specs(
    regions_by_page: Iterable[tuple[str, Sequence[LayoutRegion]]], path: str | Path
) -> None:
    """Write crop regions as JSON lines: {"page_id", "region_index", "bbox", "content_type"}."""
    with open(path, "w", encoding="utf-8") as fh:
        for page_id, regions in regions_by_page:
            for region in regions:
                fh.write(
                    json.dumps(
                        {
                            "page_id": page_id,
                            "region_index": region.index,
                            "bbox": region.bbox.as_list(),
                            "content_type": region.content_type.value,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )


def read_crop_specs(path: str | Path) -> list[tuple[str, list[LayoutRegion]]]:
    """Read crop specs back, grouped by page in file order.

    Region indices within a page must be dense from 0 in file order. The
    area_ratio field is not stored in the crop-spec format and is returned
    as 0.0 here; downstream consumers only need box, label, and index.
    """
    grouped: dict[str, list[LayoutRegion]] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            page_id = str(obj["page_id"])
            if page_id not in grouped:
                grouped[page_id] = []
                order.append(page_id)
            expected = len(grouped[page_id])
            idx = int(obj["region_index"])
            if idx != expected:
                raise ValueError(
                    f"{path}:{lineno}: region_index {idx} out of order for page "
                    f"{page_id!r} (expected {expected})"
                )
            grouped[page_id].append(
                LayoutRegion(
                    index=idx,
                    bbox=BoundingBox(*(float(v) for v in obj["bbox"])),
                    content_type=ContentType(obj["content_type"]),
                    area_ratio=0.0,
                )
            )
    return [(page_id, grouped[page_id]) for page_id in order]


class LayoutSplitter(BaseEstimator, TransformerMixin):
    """Stateless transformer wrapping split_page for lists of pages.

    Parameters mirror LayoutParseConfig. fit is a no-op; transform maps a
    sequence of PageDetections to a list of LayoutRegion lists.
    """

    def __init__(
        self,
        min_area_ratio: float = 0.01,
        max_regions: int = 20,
        grid_rows: int = 3,
        grid_cols: int = 3,
        band_epsilon: float = 0.02,
    ):
        self.min_area_ratio = min_area_ratio
        self.max_regions = max_regions
        self.grid_rows = grid_rows
        self.grid_cols = grid_cols
        self.band_epsilon = band_epsilon

    def fit(self, X=None, y=None):
        return self

    def transform(self, X: Sequence[PageDetections]) -> list[list[LayoutRegion]]:
        cfg = LayoutParseConfig(
            min_area_ratio=self.min_area_ratio,
            max_regions=self.max_regions,
            grid_rows=self.grid_rows,
            grid_cols=self.grid_cols,
            band_epsilon=self.band_epsilon,
        )
        return [split_page(item.page, item.detections, cfg) for item in X]
