"""Skeleton and part geometry, plus pooling over feature grids.

Feature grids are plain ``numpy`` arrays of shape ``(C, H, W)``. Pixel
coordinates are ``(x, y)`` with ``x`` along image width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePartError, ProjectionError, ValidationError

NUM_KEYPOINTS = 15
NUM_PARTS = 7

# 1-based slot order of the tiger skeleton.
KEYPOINT_NAMES = (
    "left_ear",
    "right_ear",
    "nose",
    "right_shoulder",
    "right_front_paw",
    "left_shoulder",
    "left_front_paw",
    "right_hip",
    "right_knee",
    "right_back_paw",
    "left_hip",
    "left_knee",
    "left_back_paw",
    "tail_root",
    "center",
)

PART_WIDTH_RATIO = 0.6
DEFAULT_GRID_HW = (16, 32)
MIDPOINT_TOLERANCE_PX = 1.0


@dataclass(frozen=True, eq=False)
class Skeleton:
    """15 keypoints as an array of rows ``(x, y, v)`` plus the OKS scale."""

    points: np.ndarray
    scale_s: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (NUM_KEYPOINTS, 3):
            raise ValidationError(
                f"skeleton needs {NUM_KEYPOINTS} keypoints, got shape {pts.shape}"
            )
        if not np.all(np.isfinite(pts)):
            raise ValidationError("skeleton has non-finite coordinates")
        if not (self.scale_s > 0 and math.isfinite(self.scale_s)):
            raise ValidationError(f"skeleton scale must be positive, got {self.scale_s}")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __eq__(self, other):
        if not isinstance(other, Skeleton):
            return NotImplemented
        return self.scale_s == other.scale_s and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash((self.points.tobytes(), self.scale_s))

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, :2]

    @property
    def visible(self) -> np.ndarray:
        return self.points[:, 2] > 0

    def point(self, kp: int) -> np.ndarray:
        """Coordinates of 1-based keypoint ``kp``."""
        return self.points[kp - 1, :2]

    def is_visible(self, kp: int) -> bool:
        return bool(self.points[kp - 1, 2] > 0)

    def center_violation(self) -> float | None:
        """Distance between keypoint 15 and the nose/tail-root midpoint.

        Returns ``None`` when any of the three keypoints is invisible.
        """
        if not (self.is_visible(3) and self.is_visible(14) and self.is_visible(15)):
            return None
        mid = 0.5 * (self.point(3) + self.point(14))
        return float(np.hypot(*(self.point(15) - mid)))


@dataclass(frozen=True)
class PartMap:
    """Seven named parts, each defined by a pair of 1-based keypoint indices."""

    parts: tuple[tuple[str, tuple[int, int]], ...]

    def __post_init__(self):
        parts = tuple((str(n), (int(p[0]), int(p[1]))) for n, p in self.parts)
        if len(parts) != NUM_PARTS:
            raise ValidationError(f"part map needs {NUM_PARTS} parts, got {len(parts)}")
        seen = set()
        for name, (i, j) in parts:
            if not (1 <= i <= NUM_KEYPOINTS and 1 <= j <= NUM_KEYPOINTS):
                raise ValidationError(f"part {name!r} keypoint index out of range: {(i, j)}")
            if i == j:
                raise ValidationError(f"part {name!r} uses the same keypoint twice")
            key = frozenset((i, j))
            if key in seen:
                raise ValidationError(f"duplicate keypoint pair {(i, j)} in part map")
            seen.add(key)
        object.__setattr__(self, "parts", parts)

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.parts]

    @classmethod
    def from_json(cls, obj: dict) -> "PartMap":
        try:
            return cls(tuple((p["name"], tuple(p["kp"])) for p in obj["parts"]))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed part map: {exc}") from exc

    def to_json(self) -> dict:
        return {"parts": [{"name": n, "kp": [i, j]} for n, (i, j) in self.parts]}


# The trunk pair (nose -> tail root) is an assumption; it is configurable.
DEFAULT_PART_MAP = PartMap(
    (
        ("trunk", (3, 14)),
        ("front_left", (6, 7)),
        ("front_right", (4, 5)),
        ("hind_thigh_left", (11, 12)),
        ("hind_thigh_right", (8, 9)),
        ("hind_shank_left", (12, 13)),
        ("hind_shank_right", (9, 10)),
    )
)


@dataclass(frozen=True)
class OrientedBox:
    center: tuple[float, float]
    axis: tuple[float, float]
    length: float
    width: float

    def corners(self) -> np.ndarray:
        """The four corners, shape ``(4, 2)``."""
        c = np.asarray(self.center)
        u = np.asarray(self.axis)
        n = np.array([-u[1], u[0]])
        hl, hw = 0.5 * self.length, 0.5 * self.width
        return np.array(
            [c - hl * u - hw * n, c - hl * u + hw * n, c + hl * u + hw * n, c + hl * u - hw * n]
        )

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Boolean mask of which ``(N, 2)`` points lie inside (boundary inclusive)."""
        d = np.asarray(pts, dtype=np.float64) - np.asarray(self.center)
        u = np.asarray(self.axis)
        along = d @ u
        across = d @ np.array([-u[1], u[0]])
        return (np.abs(along) <= 0.5 * self.length) & (np.abs(across) <= 0.5 * self.width)


@dataclass(frozen=True)
class Rect:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min <= self.x_max and self.y_min <= self.y_max):
            raise ValidationError(f"inverted rect {self}")

    @classmethod
    def from_xywh(cls, x, y, w, h) -> "Rect":
        return cls(float(x), float(y), float(x) + float(w), float(y) + float(h))

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains_point(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max


@dataclass(frozen=True)
class GridRect:
    """Inclusive cell ranges: rows ``row0..row1`` and columns ``col0..col1``."""

    row0: int
    row1: int
    col0: int
    col1: int

    def __post_init__(self):
        if self.row0 > self.row1 or self.col0 > self.col1:
            raise ValidationError(f"empty grid rect {self}")

    @property
    def n_cells(self) -> int:
        return (self.row1 - self.row0 + 1) * (self.col1 - self.col0 + 1)

    def slices(self) -> tuple[slice, slice]:
        return slice(self.row0, self.row1 + 1), slice(self.col0, self.col1 + 1)


def oriented_part_box(p1, p2) -> OrientedBox:
    """Rectangle along the segment ``p1 -> p2`` with length L and width 0.6 L."""
    a = np.asarray(p1, dtype=np.float64)
    b = np.asarray(p2, dtype=np.float64)
    seg = b - a
    length = float(np.hypot(seg[0], seg[1]))
    if length == 0.0:
        raise DegeneratePartError(f"part keypoints coincide at {tuple(a)}")
    axis = seg / length
    mid = 0.5 * (a + b)
    return OrientedBox(
        center=(float(mid[0]), float(mid[1])),
        axis=(float(axis[0]), float(axis[1])),
        length=length,
        width=PART_WIDTH_RATIO * length,
    )


def aabb(box: OrientedBox) -> Rect:
    # Closed form of the corner extent; matches corner enumeration exactly
    # up to rounding.
    ux, uy = box.axis
    hx = 0.5 * (box.length * abs(ux) + box.width * abs(uy))
    hy = 0.5 * (box.length * abs(uy) + box.width * abs(ux))
    cx, cy = box.center
    return Rect(cx - hx, cy - hy, cx + hx, cy + hy)


def _axis_cells(lo: float, hi: float, n: int) -> tuple[int, int]:
    """Cells along one axis whose centers fall in ``[lo, hi]`` (scaled coords)."""
    first = max(0, math.ceil(lo - 0.5))
    last = min(n - 1, math.floor(hi - 0.5))
    if first <= last:
        return first, last
    mid = 0.5 * (lo + hi)
    nearest = min(max(int(math.floor(mid)), 0), n - 1)
    return nearest, nearest


def project_to_grid(r: Rect, image_dims, grid_dims) -> GridRect:
    """Map a pixel rect onto grid cells.

    ``image_dims`` is ``(W_px, H_px)`` and ``grid_dims`` is ``(W_g, H_g)``.
    A cell is kept when its center lies inside the scaled rect; an axis with
    no qualifying center falls back to the single nearest cell.
    """
    w_px, h_px = image_dims
    w_g, h_g = grid_dims
    if min(w_px, h_px, w_g, h_g) <= 0:
        raise ProjectionError("image and grid dimensions must be positive")
    vals = (r.x_min, r.y_min, r.x_max, r.y_max)
    if not all(math.isfinite(v) for v in vals):
        raise ProjectionError(f"non-finite rect {r}")
    if r.x_max < 0 or r.y_max < 0 or r.x_min > w_px or r.y_min > h_px:
        raise ProjectionError(f"rect {r} lies entirely outside a {w_px}x{h_px} image")
    sx, sy = w_g / w_px, h_g / h_px
    x0, x1 = max(r.x_min, 0.0) * sx, min(r.x_max, w_px) * sx
    y0, y1 = max(r.y_min, 0.0) * sy, min(r.y_max, h_px) * sy
    col0, col1 = _axis_cells(x0, x1, w_g)
    row0, row1 = _axis_cells(y0, y1, h_g)
    return GridRect(row0, row1, col0, col1)


def check_grid(g: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 3:
        raise ValidationError(f"feature grid must be (C, H, W), got shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise ValidationError("feature grid has non-finite values")
    return g


def regional_average_pool(g: np.ndarray, r: GridRect) -> np.ndarray:
    """Per-channel mean over the cells of ``r``."""
    g = np.asarray(g)
    _, h, w = g.shape
    if r.row1 >= h or r.col1 >= w or r.row0 < 0 or r.col0 < 0:
        raise ProjectionError(f"{r} outside a {h}x{w} grid")
    rows, cols = r.slices()
    return g[:, rows, cols].mean(axis=(1, 2))


def global_average_pool(g: np.ndarray) -> np.ndarray:
    return np.asarray(g).mean(axis=(1, 2))


def column_pool(g: np.ndarray, w_out: int) -> np.ndarray:
    """Average over all rows and over ``W / w_out`` column bands.

    Returns an array of shape ``(w_out, C)``.
    """
    g = np.asarray(g)
    c, h, w = g.shape
    if w_out <= 0 or w % w_out:
        raise ValidationError(f"grid width {w} is not divisible by {w_out}")
    band = w // w_out
    return g.reshape(c, h, w_out, band).mean(axis=(1, 3)).T


def part_features(
    g: np.ndarray,
    skeleton: Skeleton,
    image_dims,
    part_map: PartMap = DEFAULT_PART_MAP,
) -> tuple[np.ndarray, np.ndarray]:
    """RAP vector per part from keypoint-derived AABBs.

    Returns ``(features, visible)`` with shapes ``(7, C)`` and ``(7,)``. A part
    with an invisible keypoint gets the zero vector and ``visible=False``.
    """
    g = np.asarray(g)
    c, h, w = g.shape
    feats = np.zeros((NUM_PARTS, c))
    vis = np.zeros(NUM_PARTS, dtype=bool)
    for k, (_, (i, j)) in enumerate(part_map.parts):
        if not (skeleton.is_visible(i) and skeleton.is_visible(j)):
            continue
        try:
            box = oriented_part_box(skeleton.point(i), skeleton.point(j))
        except DegeneratePartError:
            continue
        cells = project_to_grid(aabb(box), image_dims, (w, h))
        feats[k] = regional_average_pool(g, cells)
        vis[k] = True
    return feats, vis
