"""Dataset model, manifest ingestion, protocol splits and synthetic data."""

from __future__ import annotations

import json
import math
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import SchemaError, SplitError, ValidationError
from .geometry import (
    DEFAULT_PART_MAP,
    MIDPOINT_TOLERANCE_PX,
    NUM_KEYPOINTS,
    PartMap,
    Rect,
    Skeleton,
    oriented_part_box,
)

UNKNOWN = "UNKNOWN"
SIDES = ("left", "right", "frontal", "back")
REID_SIDES = ("left", "right")
SOURCES = ("ground_truth", "detector")

SINGLE_CAM = "single_cam"
CROSS_CAM = "cross_cam"

TRAIN_FRACTION = {SINGLE_CAM: Fraction(3, 5), CROSS_CAM: Fraction(2, 5)}

DEFAULT_IMAGE_DIMS = (256, 128)


@dataclass(frozen=True)
class Sample:
    sample_id: str
    camera_id: str
    timestamp_ms: int
    entity_id: str
    tiger_id: str
    side: str
    bbox: Rect
    keypoints: Skeleton | None = None
    source: str = "ground_truth"
    image_id: str | None = None

    @property
    def image(self) -> str:
        """Image key used to join detections; defaults to the sample id."""
        return self.image_id if self.image_id is not None else self.sample_id

    @property
    def known(self) -> bool:
        return self.entity_id != UNKNOWN

    @property
    def reid_eligible(self) -> bool:
        return self.known and self.side in REID_SIDES


@dataclass(frozen=True)
class Dataset:
    samples: tuple[Sample, ...]
    entity_index: dict[str, tuple[str, ...]] = field(init=False, repr=False, compare=False)
    camera_index: dict[str, tuple[str, ...]] = field(init=False, repr=False, compare=False)
    _by_id: dict[str, Sample] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        samples = tuple(self.samples)
        object.__setattr__(self, "samples", samples)
        ents, cams = defaultdict(list), defaultdict(list)
        by_id = {}
        for s in samples:
            by_id.setdefault(s.sample_id, s)
            ents[s.entity_id].append(s.sample_id)
            cams[s.camera_id].append(s.sample_id)
        object.__setattr__(self, "entity_index", {k: tuple(v) for k, v in ents.items()})
        object.__setattr__(self, "camera_index", {k: tuple(v) for k, v in cams.items()})
        object.__setattr__(self, "_by_id", by_id)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, sample_id: str) -> Sample:
        return self._by_id[sample_id]

    def __contains__(self, sample_id) -> bool:
        return sample_id in self._by_id

    @property
    def ids(self) -> list[str]:
        return [s.sample_id for s in self.samples]

    def entity_cameras(self, entity_id: str) -> set[str]:
        return {self._by_id[i].camera_id for i in self.entity_index.get(entity_id, ())}

    def entity_category(self, entity_id: str) -> str:
        return SINGLE_CAM if len(self.entity_cameras(entity_id)) == 1 else CROSS_CAM

    def reid_entities(self) -> list[str]:
        return sorted({s.entity_id for s in self.samples if s.reid_eligible})

    def reid_subset(self) -> "Dataset":
        return Dataset(tuple(s for s in self.samples if s.reid_eligible))

    def subset(self, keep) -> "Dataset":
        keep = set(keep)
        return Dataset(tuple(s for s in self.samples if s.sample_id in keep))


@dataclass
class ValidationReport:
    violations: list[tuple[str, str]]
    categories: dict[str, str]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def summary(self) -> dict:
        counts = {SINGLE_CAM: 0, CROSS_CAM: 0}
        for cat in self.categories.values():
            counts[cat] += 1
        return {"violations": len(self.violations), "entities": counts}


def validate_dataset(ds: Dataset) -> ValidationReport:
    """Collect every invariant violation, keyed by sample id."""
    out: list[tuple[str, str]] = []
    seen = set()
    for s in ds.samples:
        sid = s.sample_id
        if sid in seen:
            out.append((sid, "duplicate sample_id"))
        seen.add(sid)
        if not isinstance(s.timestamp_ms, (int, np.integer)) or s.timestamp_ms < 0:
            out.append((sid, f"timestamp_ms must be a non-negative integer, got {s.timestamp_ms!r}"))
        if not (s.bbox.width > 0 and s.bbox.height > 0):
            out.append((sid, "bbox must have positive width and height"))
        if s.side not in SIDES:
            out.append((sid, f"unknown side {s.side!r}"))
        if s.source not in SOURCES:
            out.append((sid, f"unknown source {s.source!r}"))
        if s.keypoints is not None:
            dev = s.keypoints.center_violation()
            if dev is not None and dev > MIDPOINT_TOLERANCE_PX:
                out.append((sid, f"keypoint 15 is {dev:.2f} px off the nose/tail-root midpoint"))
    cats = {e: ds.entity_category(e) for e in sorted(ds.entity_index) if e != UNKNOWN}
    return ValidationReport(out, cats)


# -- manifest JSON -----------------------------------------------------------

_REQUIRED = ("id", "camera", "t_ms", "entity", "tiger", "side", "bbox", "source")


def _parse_sample(obj, idx: int) -> Sample:
    where = f"samples[{idx}]"
    if not isinstance(obj, dict):
        raise SchemaError("sample must be an object", field=where)
    for key in _REQUIRED:
        if key not in obj:
            raise SchemaError("missing key", field=f"{where}.{key}")
    bbox = obj["bbox"]
    if not (isinstance(bbox, list) and len(bbox) == 4 and all(_is_num(v) for v in bbox)):
        raise SchemaError("bbox must be [x, y, w, h]", field=f"{where}.bbox")
    x, y, w, h = (float(v) for v in bbox)
    if w <= 0 or h <= 0:
        raise ValidationError(f"{obj['id']}: bbox must have positive width and height")
    t_ms = obj["t_ms"]
    if isinstance(t_ms, bool) or not isinstance(t_ms, int):
        raise SchemaError("t_ms must be an integer", field=f"{where}.t_ms")
    rect = Rect.from_xywh(x, y, w, h)
    skel = None
    kps = obj.get("keypoints")
    if kps is not None:
        if not isinstance(kps, list) or not all(
            isinstance(k, list) and len(k) == 3 and all(_is_num(v) for v in k) for k in kps
        ):
            raise SchemaError("keypoints must be a list of [x, y, v]", field=f"{where}.keypoints")
        if len(kps) != NUM_KEYPOINTS:
            raise ValidationError(
                f"{obj['id']}: expected {NUM_KEYPOINTS} keypoints, got {len(kps)}"
            )
        skel = Skeleton(np.array(kps, dtype=np.float64), math.sqrt(rect.area))
    for key in ("id", "camera", "entity", "tiger", "side", "source"):
        if not isinstance(obj[key], str):
            raise SchemaError("must be a string", field=f"{where}.{key}")
    image = obj.get("image")
    return Sample(
        sample_id=obj["id"],
        camera_id=obj["camera"],
        timestamp_ms=t_ms,
        entity_id=obj["entity"],
        tiger_id=obj["tiger"],
        side=obj["side"],
        bbox=rect,
        keypoints=skel,
        source=obj["source"],
        image_id=image,
    )


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def parse_manifest(text: str) -> Dataset:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("samples"), list):
        raise SchemaError("top level must be an object with a 'samples' list", field="samples")
    samples = tuple(_parse_sample(o, i) for i, o in enumerate(doc["samples"]))
    ds = Dataset(samples)
    report = validate_dataset(ds)
    if not report.ok:
        sid, msg = report.violations[0]
        raise ValidationError(f"{sid}: {msg}")
    return ds


def load_manifest(path) -> Dataset:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def sample_to_json(s: Sample) -> dict:
    b = s.bbox
    obj = {
        "id": s.sample_id,
        "camera": s.camera_id,
        "t_ms": int(s.timestamp_ms),
        "entity": s.entity_id,
        "tiger": s.tiger_id,
        "side": s.side,
        "bbox": [b.x_min, b.y_min, b.width, b.height],
        "keypoints": None if s.keypoints is None else s.keypoints.points.tolist(),
        "source": s.source,
    }
    if s.image_id is not None:
        obj["image"] = s.image_id
    return obj


def dump_manifest(ds: Dataset) -> str:
    return json.dumps({"samples": [sample_to_json(s) for s in ds.samples]}, indent=1) + "\n"


def save_manifest(ds: Dataset, path) -> None:
    Path(path).write_text(dump_manifest(ds), encoding="utf-8")


# -- splits ------------------------------------------------------------------


def _round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def split_entities(ds: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    """Entity-disjoint train/test split.

    Train receives 60% of single-camera and 40% of cross-camera entities
    (round half up); everything else that is re-ID eligible goes to test.
    """
    eligible = ds.reid_subset()
    by_cat: dict[str, list[str]] = {SINGLE_CAM: [], CROSS_CAM: []}
    for e in eligible.reid_entities():
        by_cat[eligible.entity_category(e)].append(e)
    for cat, ents in by_cat.items():
        if not ents:
            raise SplitError(f"no {cat} entities to split")
    rng = np.random.default_rng(seed)
    train_entities = set()
    for cat in (SINGLE_CAM, CROSS_CAM):
        ents = by_cat[cat]
        n_train = _round_half_up(TRAIN_FRACTION[cat] * len(ents))
        order = rng.permutation(len(ents))
        train_entities.update(ents[i] for i in order[:n_train])
    train = tuple(s for s in eligible.samples if s.entity_id in train_entities)
    test = tuple(s for s in eligible.samples if s.entity_id not in train_entities)
    return Dataset(train), Dataset(test)


# -- feature grid files ------------------------------------------------------

FGRD_MAGIC = b"FGRD"


def encode_grid(grid: np.ndarray) -> bytes:
    grid = np.asarray(grid)
    if grid.ndim != 3:
        raise ValidationError(f"feature grid must be (C, H, W), got shape {grid.shape}")
    header = FGRD_MAGIC + struct.pack("<3I", *grid.shape)
    return header + np.ascontiguousarray(grid, dtype="<f4").tobytes()


def decode_grid(data: bytes) -> np.ndarray:
    if len(data) < 16 or data[:4] != FGRD_MAGIC:
        raise SchemaError("not an FGRD file (bad magic)")
    c, h, w = struct.unpack("<3I", data[4:16])
    body = data[16:]
    if len(body) != 4 * c * h * w:
        raise SchemaError(f"FGRD payload has {len(body)} bytes, expected {4 * c * h * w}")
    return np.frombuffer(body, dtype="<f4").reshape(c, h, w).astype(np.float64)


def write_grid(path, grid: np.ndarray) -> None:
    Path(path).write_bytes(encode_grid(grid))


def read_grid(path) -> np.ndarray:
    return decode_grid(Path(path).read_bytes())


# -- synthetic data ----------------------------------------------------------

# Side view of a tiger facing +x in a 256x128 frame, keypoints 1..14.
# Keypoint 15 is always derived as the nose/tail-root midpoint.
_TEMPLATE = np.array(
    [
        [178.4, 44.2],
        [186.8, 42.8],
        [200.8, 54.7],
        [165.8, 62.4],
        [170.0, 104.4],
        [156.0, 61.0],
        [150.4, 103.0],
        [97.2, 62.4],
        [87.4, 83.4],
        [91.6, 104.4],
        [105.6, 61.0],
        [111.2, 82.0],
        [108.4, 103.0],
        [74.8, 55.4],
    ]
)


@dataclass(frozen=True)
class SynthConfig:
    n_entities: int = 20
    samples_per_entity: int = 10
    n_cameras: int = 3
    grid_dims: tuple[int, int, int] = (16, 16, 32)
    deform_amplitude: float = 0.4
    noise_sigma: float = 0.5
    seed: int = 0
    image_dims: tuple[int, int] = DEFAULT_IMAGE_DIMS

    def __post_init__(self):
        if self.n_entities < 2:
            raise ValidationError("n_entities must be >= 2")
        if self.samples_per_entity < 2:
            raise ValidationError("samples_per_entity must be >= 2")
        if self.n_cameras < 1:
            raise ValidationError("n_cameras must be >= 1")
        if len(self.grid_dims) != 3 or min(self.grid_dims) < 1:
            raise ValidationError(f"bad grid_dims {self.grid_dims}")
        for name in ("deform_amplitude", "noise_sigma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValidationError(f"{name} must be finite and non-negative, got {v}")
        if self.deform_amplitude > 1:
            raise ValidationError("deform_amplitude must lie in [0, 1]")


def _cell_centers(grid_hw, image_dims) -> np.ndarray:
    h, w = grid_hw
    w_px, h_px = image_dims
    ys = (np.arange(h) + 0.5) * (h_px / h)
    xs = (np.arange(w) + 0.5) * (w_px / w)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def _smooth_displacement(rng, pts: np.ndarray, image_dims, max_disp: float) -> np.ndarray:
    """Random low-frequency warp of ``pts`` with peak displacement ``max_disp``."""
    if max_disp == 0:
        return np.zeros_like(pts)
    w_px, h_px = image_dims
    scaled = pts / np.array([w_px, h_px])
    disp = np.zeros_like(pts)
    for _ in range(3):
        freq = rng.uniform(0.5, 2.0, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.standard_normal(2)
        disp += np.sin(2 * np.pi * (scaled @ freq) + phase)[:, None] * amp
    peak = np.max(np.hypot(disp[:, 0], disp[:, 1]))
    return disp * (max_disp / peak) if peak > 0 else disp


def _render(codes, kps_xy, centers, grid_dims, part_map: PartMap) -> np.ndarray:
    c, h, w = grid_dims
    flat = np.zeros((c, h * w))
    for k, (_, (i, j)) in enumerate(part_map.parts):
        p, q = kps_xy[i - 1], kps_xy[j - 1]
        if np.allclose(p, q):
            continue
        inside = oriented_part_box(p, q).contains(centers)
        flat[:, inside] = codes[k][:, None]
    return flat.reshape(c, h, w)


def _entity_layout(e: int):
    tiger = f"T{e // 2:03d}"
    side = REID_SIDES[e % 2]
    cross = (e // 2) % 2 == 1
    return tiger, side, cross


def synth_generate(cfg: SynthConfig, part_map: PartMap = DEFAULT_PART_MAP):
    """Deformable-stripe surrogate dataset.

    Every entity owns one latent code vector per part. A sample paints those
    codes into the oriented part boxes of a randomly warped skeleton, then
    adds Gaussian noise. Returns ``(dataset, {sample_id: grid})``.
    """
    rng = np.random.default_rng(cfg.seed)
    c, h, w = cfg.grid_dims
    w_px, h_px = cfg.image_dims
    centers = _cell_centers((h, w), cfg.image_dims)
    template = _TEMPLATE * np.array([w_px / 256.0, h_px / 128.0])
    max_disp = cfg.deform_amplitude * h_px
    cameras = [f"cam{k:02d}" for k in range(cfg.n_cameras)]

    samples, grids = [], {}
    for e in range(cfg.n_entities):
        tiger, side, cross = _entity_layout(e)
        cross = cross and cfg.n_cameras > 1
        entity = f"{tiger}_{side}"
        codes = rng.standard_normal((len(part_map.parts), c))
        base = template.copy()
        if side == "right":
            base[:, 0] = w_px - base[:, 0]
        t = int(rng.integers(0, 10_000)) + e * 10_000_000
        for k in range(cfg.samples_per_entity):
            cam = cameras[(e + k) % cfg.n_cameras] if cross else cameras[e % cfg.n_cameras]
            t += int(rng.integers(1_500, 30_000))
            kp = base + _smooth_displacement(rng, base, cfg.image_dims, max_disp)
            kp = np.vstack([kp, 0.5 * (kp[2] + kp[13])])
            grid = _render(codes, kp, centers, cfg.grid_dims, part_map)
            if cfg.noise_sigma > 0:
                grid = grid + cfg.noise_sigma * rng.standard_normal(grid.shape)
            # Round through float32 so in-memory grids equal their FGRD files.
            grid = grid.astype(np.float32).astype(np.float64)

            inside = (kp[:, 0] >= 0) & (kp[:, 0] < w_px) & (kp[:, 1] >= 0) & (kp[:, 1] < h_px)
            x0, y0 = np.clip(kp[:, :2].min(axis=0) - 8, 0, None)
            x1 = min(kp[:, 0].max() + 8, w_px)
            y1 = min(kp[:, 1].max() + 8, h_px)
            bbox = Rect(float(x0), float(y0), float(max(x1, x0 + 1)), float(max(y1, y0 + 1)))
            pts = np.column_stack([kp, inside.astype(np.float64)])
            sid = f"{entity}_{k:03d}"
            samples.append(
                Sample(
                    sample_id=sid,
                    camera_id=cam,
                    timestamp_ms=t,
                    entity_id=entity,
                    tiger_id=tiger,
                    side=side,
                    bbox=bbox,
                    keypoints=Skeleton(pts, math.sqrt(bbox.area)),
                )
            )
            grids[sid] = grid
    return Dataset(tuple(samples)), grids
