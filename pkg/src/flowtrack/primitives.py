"""Geometry and mask primitives shared by the whole pipeline.

Boxes live in continuous pixel coordinates (x right, y down, origin at the
top-left image corner) and rasterize half-open: pixel (c, r) occupies the
square [c, c+1) x [r, r+1) and its center is (c+0.5, r+0.5).

Binary masks are stored dense internally and serialized as column-major
run-length counts whose first run counts background pixels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

FLO_MAGIC = 202021.25


class MaskFormatError(ValueError):
    """An RLE payload does not describe a well-formed mask."""


class EmptyMaskError(ValueError):
    """The operation requires at least one foreground pixel."""


class FlowFormatError(ValueError):
    """A flow file or flow field failed validation."""


class FlowOutOfBoundsError(ValueError):
    """A flow sample point lies outside the image."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in continuous pixel coordinates, x0 <= x1, y0 <= y1."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x0 <= self.x1 and self.y0 <= self.y1):
            raise ValueError(f"invalid box corners ({self.x0}, {self.y0}, {self.x1}, {self.y1})")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def clip(self, width: float, height: float) -> "BBox":
        """Clamp all corners into [0, width] x [0, height]."""
        return BBox(
            min(max(self.x0, 0.0), float(width)),
            min(max(self.y0, 0.0), float(height)),
            min(max(self.x1, 0.0), float(width)),
            min(max(self.y1, 0.0), float(height)),
        )

    def as_list(self) -> list[float]:
        return [float(self.x0), float(self.y0), float(self.x1), float(self.y1)]

    @classmethod
    def from_list(cls, values) -> "BBox":
        x0, y0, x1, y1 = (float(v) for v in values)
        return cls(x0, y0, x1, y1)


def box_iou(a: BBox, b: BBox) -> float:
    """Area IoU of two continuous boxes; degenerate zero-area boxes give 0."""
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


class BinaryMask:
    """Per-frame instance mask.

    The dense bitmap is the source of truth; ``counts`` is its canonical
    column-major run-length encoding with the first run counting background.
    Instances are immutable after construction.
    """

    __slots__ = ("width", "height", "_dense", "_counts", "_area")

    def __init__(self, width: int, height: int, counts):
        width = int(width)
        height = int(height)
        if width < 1 or height < 1:
            raise MaskFormatError(f"mask dimensions must be positive, got {width}x{height}")
        counts = [int(c) for c in counts]
        if any(c < 0 for c in counts):
            raise MaskFormatError("negative run length")
        if sum(counts) != width * height:
            raise MaskFormatError(
                f"run lengths sum to {sum(counts)}, expected {width * height}"
            )
        flat = np.repeat(np.resize(np.array([False, True]), max(len(counts), 1)), counts)
        dense = flat.reshape((height, width), order="F")
        self.width = width
        self.height = height
        self._dense = np.ascontiguousarray(dense)
        self._dense.setflags(write=False)
        self._counts = None
        self._area = None

    @classmethod
    def from_array(cls, array) -> "BinaryMask":
        """Build a mask from a (height, width) boolean array."""
        dense = np.ascontiguousarray(np.asarray(array, dtype=bool))
        if dense.ndim != 2 or dense.shape[0] < 1 or dense.shape[1] < 1:
            raise MaskFormatError(f"expected a 2-D bitmap, got shape {np.shape(array)}")
        obj = cls.__new__(cls)
        obj.width = int(dense.shape[1])
        obj.height = int(dense.shape[0])
        obj._dense = dense
        obj._dense.setflags(write=False)
        obj._counts = None
        obj._area = None
        return obj

    def to_array(self) -> np.ndarray:
        """Read-only (height, width) boolean view of the mask."""
        return self._dense

    @property
    def counts(self) -> tuple[int, ...]:
        if self._counts is None:
            flat = self._dense.ravel(order="F")
            if flat.size == 0:
                runs = []
            else:
                change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
                edges = np.concatenate(([0], change, [flat.size]))
                runs = np.diff(edges).tolist()
                if flat[0]:
                    runs = [0] + runs
            self._counts = tuple(int(r) for r in runs)
        return self._counts

    @property
    def area(self) -> int:
        if self._area is None:
            self._area = int(self._dense.sum())
        return self._area

    @property
    def is_empty(self) -> bool:
        return self.area == 0

    def to_dict(self) -> dict:
        return {"w": self.width, "h": self.height, "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, payload: dict) -> "BinaryMask":
        try:
            return cls(payload["w"], payload["h"], payload["counts"])
        except KeyError as exc:
            raise MaskFormatError(f"missing RLE field {exc}") from exc

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self._dense, other._dense)
        )

    __hash__ = None

    def __repr__(self):
        return f"BinaryMask({self.width}x{self.height}, area={self.area})"


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """IoU of two equally sized masks; two empty masks score 0."""
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError(
            f"mask dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    da, db = a.to_array(), b.to_array()
    inter = int(np.count_nonzero(da & db))
    union = int(np.count_nonzero(da | db))
    if union == 0:
        return 0.0
    return inter / union


def tight_box(mask: BinaryMask) -> BBox:
    """Smallest box containing every foreground pixel of ``mask``."""
    dense = mask.to_array()
    rows = np.flatnonzero(dense.any(axis=1))
    if rows.size == 0:
        raise EmptyMaskError("cannot take the tight box of an empty mask")
    cols = np.flatnonzero(dense.any(axis=0))
    return BBox(float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))


def rasterize_box(box: BBox, width: int, height: int) -> np.ndarray:
    """Boolean bitmap of the pixels whose centers fall inside ``box``."""
    out = np.zeros((height, width), dtype=bool)
    c0 = max(int(np.ceil(box.x0 - 0.5)), 0)
    c1 = min(int(np.ceil(box.x1 - 0.5)), width)
    r0 = max(int(np.ceil(box.y0 - 0.5)), 0)
    r1 = min(int(np.ceil(box.y1 - 0.5)), height)
    if c0 < c1 and r0 < r1:
        out[r0:r1, c0:c1] = True
    return out


@dataclass(frozen=True)
class FlowField:
    """Dense per-pixel displacement map between two consecutive frames."""

    width: int
    height: int
    vectors: np.ndarray  # (height, width, 2) float32, (dx, dy)

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=np.float32)
        if vec.shape != (self.height, self.width, 2):
            raise FlowFormatError(
                f"flow shape {vec.shape} does not match {self.height}x{self.width}x2"
            )
        if not np.isfinite(vec).all():
            raise FlowFormatError("flow contains NaN or Inf values")
        vec = np.ascontiguousarray(vec)
        vec.setflags(write=False)
        object.__setattr__(self, "vectors", vec)


def _bilinear(vectors: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear samples of a (H, W, 2) field at image points already inside it.

    Sample coordinates are clamped into the grid spanned by pixel centers, so
    border queries reuse the edge vectors instead of fading to zero.
    """
    h, w = vectors.shape[:2]
    gx = np.clip(np.asarray(xs, dtype=np.float64) - 0.5, 0.0, w - 1.0)
    gy = np.clip(np.asarray(ys, dtype=np.float64) - 0.5, 0.0, h - 1.0)
    x0 = np.floor(gx).astype(np.intp)
    y0 = np.floor(gy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = gx - x0
    fy = gy - y0
    v = vectors.astype(np.float64, copy=False)
    top = v[y0, x0] * (1.0 - fx)[..., None] + v[y0, x1] * fx[..., None]
    bot = v[y1, x0] * (1.0 - fx)[..., None] + v[y1, x1] * fx[..., None]
    return top * (1.0 - fy)[..., None] + bot * fy[..., None]


def sample_flow(field: FlowField, x: float, y: float) -> tuple[float, float]:
    """Bilinearly interpolated flow at a continuous image point.

    Raises FlowOutOfBoundsError when (x, y) lies outside [0, W) x [0, H);
    callers treat that as a flow-inconsistent sample.
    """
    if not (0.0 <= x < field.width and 0.0 <= y < field.height):
        raise FlowOutOfBoundsError(f"sample point ({x}, {y}) left the image")
    vec = _bilinear(field.vectors, np.array([x]), np.array([y]))[0]
    return (float(vec[0]), float(vec[1]))


def read_flo(path) -> FlowField:
    """Load a flow field from a Middlebury-layout .flo file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12:
        raise FlowFormatError(f"{path}: truncated flow file")
    magic = struct.unpack("<f", raw[:4])[0]
    if magic != np.float32(FLO_MAGIC):
        raise FlowFormatError(f"{path}: bad magic {magic!r}")
    width, height = struct.unpack("<ii", raw[4:12])
    if width < 1 or height < 1:
        raise FlowFormatError(f"{path}: bad dimensions {width}x{height}")
    expected = 12 + width * height * 2 * 4
    if len(raw) != expected:
        raise FlowFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(height, width, 2)
    return FlowField(width, height, data)


def write_flo(path, field: FlowField) -> None:
    """Write a flow field in the Middlebury .flo layout."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<f", FLO_MAGIC))
        fh.write(struct.pack("<ii", field.width, field.height))
        fh.write(np.ascontiguousarray(field.vectors, dtype="<f4").tobytes())


@dataclass
class Detection:
    """One detector output: box, mask, confidence, open-vocabulary label."""

    box: BBox
    mask: BinaryMask
    objectness: float
    label: str
    feature: np.ndarray | None = None

    def __post_init__(self):
        if not (0.0 <= self.objectness <= 1.0):
            raise ValueError(f"objectness {self.objectness} outside [0, 1]")
        if self.mask.is_empty:
            raise ValueError("detection mask is empty")
        if self.feature is not None:
            self.feature = np.asarray(self.feature, dtype=np.float64)

    def to_dict(self) -> dict:
        payload = {
            "box": self.box.as_list(),
            "objectness": float(self.objectness),
            "label": self.label,
            "mask": self.mask.to_dict(),
            "feature": None if self.feature is None else [float(v) for v in self.feature],
        }
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "Detection":
        feature = payload.get("feature")
        return cls(
            box=BBox.from_list(payload["box"]),
            mask=BinaryMask.from_dict(payload["mask"]),
            objectness=float(payload["objectness"]),
            label=str(payload["label"]),
            feature=None if feature is None else np.asarray(feature, dtype=np.float64),
        )


@dataclass
class FrameMasks:
    """All instance masks of one frame, keyed by track id."""

    frame: int
    entries: dict[int, BinaryMask]

    def __post_init__(self):
        dims = {(m.width, m.height) for m in self.entries.values()}
        if len(dims) > 1:
            raise ValueError(f"masks of frame {self.frame} disagree on dimensions: {dims}")
