"""Flow-based box motion model.

A track's box is carried between consecutive frames by a per-axis linear map
x' = ax*x + bx, y' = ay*y + by fitted by least squares to the forward-flow
displacements of the mask pixels that survive a forward-backward consistency
check. The consistency criterion is lenient: a pixel counts as consistent when
following the forward flow and then the backward flow lands back inside the
original instance mask, not within some distance of its start point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from flowtrack.primitives import BBox, BinaryMask, EmptyMaskError, FlowField, _bilinear


class NoMotionSupportError(ValueError):
    """No consistent pixels were available to fit a motion transform."""


class BoxLeftFrameError(ValueError):
    """A warped box has no area left inside the image."""


@dataclass(frozen=True)
class MotionTransform:
    """Per-axis linear box motion: x' = ax*x + bx, y' = ay*y + by.

    ax and ay are the width/height scale factors; the translation of the box
    center is recovered as (ax-1)*cx + bx on x and likewise on y. Scales are
    positive, so warping never flips a box.
    """

    ax: float
    bx: float
    ay: float
    by: float

    def __post_init__(self):
        if not (self.ax > 0.0 and self.ay > 0.0):
            raise ValueError(f"non-positive scale in {self}")

    @classmethod
    def identity(cls) -> "MotionTransform":
        return cls(1.0, 0.0, 1.0, 0.0)

    @classmethod
    def translation(cls, dx: float, dy: float) -> "MotionTransform":
        return cls(1.0, float(dx), 1.0, float(dy))

    def apply(self, x: float, y: float) -> tuple[float, float]:
        return (self.ax * x + self.bx, self.ay * y + self.by)


@dataclass
class ConsistencyResult:
    """Forward-backward consistency of one mask under a flow pair."""

    consistent: np.ndarray  # (H, W) bool, true only at consistent foreground pixels
    foreground: int
    ratio: float


def fb_consistency(mask: BinaryMask, fwd: FlowField, bwd: FlowField) -> ConsistencyResult:
    """Check which foreground pixels of ``mask`` track forward and back into it.

    For each foreground pixel p: q = center(p) + fwd[p]. Pixels whose q leaves
    the image are inconsistent. Otherwise r = q + bwd(q) with bwd sampled
    bilinearly; p is consistent when r lies inside the image and the pixel
    under r belongs to the mask foreground.
    """
    if (mask.width, mask.height) != (fwd.width, fwd.height) or (
        fwd.width,
        fwd.height,
    ) != (bwd.width, bwd.height):
        raise ValueError("mask and flow dimensions disagree")
    dense = mask.to_array()
    rows, cols = np.nonzero(dense)
    n = rows.size
    if n == 0:
        raise EmptyMaskError("consistency check needs a nonempty mask")
    w, h = mask.width, mask.height

    fvec = fwd.vectors[rows, cols].astype(np.float64)
    qx = cols + 0.5 + fvec[:, 0]
    qy = rows + 0.5 + fvec[:, 1]
    inside_q = (qx >= 0.0) & (qx < w) & (qy >= 0.0) & (qy < h)
    flags = np.zeros(n, dtype=bool)
    sel = np.flatnonzero(inside_q)
    if sel.size:
        back = _bilinear(bwd.vectors, qx[sel], qy[sel])
        rx = qx[sel] + back[:, 0]
        ry = qy[sel] + back[:, 1]
        inside_r = (rx >= 0.0) & (rx < w) & (ry >= 0.0) & (ry < h)
        sel2 = sel[inside_r]
        px = np.floor(rx[inside_r]).astype(np.intp)
        py = np.floor(ry[inside_r]).astype(np.intp)
        flags[sel2[dense[py, px]]] = True

    grid = np.zeros((h, w), dtype=bool)
    grid[rows[flags], cols[flags]] = True
    return ConsistencyResult(consistent=grid, foreground=int(n), ratio=float(flags.sum() / n))


def _fit_axis(coords: np.ndarray, disp: np.ndarray) -> tuple[float, float]:
    target = coords + disp
    c0 = coords.mean()
    centered = coords - c0
    denom = float((centered * centered).sum())
    if denom == 0.0:
        return 1.0, float(disp.mean())
    a = float((centered * target).sum()) / denom
    if a <= 0.0:
        # Orientation-preserving fallback: keep size, translate by mean flow.
        return 1.0, float(disp.mean())
    b = float(target.mean()) - a * float(c0)
    return a, b


def fit_transform(points: np.ndarray, displacements: np.ndarray) -> MotionTransform:
    """Least-squares per-axis linear motion from pixel centers and their flow.

    ``points`` is (N, 2) of (x, y) pixel centers, ``displacements`` the
    matching (N, 2) forward-flow vectors. Each axis is an independent simple
    linear regression of x + dx on x. An axis whose coordinates are all equal
    falls back to scale 1 with the mean displacement as offset.
    """
    pts = np.asarray(points, dtype=np.float64)
    dsp = np.asarray(displacements, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape != dsp.shape:
        raise ValueError(f"expected matching (N, 2) arrays, got {pts.shape} and {dsp.shape}")
    if pts.shape[0] == 0:
        raise NoMotionSupportError("no consistent pixels to fit a transform")
    ax, bx = _fit_axis(pts[:, 0], dsp[:, 0])
    ay, by = _fit_axis(pts[:, 1], dsp[:, 1])
    return MotionTransform(ax, bx, ay, by)


def warp_box(box: BBox, transform: MotionTransform, width: int, height: int) -> BBox:
    """Apply a motion transform to a box and clip it to the image.

    Raises BoxLeftFrameError when the clipped result has zero area, which the
    engine treats as the object leaving the frame.
    """
    x0, _ = transform.apply(box.x0, 0.0)
    x1, _ = transform.apply(box.x1, 0.0)
    _, y0 = transform.apply(0.0, box.y0)
    _, y1 = transform.apply(0.0, box.y1)
    warped = BBox(x0, y0, x1, y1).clip(width, height)
    if warped.x0 >= warped.x1 or warped.y0 >= warped.y1:
        raise BoxLeftFrameError(f"box {box} warped out of the {width}x{height} frame")
    return warped


def consistent_support(mask: BinaryMask, result: ConsistencyResult, fwd: FlowField):
    """Pixel centers and forward-flow vectors of the consistent pixels."""
    rows, cols = np.nonzero(result.consistent)
    points = np.stack([cols + 0.5, rows + 0.5], axis=1).astype(np.float64)
    disp = fwd.vectors[rows, cols].astype(np.float64)
    return points, disp
