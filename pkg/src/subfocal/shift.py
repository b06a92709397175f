"""Sub-pixel translation of views toward the center view.

A view at angular offset ``(du, dv)`` is resampled at ``(x + du*d, y + dv*d)``
so that, at the true disparity ``d``, it lines up with the center view.
Pixel centers sit at integer coordinates and the shift is applied to the
source coordinate (gather).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import List, Tuple

import numpy as np

from .lf_io import LightField

# Shifts closer than this to an integer are treated as integers so that
# products like 3 * 0.1 do not leave a spurious sub-pixel residue.
INTEGER_SNAP = 1e-9


class InvalidInput(ValueError):
    pass


class Interpolation(str, Enum):
    NEAREST = "nearest"
    BILINEAR = "bilinear"
    PHASE = "phase"


class Boundary(str, Enum):
    EDGE_CLAMP = "edge"
    ZERO_PAD = "zero"


@dataclass(frozen=True)
class ShiftSpec:
    disparity: float
    angular_offset: Tuple[int, int]
    interpolation: Interpolation = Interpolation.BILINEAR
    boundary: Boundary = Boundary.EDGE_CLAMP

    @property
    def delta(self) -> Tuple[float, float]:
        return (
            _snap(self.angular_offset[0] * self.disparity),
            _snap(self.angular_offset[1] * self.disparity),
        )


@dataclass(frozen=True)
class ShiftedView:
    pixels: np.ndarray
    validity: np.ndarray


def _snap(value: float) -> float:
    r = round(value)
    if abs(value - r) < INTEGER_SNAP:
        return float(r)
    return float(value)


def _axis_validity(n: int, delta: float) -> np.ndarray:
    src = np.arange(n) + delta
    return (src >= 0) & (src <= n - 1)


def _gather(arr: np.ndarray, idx: np.ndarray, axis: int, boundary: Boundary) -> np.ndarray:
    n = arr.shape[axis]
    inside = (idx >= 0) & (idx <= n - 1)
    out = np.take(arr, np.clip(idx, 0, n - 1), axis=axis)
    if boundary is Boundary.ZERO_PAD and not inside.all():
        shape = [1] * arr.ndim
        shape[axis] = n
        out = out * inside.reshape(shape)
    return out


def _nearest_axis(arr, delta, axis, boundary):
    n = arr.shape[axis]
    idx = np.floor(np.arange(n) + delta + 0.5).astype(np.int64)
    return _gather(arr, idx, axis, boundary)


def _linear_axis(arr, delta, axis, boundary):
    n = arr.shape[axis]
    base = np.floor(delta)
    t = delta - base
    idx = np.arange(n) + int(base)
    lo = _gather(arr, idx, axis, boundary)
    if t == 0.0:
        return lo
    hi = _gather(arr, idx + 1, axis, boundary)
    return (1.0 - t) * lo + t * hi


def _phase_shift(view: np.ndarray, dx: float, dy: float) -> np.ndarray:
    h, w = view.shape
    fx = np.fft.fftfreq(h)[:, None]
    fy = np.fft.fftfreq(w)[None, :]
    # g(x) = f(x + delta)  <=>  G(k) = F(k) * exp(+2*pi*i*k*delta)
    ramp = np.exp(2j * np.pi * (dx * fx + dy * fy))
    return np.real(np.fft.ifft2(np.fft.fft2(view) * ramp))


def shift_view(view: np.ndarray, spec: ShiftSpec) -> ShiftedView:
    """Resample ``view`` at ``(x + du*d, y + dv*d)``.

    Samples whose source location falls outside ``[0, H-1] x [0, W-1]`` are
    flagged invalid. For bilinear this is exactly the condition that the
    whole 2x2 footprint is in bounds; the phase backend wraps periodically,
    so the same flag marks wrapped samples.
    """
    view = np.asarray(view, dtype=np.float64)
    if view.ndim != 2:
        raise InvalidInput(f"expected a 2D view, got shape {view.shape}")
    if not np.all(np.isfinite(view)):
        raise InvalidInput("view contains non-finite samples")
    h, w = view.shape
    dx, dy = spec.delta
    if abs(dx) >= h or abs(dy) >= w:
        raise InvalidInput(f"shift {(dx, dy)} exceeds image size {(h, w)}")

    validity = _axis_validity(h, dx)[:, None] & _axis_validity(w, dy)[None, :]
    if dx == 0.0 and dy == 0.0:
        return ShiftedView(view.copy(), validity)

    interp = Interpolation(spec.interpolation)
    boundary = Boundary(spec.boundary)
    if interp is Interpolation.PHASE:
        out = _phase_shift(view, dx, dy)
    else:
        axis_fn = _nearest_axis if interp is Interpolation.NEAREST else _linear_axis
        out = view
        if dx != 0.0:
            out = axis_fn(out, dx, 0, boundary)
        if dy != 0.0:
            out = axis_fn(out, dy, 1, boundary)
    return ShiftedView(out, validity)


def shift_stack(
    lf: LightField,
    d_k: float,
    interpolation: Interpolation = Interpolation.BILINEAR,
    boundary: Boundary = Boundary.EDGE_CLAMP,
) -> List[ShiftedView]:
    """Shift every view of ``lf`` by its angular offset times ``d_k``.

    Views are returned in row-major angular order.
    """
    out = []
    for (u, v), offset in lf.offsets():
        spec = ShiftSpec(d_k, offset, interpolation, boundary)
        out.append(shift_view(lf.views[u, v], spec))
    return out
