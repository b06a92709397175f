"""Cost-volume construction over a candidate disparity grid, plus aggregation.

Two aggregators are provided: a box filter over each disparity slice and a
small learnable one (one 3D convolution layer with a rectifier, projected
back to a single channel) with hand-written gradients.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy.ndimage import uniform_filter

from .lf_io import LightField
from .shift import Boundary, Interpolation, shift_stack

THREADS_ENV = "SUBFOCAL_THREADS"


class InvalidGrid(ValueError):
    pass


class CostKind(str, Enum):
    VARIANCE = "variance"
    MEAN_ABS_DIFF = "mad"


@dataclass(frozen=True)
class DisparityGrid:
    d_min: float = -4.0
    d_max: float = 4.0
    interval: float = 0.5

    def __post_init__(self):
        if not (math.isfinite(self.d_min) and math.isfinite(self.d_max)):
            raise InvalidGrid("grid bounds must be finite")
        if not self.d_min < self.d_max:
            raise InvalidGrid(f"empty grid: d_min={self.d_min} >= d_max={self.d_max}")
        if not self.interval > 0:
            raise InvalidGrid(f"interval must be positive, got {self.interval}")
        steps = (self.d_max - self.d_min) / self.interval
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise InvalidGrid(
                f"range [{self.d_min}, {self.d_max}] is not a multiple of {self.interval}"
            )

    @property
    def size(self) -> int:
        return int(round((self.d_max - self.d_min) / self.interval)) + 1

    @property
    def samples(self) -> np.ndarray:
        return self.d_min + np.arange(self.size) * self.interval

    def __len__(self):
        return self.size

    @classmethod
    def parse(cls, range_text: str, interval: float) -> "DisparityGrid":
        """Build a grid from ``"MIN:MAX"`` and an interval."""
        try:
            lo, hi = (float(t) for t in range_text.split(":"))
        except ValueError as exc:
            raise InvalidGrid(f"bad range {range_text!r}; expected MIN:MAX") from exc
        return cls(lo, hi, float(interval))


@dataclass
class CostVolume:
    """Matching costs ``[D, H, W]``; lower is a better match."""

    costs: np.ndarray
    grid: DisparityGrid
    coverage: Optional[np.ndarray] = None

    def __post_init__(self):
        self.costs = np.asarray(self.costs, dtype=np.float64)
        if self.costs.ndim != 3 or self.costs.shape[0] != self.grid.size:
            raise ValueError(
                f"costs shape {self.costs.shape} does not match grid of size {self.grid.size}"
            )

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.costs.shape

    def replace(self, costs: np.ndarray) -> "CostVolume":
        return CostVolume(costs, self.grid, self.coverage)


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _cost_slice(lf, d_k, interpolation, boundary, cost):
    shifted = shift_stack(lf, d_k, interpolation, boundary)
    pix = np.stack([s.pixels for s in shifted])
    valid = np.stack([s.validity for s in shifted])
    count = valid.sum(axis=0)
    safe = np.maximum(count, 1)
    center = lf.center_view
    if cost is CostKind.VARIANCE:
        # shifted two-pass form: identical samples give exactly zero
        dev = pix - center
        mean = np.where(valid, dev, 0.0).sum(axis=0) / safe
        sq = np.where(valid, (dev - mean) ** 2, 0.0).sum(axis=0)
        out = sq / safe
    else:
        out = np.where(valid, np.abs(pix - center), 0.0).sum(axis=0) / safe
    good = count >= 2
    sentinel = out[good].max() if good.any() else 0.0
    out = np.where(good, out, sentinel)
    return out, count


def build_cost_volume(
    lf: LightField,
    grid: DisparityGrid,
    interpolation: Interpolation = Interpolation.BILINEAR,
    cost: CostKind = CostKind.VARIANCE,
    boundary: Boundary = Boundary.EDGE_CLAMP,
) -> CostVolume:
    """Photometric cost volume over ``grid``.

    Each slice is reduced across the views that are valid at a pixel;
    pixels seen by fewer than two views get the worst cost in their slice.
    Slices are independent and may be computed on ``SUBFOCAL_THREADS``
    worker threads; assembly order is fixed.
    """
    if grid is None or grid.size == 0:
        raise InvalidGrid("empty grid")
    interpolation = Interpolation(interpolation)
    cost = CostKind(cost)
    boundary = Boundary(boundary)

    def work(d_k):
        return _cost_slice(lf, float(d_k), interpolation, boundary, cost)

    workers = thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, grid.samples))
    else:
        results = [work(d) for d in grid.samples]
    costs = np.stack([r[0] for r in results])
    coverage = np.stack([r[1] for r in results]).astype(np.int32)
    return CostVolume(costs, grid, coverage)


def aggregate_box(cv: CostVolume, radius: int) -> CostVolume:
    """Box-filter each disparity slice with an edge-clamped window."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    if radius == 0:
        return cv.replace(cv.costs.copy())
    size = 2 * radius + 1
    out = uniform_filter(cv.costs, size=(1, size, size), mode="nearest")
    return cv.replace(out)


@dataclass
class AggregatorParams:
    """One 3D convolution bank with biases and a linear projection.

    ``filters`` has shape ``(F, kd, kh, kw)``; ``biases`` and ``projection``
    have shape ``(F,)``.
    """

    filters: np.ndarray
    biases: np.ndarray
    projection: np.ndarray

    def __post_init__(self):
        self.filters = np.asarray(self.filters, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        self.projection = np.asarray(self.projection, dtype=np.float64)
        if self.filters.ndim != 4:
            raise ValueError("filters must have shape (F, kd, kh, kw)")
        n = self.filters.shape[0]
        if self.biases.shape != (n,) or self.projection.shape != (n,):
            raise ValueError("biases and projection must have one entry per filter")
        if any(k % 2 == 0 for k in self.filters.shape[1:]):
            raise ValueError(f"kernel dims must be odd, got {self.filters.shape[1:]}")

    @property
    def n_filters(self) -> int:
        return self.filters.shape[0]

    @property
    def kernel(self) -> Tuple[int, int, int]:
        return tuple(self.filters.shape[1:])

    def flat(self) -> np.ndarray:
        return np.concatenate([self.filters.ravel(), self.biases, self.projection])

    @classmethod
    def from_flat(cls, flat, n_filters, kernel) -> "AggregatorParams":
        n_w = n_filters * int(np.prod(kernel))
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != n_w + 2 * n_filters:
            raise ValueError("flat parameter vector has the wrong length")
        return cls(
            flat[:n_w].reshape((n_filters,) + tuple(kernel)),
            flat[n_w : n_w + n_filters],
            flat[n_w + n_filters :],
        )

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat())))

    @classmethod
    def identity(cls, n_filters=1, kernel=(3, 3, 3)) -> "AggregatorParams":
        filters = np.zeros((n_filters,) + tuple(kernel))
        filters[(0,) + tuple(k // 2 for k in kernel)] = 1.0
        return cls(filters, np.zeros(n_filters), np.ones(n_filters))


def _padded_taps(x: np.ndarray, kernel):
    kd, kh, kw = kernel
    pd, ph, pw = kd // 2, kh // 2, kw // 2
    xp = np.pad(x, ((pd, pd), (ph, ph), (pw, pw)), mode="edge")
    n_d, n_h, n_w = x.shape
    for i in range(kd):
        for j in range(kh):
            for l in range(kw):
                yield (i, j, l), xp[i : i + n_d, j : j + n_h, l : l + n_w]


def _forward(x: np.ndarray, params: AggregatorParams):
    z = np.zeros((params.n_filters,) + x.shape)
    for (i, j, l), window in _padded_taps(x, params.kernel):
        z += params.filters[:, i, j, l, None, None, None] * window[None]
    z += params.biases[:, None, None, None]
    a = np.maximum(z, 0.0)
    y = np.zeros(x.shape)
    for f in range(params.n_filters):
        y += params.projection[f] * a[f]
    return z, a, y


def aggregate_learned(cv: CostVolume, params: AggregatorParams) -> CostVolume:
    """``projection . relu(conv3d(costs, filters) + biases)`` with edge padding."""
    if not params.is_finite():
        raise ValueError("aggregator parameters must be finite")
    _, _, y = _forward(cv.costs, params)
    return cv.replace(y)


def _fold_edge_padding(gp: np.ndarray, pads) -> np.ndarray:
    # adjoint of np.pad(mode="edge"): padded cells feed back into the edge cell
    for axis, p in enumerate(pads):
        if p == 0:
            continue
        gp = np.moveaxis(gp, axis, 0)
        core = gp[p:-p].copy()
        core[0] += gp[:p].sum(axis=0)
        core[-1] += gp[-p:].sum(axis=0)
        gp = np.moveaxis(core, 0, axis)
    return gp


def aggregate_learned_backward(
    cv: CostVolume, params: AggregatorParams, upstream_grad: np.ndarray
) -> Tuple[np.ndarray, AggregatorParams]:
    """Gradients of ``aggregate_learned`` w.r.t. the input costs and parameters.

    The rectifier subgradient at zero is taken as 0.
    """
    x = cv.costs
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != x.shape:
        raise ValueError(f"upstream gradient {g.shape} does not match volume {x.shape}")
    z, a, _ = _forward(x, params)

    g_proj = np.array([np.sum(g * a[f]) for f in range(params.n_filters)])
    gz = params.projection[:, None, None, None] * g[None] * (z > 0)
    g_bias = gz.sum(axis=(1, 2, 3))

    kd, kh, kw = params.kernel
    pads = (kd // 2, kh // 2, kw // 2)
    n_d, n_h, n_w = x.shape
    g_filters = np.zeros_like(params.filters)
    gp = np.zeros((n_d + 2 * pads[0], n_h + 2 * pads[1], n_w + 2 * pads[2]))
    for (i, j, l), window in _padded_taps(x, params.kernel):
        g_filters[:, i, j, l] = np.tensordot(gz, window, axes=((1, 2, 3), (0, 1, 2)))
        gp[i : i + n_d, j : j + n_h, l : l + n_w] += np.tensordot(
            params.filters[:, i, j, l], gz, axes=(0, 0)
        )
    g_x = _fold_edge_padding(gp, pads)
    return g_x, AggregatorParams(g_filters, g_bias, g_proj)


PARAMS_MAGIC = "SUBFOCAL-AGG"
PARAMS_VERSION = 1
COSTVOL_MAGIC = "SUBFOCAL-COSTVOL"


def params_bytes(params: AggregatorParams) -> bytes:
    header = "{} {} {} {} {} {}\n".format(
        PARAMS_MAGIC, PARAMS_VERSION, params.n_filters, *params.kernel
    )
    return header.encode("ascii") + params.flat().astype("<f8").tobytes()


def save_params(params: AggregatorParams, path: Union[str, Path]) -> None:
    Path(path).write_bytes(params_bytes(params))


def load_params(path: Union[str, Path]) -> AggregatorParams:
    data = Path(path).read_bytes()
    end = data.find(b"\n")
    fields = data[:end].decode("ascii").split() if end > 0 else []
    if len(fields) != 6 or fields[0] != PARAMS_MAGIC:
        raise ValueError(f"{path} is not an aggregator parameter file")
    if int(fields[1]) != PARAMS_VERSION:
        raise ValueError(f"unsupported parameter file version {fields[1]}")
    n_filters = int(fields[2])
    kernel = tuple(int(k) for k in fields[3:6])
    flat = np.frombuffer(data[end + 1 :], dtype="<f8")
    return AggregatorParams.from_flat(flat, n_filters, kernel)


def dump_cost_volume(cv: CostVolume, path: Union[str, Path]) -> None:
    """Write ``header line + little-endian float32 costs`` for external diffing."""
    d, h, w = cv.shape
    g = cv.grid
    header = f"{COSTVOL_MAGIC} {d} {h} {w} {g.d_min!r} {g.d_max!r} {g.interval!r}\n"
    Path(path).write_bytes(header.encode("ascii") + cv.costs.astype("<f4").tobytes())


def load_cost_volume(path: Union[str, Path]) -> CostVolume:
    data = Path(path).read_bytes()
    end = data.find(b"\n")
    fields = data[:end].decode("ascii").split() if end > 0 else []
    if len(fields) != 7 or fields[0] != COSTVOL_MAGIC:
        raise ValueError(f"{path} is not a cost-volume dump")
    d, h, w = (int(t) for t in fields[1:4])
    grid = DisparityGrid(*(float(t) for t in fields[4:7]))
    costs = np.frombuffer(data[end + 1 :], dtype="<f4")
    if costs.size != d * h * w:
        raise ValueError("truncated cost-volume dump")
    return CostVolume(costs.reshape(d, h, w).astype(np.float64), grid)
