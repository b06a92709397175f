"""Synthetic light fields with exact ground truth.

Textures are analytic functions of continuous coordinates, so every view is
sampled exactly at its sub-pixel source position rather than interpolated.
A view at angular offset ``(du, dv)`` of a plane with disparity ``d`` is
``T(x - du*d, y - dv*d)``, which makes the center view line up with it when
sampled at ``(x + du*d, y + dv*d)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from .lf_io import DisparityMap, LightField, save_scene

GRID_LIMIT = 4.0
NOISE_TABLE = 64


class SceneKind(str, Enum):
    CONSTANT_PLANE = "constant"
    TWO_PLANE_OCCLUSION = "twoplane"
    RAMP = "ramp"


class Texture(str, Enum):
    SINUSOID = "sinusoid"
    CHECKER_NOISE = "noise"


@dataclass(frozen=True)
class SceneSpec:
    """Scene description.

    ``disparities`` holds one value for a constant plane, ``(foreground,
    background)`` for two planes, and ``(left, right)`` column endpoints for
    a ramp. ``fg_rect`` is ``(x0, x1, y0, y1)`` in center-view pixel
    coordinates; it defaults to the central half of the image.
    """

    kind: SceneKind = SceneKind.CONSTANT_PLANE
    disparities: Tuple[float, ...] = (0.0,)
    texture: Texture = Texture.SINUSOID
    seed: int = 0
    angular_dims: Tuple[int, int] = (3, 3)
    spatial_dims: Tuple[int, int] = (32, 32)
    fg_rect: Optional[Tuple[float, float, float, float]] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", SceneKind(self.kind))
        object.__setattr__(self, "texture", Texture(self.texture))
        object.__setattr__(self, "disparities", tuple(float(d) for d in self.disparities))
        expected = 1 if self.kind is SceneKind.CONSTANT_PLANE else 2
        if len(self.disparities) != expected:
            raise ValueError(f"{self.kind.value} scenes take {expected} disparities")
        if any(abs(d) > GRID_LIMIT for d in self.disparities):
            raise ValueError(f"disparities must lie in [-{GRID_LIMIT}, {GRID_LIMIT}]")
        if self.kind is SceneKind.TWO_PLANE_OCCLUSION and not self.disparities[0] > self.disparities[1]:
            raise ValueError("foreground disparity must exceed background disparity")
        if min(self.angular_dims) < 1 or min(self.spatial_dims) < 2:
            raise ValueError("angular and spatial dims must be positive")

    def foreground_rect(self) -> Tuple[float, float, float, float]:
        if self.fg_rect is not None:
            return self.fg_rect
        h, w = self.spatial_dims
        return (h * 0.25, h * 0.75, w * 0.25, w * 0.75)


class SinusoidTexture:
    """Sum of three oriented sinusoids with seeded frequencies and phases."""

    def __init__(self, seed: int):
        rng = np.random.default_rng(seed)
        n = 3
        freq = rng.uniform(1 / 14, 1 / 7, size=n)
        angle = rng.uniform(0, np.pi, size=n)
        self.fx = freq * np.cos(angle)
        self.fy = freq * np.sin(angle)
        self.phase = rng.uniform(0, 2 * np.pi, size=n)
        self.amp = np.full(n, 0.4 / n)

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        out = np.full(np.shape(x), 0.5)
        for fx, fy, ph, a in zip(self.fx, self.fy, self.phase, self.amp):
            out = out + a * np.sin(2 * np.pi * (fx * x + fy * y) + ph)
        return out


class ValueNoiseTexture:
    """Two octaves of smooth value noise on a periodic random lattice."""

    def __init__(self, seed: int, cell: float = 4.0):
        rng = np.random.default_rng(seed)
        self.tables = [rng.uniform(0.0, 1.0, size=(NOISE_TABLE, NOISE_TABLE)) for _ in range(2)]
        self.cells = (cell, 2.0 * cell)
        self.weights = (0.6, 0.4)

    @staticmethod
    def _fade(t):
        return t * t * t * (t * (t * 6 - 15) + 10)

    def _octave(self, table, x, y):
        i0 = np.floor(x).astype(np.int64)
        j0 = np.floor(y).astype(np.int64)
        tx = self._fade(x - i0)
        ty = self._fade(y - j0)
        i0m, i1m = i0 % NOISE_TABLE, (i0 + 1) % NOISE_TABLE
        j0m, j1m = j0 % NOISE_TABLE, (j0 + 1) % NOISE_TABLE
        top = (1 - ty) * table[i0m, j0m] + ty * table[i0m, j1m]
        bot = (1 - ty) * table[i1m, j0m] + ty * table[i1m, j1m]
        return (1 - tx) * top + tx * bot

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        out = np.zeros(np.shape(x))
        for table, cell, wgt in zip(self.tables, self.cells, self.weights):
            out = out + wgt * self._octave(table, np.asarray(x) / cell, np.asarray(y) / cell)
        return 0.1 + 0.8 * out


def make_texture(kind: Texture, seed: int):
    if Texture(kind) is Texture.SINUSOID:
        return SinusoidTexture(seed)
    return ValueNoiseTexture(seed)


def _inside(rect, x, y):
    x0, x1, y0, y1 = rect
    return (x >= x0) & (x < x1) & (y >= y0) & (y < y1)


def render(spec: SceneSpec) -> Tuple[LightField, DisparityMap]:
    """Render every view analytically and return the exact center-view disparity."""
    n_u, n_v = spec.angular_dims
    h, w = spec.spatial_dims
    u_c, v_c = n_u // 2, n_v // 2
    x, y = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    tex = make_texture(spec.texture, spec.seed)
    views = np.empty((n_u, n_v, h, w))

    if spec.kind is SceneKind.CONSTANT_PLANE:
        (d,) = spec.disparities
        for u in range(n_u):
            for v in range(n_v):
                views[u, v] = tex(x - (u - u_c) * d, y - (v - v_c) * d)
        gt = np.full((h, w), d)

    elif spec.kind is SceneKind.TWO_PLANE_OCCLUSION:
        d_fg, d_bg = spec.disparities
        fg_tex = make_texture(spec.texture, spec.seed + 7919)
        rect = spec.foreground_rect()
        for u in range(n_u):
            for v in range(n_v):
                du, dv = u - u_c, v - v_c
                xf, yf = x - du * d_fg, y - dv * d_fg
                back = tex(x - du * d_bg, y - dv * d_bg)
                # painter's order: foreground over background
                views[u, v] = np.where(_inside(rect, xf, yf), fg_tex(xf, yf), back)
        gt = np.where(_inside(rect, x, y), d_fg, d_bg)

    else:
        d_left, d_right = spec.disparities
        slope = (d_right - d_left) / (w - 1)
        for u in range(n_u):
            for v in range(n_v):
                du, dv = u - u_c, v - v_c
                if 1 + dv * slope <= 0:
                    raise ValueError("ramp slope folds the view over itself")
                # invert y' = Y + dv * d(Y) for the center-view column Y
                yc = (y - dv * d_left) / (1 + dv * slope)
                d_src = d_left + slope * yc
                views[u, v] = tex(x - du * d_src, yc)
        gt = d_left + slope * y

    lf = LightField(np.clip(views, 0.0, 1.0), center=(u_c, v_c))
    return lf, DisparityMap(gt)


def two_plane_suite(
    seeds=range(5),
    angular_dims=(5, 5),
    spatial_dims=(48, 48),
    texture: Texture = Texture.CHECKER_NOISE,
) -> List[SceneSpec]:
    """Occlusion scenes with seeded, off-grid plane disparities."""
    specs = []
    for seed in seeds:
        rng = np.random.default_rng(10_000 + seed)
        bg = float(rng.uniform(-1.8, 0.2))
        fg = float(bg + rng.uniform(0.8, 1.8))
        specs.append(
            SceneSpec(
                SceneKind.TWO_PLANE_OCCLUSION,
                (round(fg, 3), round(bg, 3)),
                texture,
                seed,
                angular_dims,
                spatial_dims,
            )
        )
    return specs


def export_scene(spec: SceneSpec, path) -> None:
    lf, gt = render(spec)
    save_scene(path, lf, gt)
