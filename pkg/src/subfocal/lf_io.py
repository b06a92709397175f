"""Light-field data model and file I/O.

Scene directories follow the HCI 4D benchmark layout: views are stored as
``input_Cam000.png`` ... ``input_CamNNN.png`` in row-major angular order
(u first, then v) and the optional ground truth as ``gt_disp_lowres.pfm``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Optional, Tuple, Union

import numpy as np
from PIL import Image

# Rec. 601 luma
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

VIEW_PATTERN = re.compile(r"Cam(\d+)\.png$")
GT_NAMES = ("gt_disp_lowres.pfm", "gt_disp.pfm", "disparity.pfm")
PNG_COMPRESS_LEVEL = 6

PathLike = Union[str, Path]


class MalformedScene(ValueError):
    """Scene directory is missing views or has inconsistent view sizes."""


class PfmParseError(ValueError):
    """Byte stream is not a valid grayscale PFM."""


@dataclass(frozen=True)
class LightField:
    """Grid of grayscale sub-aperture views indexed ``views[u, v, x, y]``."""

    views: np.ndarray
    center: Tuple[int, int] = None

    def __post_init__(self):
        views = np.asarray(self.views, dtype=np.float64)
        if views.ndim != 4:
            raise ValueError(f"views must be 4D (U, V, H, W), got shape {views.shape}")
        if min(views.shape) < 1:
            raise ValueError(f"empty light field {views.shape}")
        if not np.all(np.isfinite(views)):
            raise ValueError("light field contains non-finite samples")
        if views.min() < 0.0 or views.max() > 1.0:
            raise ValueError("light field samples must lie in [0, 1]")
        views.setflags(write=False)
        object.__setattr__(self, "views", views)

        n_u, n_v = views.shape[:2]
        center = self.center
        if center is None:
            center = (n_u // 2, n_v // 2)
        center = (int(center[0]), int(center[1]))
        if not (0 <= center[0] < n_u and 0 <= center[1] < n_v):
            raise ValueError(f"center {center} outside angular dims {(n_u, n_v)}")
        object.__setattr__(self, "center", center)

    @property
    def angular_dims(self) -> Tuple[int, int]:
        return self.views.shape[0], self.views.shape[1]

    @property
    def spatial_dims(self) -> Tuple[int, int]:
        return self.views.shape[2], self.views.shape[3]

    @property
    def center_view(self) -> np.ndarray:
        return self.views[self.center]

    def offsets(self):
        """Yield ``((u, v), (u - u_c, v - v_c))`` in row-major order."""
        n_u, n_v = self.angular_dims
        for u in range(n_u):
            for v in range(n_v):
                yield (u, v), (u - self.center[0], v - self.center[1])


@dataclass(frozen=True)
class CameraParams:
    baseline: float
    focal_length: float

    def __post_init__(self):
        if not (self.baseline > 0 and self.focal_length > 0):
            raise ValueError("baseline and focal length must be strictly positive")


@dataclass(frozen=True)
class DisparityMap:
    """Per-pixel disparity in pixels with an optional validity mask."""

    values: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"disparity map must be 2D, got shape {values.shape}")
        mask = self.mask
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != values.shape:
                raise ValueError("mask shape does not match disparity map")
            check = values[mask]
        else:
            check = values
        if not np.all(np.isfinite(check)):
            raise ValueError("valid disparity entries must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def valid(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.values.shape, dtype=bool)
        return self.mask


def depth_from_disparity(d, params: CameraParams):
    """Convert disparity to depth as ``f * B / d``."""
    d_arr = np.asarray(d, dtype=np.float64)
    if np.any(d_arr == 0):
        raise ZeroDivisionError("depth is undefined at zero disparity")
    depth = params.focal_length * params.baseline / d_arr
    return float(depth) if depth.ndim == 0 else depth


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Map an integer or float image to float64 luminance in [0, 1]."""
    if np.issubdtype(image.dtype, np.integer):
        scale = float(np.iinfo(image.dtype).max)
        if image.dtype == np.int32:
            # Pillow decodes 16-bit PNGs as int32
            scale = 65535.0
    else:
        scale = 1.0
    img = image.astype(np.float64) / scale
    if img.ndim == 2:
        gray = img
    elif img.ndim == 3 and img.shape[2] in (3, 4):
        r, g, b = LUMA_WEIGHTS
        gray = r * img[..., 0] + g * img[..., 1] + b * img[..., 2]
    elif img.ndim == 3 and img.shape[2] in (1, 2):
        gray = img[..., 0]
    else:
        raise MalformedScene(f"unsupported image shape {image.shape}")
    return np.clip(gray, 0.0, 1.0)


def read_png(path: PathLike) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L"):
            arr = np.array(im, dtype=np.uint16)
        elif im.mode == "I":
            arr = np.array(im, dtype=np.int32)
        elif im.mode in ("L", "RGB", "RGBA", "LA"):
            arr = np.array(im)
        else:
            arr = np.array(im.convert("RGB"))
    return to_grayscale(arr)


def write_png(path: PathLike, image: np.ndarray, bits: int = 8) -> None:
    """Write an image in [0, 1] (gray HxW or RGB HxWx3) as a PNG."""
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if bits == 16:
        if image.ndim != 2:
            raise ValueError("16-bit output supports grayscale only")
        arr = np.round(image * 65535.0).astype(np.uint16)
        im = Image.fromarray(arr)
    elif bits == 8:
        arr = np.round(image * 255.0).astype(np.uint8)
        im = Image.fromarray(arr, mode="L" if arr.ndim == 2 else "RGB")
    else:
        raise ValueError(f"unsupported bit depth {bits}")
    im.save(path, format="PNG", optimize=False, compress_level=PNG_COMPRESS_LEVEL)


def _read_header_line(buf: bytes, pos: int) -> Tuple[str, int]:
    end = buf.find(b"\n", pos)
    if end < 0:
        raise PfmParseError("truncated PFM header")
    try:
        line = buf[pos:end].decode("ascii").strip()
    except UnicodeDecodeError as exc:
        raise PfmParseError("non-ASCII PFM header") from exc
    return line, end + 1


def parse_pfm(data: Union[bytes, BinaryIO]) -> Tuple[np.ndarray, float]:
    """Parse a grayscale PFM stream.

    Returns the image in top-down raster order as float32 and the scale
    value from the header (its sign encodes endianness: negative means
    little-endian).
    """
    buf = data if isinstance(data, (bytes, bytearray)) else data.read()
    magic, pos = _read_header_line(buf, 0)
    if magic == "PF":
        raise PfmParseError("color PFM ('PF') is not supported")
    if magic != "Pf":
        raise PfmParseError(f"bad PFM magic {magic!r}")
    dims, pos = _read_header_line(buf, pos)
    parts = dims.split()
    if len(parts) != 2:
        raise PfmParseError(f"bad PFM dimensions line {dims!r}")
    try:
        width, height = int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise PfmParseError(f"non-numeric PFM dimensions {dims!r}") from exc
    if width <= 0 or height <= 0:
        raise PfmParseError(f"non-positive PFM dimensions {dims!r}")
    scale_line, pos = _read_header_line(buf, pos)
    try:
        scale = float(scale_line)
    except ValueError as exc:
        raise PfmParseError(f"bad PFM scale {scale_line!r}") from exc
    if scale == 0 or not math.isfinite(scale):
        raise PfmParseError(f"bad PFM scale {scale_line!r}")

    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    n_bytes = width * height * 4
    payload = buf[pos : pos + n_bytes]
    if len(payload) < n_bytes:
        raise PfmParseError(f"truncated PFM payload: {len(payload)} of {n_bytes} bytes")
    arr = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    # PFM rows run bottom-up
    return np.flipud(arr).astype(np.float32), scale


def read_pfm(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        arr, _ = parse_pfm(fh.read())
    return arr


def pfm_bytes(values: np.ndarray) -> bytes:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("PFM output supports 2D grayscale maps only")
    if not np.all(np.isfinite(values)):
        raise ValueError("cannot write non-finite values to PFM")
    height, width = values.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode("ascii")
    body = np.flipud(values.astype("<f4")).tobytes()
    return header + body


def write_pfm(dmap: Union[DisparityMap, np.ndarray], path: PathLike) -> None:
    """Write a disparity map as little-endian grayscale PFM."""
    values = dmap.values if isinstance(dmap, DisparityMap) else dmap
    data = pfm_bytes(values)
    with open(path, "wb") as fh:
        fh.write(data)


def view_filename(index: int) -> str:
    return f"input_Cam{index:03d}.png"


def load_scene(
    path: PathLike, angular_dims: Optional[Tuple[int, int]] = None
) -> Tuple[LightField, Optional[DisparityMap]]:
    """Load an HCI-layout scene directory.

    When ``angular_dims`` is omitted the view count must be a perfect square.
    """
    root = Path(path)
    if not root.is_dir():
        raise MalformedScene(f"scene directory not found: {root}")

    indexed = {}
    for entry in root.iterdir():
        m = VIEW_PATTERN.search(entry.name)
        if m:
            indexed[int(m.group(1))] = entry
    n_views = len(indexed)
    if n_views == 0:
        raise MalformedScene(f"no view images in {root}")
    if angular_dims is None:
        side = math.isqrt(n_views)
        if side * side != n_views:
            raise MalformedScene(f"{n_views} views do not form a square angular grid")
        angular_dims = (side, side)
    n_u, n_v = angular_dims
    if sorted(indexed) != list(range(n_u * n_v)):
        raise MalformedScene(
            f"expected views 0..{n_u * n_v - 1}, found {n_views} views in {root}"
        )

    views = [read_png(indexed[i]) for i in range(n_u * n_v)]
    shapes = {v.shape for v in views}
    if len(shapes) != 1:
        raise MalformedScene(f"views have mixed sizes: {sorted(shapes)}")
    h, w = views[0].shape
    lf = LightField(np.stack(views).reshape(n_u, n_v, h, w))

    gt = None
    for name in GT_NAMES:
        if (root / name).is_file():
            values = read_pfm(root / name)
            if values.shape != (h, w):
                raise MalformedScene(f"ground truth {values.shape} does not match views {(h, w)}")
            gt = DisparityMap(values.astype(np.float64))
            break
    return lf, gt


def save_scene(path: PathLike, lf: LightField, gt: Optional[DisparityMap] = None) -> None:
    """Write a light field (16-bit PNG views) and optional ground truth."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    n_u, n_v = lf.angular_dims
    for u in range(n_u):
        for v in range(n_v):
            write_png(root / view_filename(u * n_v + v), lf.views[u, v], bits=16)
    if gt is not None:
        write_pfm(gt, root / GT_NAMES[0])
