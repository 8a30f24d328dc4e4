"""Synthetic B-mode rendering.

A geometric renderer: tissue layers become horizontal bands with per-layer
speckle, vessels become dark lumens with a bright 1 mm wall wherever the
solid tube cuts the image plane, and the needle is drawn as a bright
segment.  Acoustic contact quality (coupling) scales everything; with no
contact the frame collapses to a uniform noise floor.

Rendering is a pure function of (phantom, pose, needle, force, seed, tick).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geom import points_to_polyline_distance
from .phantom import ImagePlane, PhantomModel

NOISE_FLOOR = 0.05
WALL_THICKNESS_MM = 1.0
NEEDLE_HALF_WIDTH_MM = 0.4
NEEDLE_SLICE_THICKNESS_MM = 2.0
LUMEN_ECHOGENICITY = 0.02


class FrameDomainError(ValueError):
    """Pixel query outside the frame."""


@dataclass(frozen=True)
class FrameGeometry:
    """Pixel grid geometry of the simulated scanner view."""
    width: int = 640
    height: int = 480
    sx: float = 1.0 / 16.0    # mm per pixel, lateral
    sy: float = 1.0 / 6.0     # mm per pixel, depth
    f_couple: float = 2.0     # N of axial force for full coupling

    def __post_init__(self):
        if self.sx <= 0 or self.sy <= 0:
            raise ValueError("pixel scales must be positive")


@dataclass(frozen=True)
class NeedleGeometry:
    """In-plane needle segment: pivot and tip in (lateral, depth) mm."""
    pivot: tuple[float, float]
    tip: tuple[float, float]
    inserted: bool = True


@dataclass(frozen=True)
class UltrasoundFrame:
    intensities: np.ndarray   # (H, W) in [0, 1]
    geometry: FrameGeometry
    plane: ImagePlane
    coupling: float
    tick: int

    @property
    def width(self) -> int:
        return self.geometry.width

    @property
    def height(self) -> int:
        return self.geometry.height


def pixel_to_plane(u: float, v: float, geom: FrameGeometry) -> tuple[float, float]:
    """Pixel coordinates to in-plane (lateral, depth) mm."""
    if not (0 <= u < geom.width and 0 <= v < geom.height):
        raise FrameDomainError(f"pixel ({u}, {v}) outside {geom.width}x{geom.height}")
    return ((u - geom.width / 2.0) * geom.sx, v * geom.sy)


def plane_to_pixel(lateral: float, depth: float, geom: FrameGeometry
                   ) -> tuple[float, float]:
    """In-plane (lateral, depth) mm to pixel coordinates."""
    return (lateral / geom.sx + geom.width / 2.0, depth / geom.sy)


def coupling_from_force(axial_force: float, geom: FrameGeometry) -> float:
    return float(np.clip(axial_force / geom.f_couple, 0.0, 1.0))


def _plane_points(plane: ImagePlane, geom: FrameGeometry) -> np.ndarray:
    """World coordinates of every pixel center, shape (H*W, 3)."""
    u = np.arange(geom.width)
    v = np.arange(geom.height)
    lat = (u - geom.width / 2.0) * geom.sx
    dep = v * geom.sy
    pts = (plane.origin[None, None, :]
           + lat[None, :, None] * plane.e_lat[None, None, :]
           + dep[:, None, None] * plane.e_down[None, None, :])
    return pts.reshape(-1, 3)


def render(phantom: PhantomModel, plane: ImagePlane,
           needle: Optional[NeedleGeometry], axial_force: float, seed: int,
           tick: int = 0, geom: FrameGeometry = FrameGeometry(),
           displaced_centerlines: Optional[dict] = None) -> UltrasoundFrame:
    """Render one frame.

    ``displaced_centerlines`` optionally maps vessel id to a displaced
    centerline polyline; rest geometry is used otherwise.
    """
    H, W = geom.height, geom.width
    coupling = coupling_from_force(axial_force, geom)

    depth_col = np.arange(H) * geom.sy

    # Per-row layer banding.
    base = np.zeros((H, W))
    sigma = np.zeros((H, W))
    tops = [la.top_depth for la in phantom.layers]
    idx = np.searchsorted(tops, depth_col, side="right") - 1
    idx = np.clip(idx, 0, len(phantom.layers) - 1)
    echo_by_layer = np.array([la.echogenicity for la in phantom.layers])
    var_by_layer = np.array([la.speckle_variance for la in phantom.layers])
    base[:] = echo_by_layer[idx][:, None]
    sigma[:] = np.sqrt(var_by_layer[idx])[:, None]

    # Vessels: dark lumen + bright wall wherever the tube cuts the plane.
    pts = None
    n = plane.normal
    for vessel in phantom.vessels:
        cl = vessel.centerline
        if displaced_centerlines and vessel.id in displaced_centerlines:
            cl = displaced_centerlines[vessel.id]
        sd = (cl - plane.origin) @ n
        crosses = np.any(sd[:-1] * sd[1:] <= 0.0)
        if not crosses and np.min(np.abs(sd)) > vessel.radius \
                + WALL_THICKNESS_MM:
            continue
        if pts is None:
            pts = _plane_points(plane, geom)
        d = points_to_polyline_distance(pts, cl).reshape(H, W)
        lumen = d < vessel.radius
        wall = (d >= vessel.radius) & (d < vessel.radius + WALL_THICKNESS_MM)
        base[lumen] = LUMEN_ECHOGENICITY
        sigma[lumen] = 0.05
        base[wall] = vessel.echogenicity
        sigma[wall] = 0.15

    # Seeded multiplicative speckle, reproducible per (seed, tick).
    rng = np.random.default_rng([seed & 0xFFFFFFFF, tick & 0xFFFFFFFF])
    speckle = np.clip(1.0 + sigma * rng.standard_normal((H, W)), 0.0, None)
    anatomy = base * speckle

    # Needle overlay (the guide keeps the needle in-plane, well inside the
    # 2 mm slice thickness).
    if needle is not None and needle.inserted:
        lat = (np.arange(W) - W / 2.0) * geom.sx
        LAT, DEP = np.meshgrid(lat, depth_col)
        a = np.array(needle.pivot)
        b = np.array(needle.tip)
        ab = b - a
        ab2 = float(ab @ ab)
        if ab2 > 0.0:
            t = np.clip(((LAT - a[0]) * ab[0] + (DEP - a[1]) * ab[1]) / ab2,
                        0.0, 1.0)
            dn = np.hypot(LAT - (a[0] + t * ab[0]), DEP - (a[1] + t * ab[1]))
            anatomy[dn < NEEDLE_HALF_WIDTH_MM] = 1.2

    intensities = np.clip(NOISE_FLOOR + coupling * anatomy, 0.0, 1.0)
    return UltrasoundFrame(intensities=intensities, geometry=geom, plane=plane,
                           coupling=coupling, tick=tick)


# ---------------------------------------------------------------------------
# PGM export (binary P5), used for logs and the frame wire format
# ---------------------------------------------------------------------------

def frame_to_pgm(frame: UltrasoundFrame) -> bytes:
    img = np.clip(np.round(frame.intensities * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{frame.width} {frame.height}\n255\n".encode()
    return header + img.tobytes()


def pgm_to_array(data: bytes) -> np.ndarray:
    """Parse a binary P5 PGM into a float array in [0, 1]."""
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    pos += 1  # single whitespace after maxval
    img = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return img.reshape(h, w).astype(float) / maxval
