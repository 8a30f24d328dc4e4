"""Virtual anatomy: skin heightfield, tissue layers, and vessel tubes.

All geometry is quasi-static.  The phantom is immutable after construction;
vessel displacement under needle contact is returned as a new centerline
rather than mutated in place.

Units: mm for lengths, N for forces.  World frame: x/y horizontal, z up.
The nominal skin rest surface is the heightfield z = s(x, y).  Vessels run
below it (negative z for the default anatomies).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .geom import point_to_polyline, polyline_arclength, resample_polyline

PHANTOM_FORMAT = 1

#: Arc-length half-width of the cosine falloff applied to rolling displacement.
ROLL_FALLOFF_MM = 15.0


class DomainError(ValueError):
    """Query outside the phantom surface domain."""


class PhantomProfile(str, Enum):
    HUMAN_PHANTOM = "HumanPhantom"
    PORCINE_IN_VIVO = "PorcineInVivo"


class VesselKind(str, Enum):
    ARTERY = "Artery"
    VEIN = "Vein"


@dataclass(frozen=True)
class TissueLayer:
    name: str
    top_depth: float          # mm below the skin line in the image
    echogenicity: float       # [0, 1]
    speckle_variance: float


@dataclass(frozen=True)
class NeedleContact:
    """Quasi-static needle load on a vessel wall."""
    point: np.ndarray         # (3,) world mm, on/near the centerline
    force: float              # N, >= 0
    normal: np.ndarray        # (3,) unit push direction


@dataclass(frozen=True)
class Vessel:
    id: str
    kind: VesselKind
    centerline: np.ndarray    # (N, 3) mm, N >= 2, ordered along arc length
    radius: float             # mm
    wall_puncture_force: float  # N
    roll_stiffness: float     # N/mm
    max_roll: float           # mm
    echogenicity: float       # [0, 1]

    def __post_init__(self):
        cl = np.asarray(self.centerline, dtype=float)
        object.__setattr__(self, "centerline", cl)
        if cl.ndim != 2 or cl.shape[0] < 2 or cl.shape[1] != 3:
            raise ValueError(f"vessel {self.id}: centerline must be (N>=2, 3)")
        seg = np.linalg.norm(np.diff(cl, axis=0), axis=1)
        if np.any(seg <= 0.0):
            raise ValueError(f"vessel {self.id}: centerline points must be "
                             "strictly ordered along arc length")
        if self.radius <= 0.0:
            raise ValueError(f"vessel {self.id}: radius must be > 0")
        if self.max_roll < 0.0 or self.roll_stiffness <= 0.0:
            raise ValueError(f"vessel {self.id}: bad rolling parameters")
        if not 0.0 <= self.echogenicity <= 1.0:
            raise ValueError(f"vessel {self.id}: echogenicity outside [0, 1]")


@dataclass(frozen=True)
class Heightfield:
    """Bilinear z = s(x, y) over a rectangular grid."""
    x0: float
    y0: float
    dx: float
    dy: float
    heights: np.ndarray       # (ny, nx)

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=float)
        object.__setattr__(self, "heights", h)
        if h.ndim != 2 or h.shape[0] < 2 or h.shape[1] < 2:
            raise ValueError("heightfield grid must be at least 2x2")
        if not np.all(np.isfinite(h)):
            raise ValueError("heightfield contains non-finite values")
        if self.dx <= 0 or self.dy <= 0:
            raise ValueError("heightfield spacing must be positive")

    @property
    def x1(self) -> float:
        return self.x0 + self.dx * (self.heights.shape[1] - 1)

    @property
    def y1(self) -> float:
        return self.y0 + self.dy * (self.heights.shape[0] - 1)


@dataclass(frozen=True)
class PhantomModel:
    surface: Heightfield
    layers: tuple[TissueLayer, ...]
    vessels: tuple[Vessel, ...]
    profile: PhantomProfile
    skin_stiffness: float        # N/mm
    skin_puncture_force: float   # N
    min_vessel_depth: float = 2.0
    max_vessel_depth: float = 80.0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "vessels", tuple(self.vessels))
        if not self.layers or self.layers[0].top_depth != 0.0:
            raise ValueError("first tissue layer must start at depth 0")
        tops = [la.top_depth for la in self.layers]
        if sorted(tops) != tops or len(set(tops)) != len(tops):
            raise ValueError("layers must be ordered by increasing top_depth")
        for v in self.vessels:
            for p in v.centerline:
                depth = surface_height(self, p[0], p[1]) - p[2]
                if depth < self.min_vessel_depth or depth > self.max_vessel_depth:
                    raise ValueError(
                        f"vessel {v.id}: centerline depth {depth:.2f} mm outside "
                        f"[{self.min_vessel_depth}, {self.max_vessel_depth}] mm")

    def vessel(self, vessel_id: str) -> Vessel:
        for v in self.vessels:
            if v.id == vessel_id:
                return v
        raise KeyError(vessel_id)


def surface_height(phantom: PhantomModel, x: float, y: float) -> float:
    """Bilinear interpolation of the skin heightfield at (x, y)."""
    hf = phantom.surface
    if not (hf.x0 <= x <= hf.x1 and hf.y0 <= y <= hf.y1):
        raise DomainError(f"surface query ({x}, {y}) outside domain "
                          f"[{hf.x0}, {hf.x1}] x [{hf.y0}, {hf.y1}]")
    fx = (x - hf.x0) / hf.dx
    fy = (y - hf.y0) / hf.dy
    i = min(int(fx), hf.heights.shape[1] - 2)
    j = min(int(fy), hf.heights.shape[0] - 2)
    tx = fx - i
    ty = fy - j
    h = hf.heights
    return float((1 - tx) * (1 - ty) * h[j, i] + tx * (1 - ty) * h[j, i + 1]
                 + (1 - tx) * ty * h[j + 1, i] + tx * ty * h[j + 1, i + 1])


def displaced_vessel(vessel: Vessel,
                     needle_contact: Optional[NeedleContact] = None,
                     resample_step: float = 0.2) -> np.ndarray:
    """Centerline of the vessel under an optional needle load.

    Local displacement peaks at min(force / roll_stiffness, max_roll) along
    the contact normal and decays with a cosine profile over +-15 mm of arc
    length.  With no contact the rest centerline is returned unchanged.
    """
    if needle_contact is None:
        return vessel.centerline
    if needle_contact.force < 0.0:
        raise ValueError("contact force must be >= 0")
    delta = min(needle_contact.force / vessel.roll_stiffness, vessel.max_roll)
    if delta == 0.0:
        return vessel.centerline
    pts = resample_polyline(vessel.centerline, resample_step)
    s = polyline_arclength(pts)
    _, _, s0 = point_to_polyline(np.asarray(needle_contact.point, float), pts)
    w = np.zeros(len(pts))
    near = np.abs(s - s0) <= ROLL_FALLOFF_MM
    w[near] = 0.5 * (1.0 + np.cos(np.pi * (s[near] - s0) / ROLL_FALLOFF_MM))
    n = np.asarray(needle_contact.normal, float)
    n = n / np.linalg.norm(n)
    return pts + (delta * w)[:, None] * n[None, :]


@dataclass(frozen=True)
class ImagePlane:
    """Pose of the ultrasound image plane in world coordinates.

    ``origin`` maps to the top-center image pixel; ``e_lat`` is the in-plane
    lateral direction, ``e_down`` the in-plane depth direction.  Both must be
    unit length and orthogonal.
    """
    origin: np.ndarray
    e_lat: np.ndarray
    e_down: np.ndarray

    def __post_init__(self):
        for name in ("origin", "e_lat", "e_down"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), float))
        if abs(np.linalg.norm(self.e_lat) - 1) > 1e-9 \
                or abs(np.linalg.norm(self.e_down) - 1) > 1e-9 \
                or abs(self.e_lat @ self.e_down) > 1e-9:
            raise ValueError("image plane axes must be orthonormal")

    @property
    def normal(self) -> np.ndarray:
        return np.cross(self.e_lat, self.e_down)


@dataclass(frozen=True)
class CrossSection:
    """Ellipse of a straight tube cut by the image plane, in plane coords."""
    center: np.ndarray        # (lateral, depth) mm
    semi_minor: float         # = vessel radius
    semi_major: float
    orientation: float        # rad of the major axis in plane coords


def vessel_cross_section(vessel: Vessel, plane: ImagePlane,
                         centerline: Optional[np.ndarray] = None
                         ) -> Optional[CrossSection]:
    """Exact conic of the (possibly displaced) tube cut by the image plane.

    Returns None when the centerline does not cross the plane, including the
    degenerate near-parallel case where the section is no longer an ellipse.
    """
    cl = vessel.centerline if centerline is None else centerline
    n = plane.normal
    sd = (cl - plane.origin) @ n
    for i in range(len(cl) - 1):
        if sd[i] == 0.0 and sd[i + 1] == 0.0:
            continue
        if sd[i] * sd[i + 1] > 0.0:
            continue
        t = sd[i] / (sd[i] - sd[i + 1])
        crossing = cl[i] + t * (cl[i + 1] - cl[i])
        axis = cl[i + 1] - cl[i]
        axis = axis / np.linalg.norm(axis)
        cos_psi = abs(float(axis @ n))
        if cos_psi < 1e-6:
            return None  # grazing: section degenerates to a strip
        rel = crossing - plane.origin
        center = np.array([rel @ plane.e_lat, rel @ plane.e_down])
        in_plane = axis - (axis @ n) * n
        norm = np.linalg.norm(in_plane)
        if norm < 1e-12:
            orientation = 0.0  # circular section: orientation is arbitrary
        else:
            in_plane /= norm
            orientation = float(np.arctan2(in_plane @ plane.e_down,
                                           in_plane @ plane.e_lat))
        return CrossSection(center=center, semi_minor=vessel.radius,
                            semi_major=vessel.radius / cos_psi,
                            orientation=orientation)
    return None


def section_elongation(vessel: Vessel, plane: ImagePlane) -> float:
    """Major/minor axis ratio of the rendered vessel section.

    Returns inf for a true longitudinal view (axis lying in the plane within
    one radius), 0.0 when the vessel does not intersect the plane at all.
    """
    cs = vessel_cross_section(vessel, plane)
    if cs is not None:
        return cs.semi_major / cs.semi_minor
    n = plane.normal
    dist = np.abs((vessel.centerline - plane.origin) @ n)
    if np.min(dist) <= vessel.radius:
        return float("inf")
    return 0.0


# ---------------------------------------------------------------------------
# Default anatomies
# ---------------------------------------------------------------------------

def _default_surface() -> Heightfield:
    # Groin-scale swell: +-8 mm along x, flat in y, zero at x = 60.
    x = np.linspace(0.0, 160.0, 81)
    y = np.linspace(0.0, 120.0, 61)
    h = np.tile(8.0 * np.sin(2.0 * np.pi * x / 120.0), (len(y), 1))
    return Heightfield(x0=0.0, y0=0.0, dx=2.0, dy=2.0, heights=h)


_DEFAULT_LAYERS = (
    TissueLayer("skin", 0.0, 0.55, 0.30),
    TissueLayer("fat", 3.0, 0.35, 0.25),
    TissueLayer("muscle", 12.0, 0.45, 0.35),
    TissueLayer("deep", 40.0, 0.25, 0.20),
)


def default_human_phantom() -> PhantomModel:
    """Leg-trainer anatomy: straight parallel artery/vein under a gentle swell."""
    artery = Vessel(
        id="femoral_artery", kind=VesselKind.ARTERY,
        centerline=np.array([[10.0, 55.0, -20.0], [150.0, 55.0, -20.0]]),
        radius=3.5, wall_puncture_force=0.8, roll_stiffness=0.4,
        max_roll=1.0, echogenicity=0.9)
    vein = Vessel(
        id="femoral_vein", kind=VesselKind.VEIN,
        centerline=np.array([[10.0, 65.0, -22.0], [150.0, 65.0, -22.0]]),
        radius=4.5, wall_puncture_force=0.5, roll_stiffness=0.3,
        max_roll=2.0, echogenicity=0.8)
    return PhantomModel(
        surface=_default_surface(), layers=_DEFAULT_LAYERS,
        vessels=(artery, vein), profile=PhantomProfile.HUMAN_PHANTOM,
        skin_stiffness=2.0, skin_puncture_force=0.5)


def _bent_centerline(y: float, z: float, bend_radius: float = 30.0) -> np.ndarray:
    """Straight run through the access site with arcs curving away beyond it."""
    pts = []
    # incoming arc, curving from -y toward the straight run
    for ang in np.linspace(np.pi / 3, 0.0, 8, endpoint=False):
        pts.append([40.0 - bend_radius * np.sin(ang),
                    y + bend_radius * (1.0 - np.cos(ang)) * -1.0, z])
    pts.append([40.0, y, z])
    pts.append([85.0, y, z])
    # outgoing arc, curving toward +y
    for ang in np.linspace(0.0, np.pi / 3, 9)[1:]:
        pts.append([85.0 + bend_radius * np.sin(ang),
                    y + bend_radius * (1.0 - np.cos(ang)), z])
    return np.array(pts)


def default_porcine_phantom() -> PhantomModel:
    """In-vivo-like anatomy: deeper, curved, and far more prone to rolling."""
    artery = Vessel(
        id="femoral_artery", kind=VesselKind.ARTERY,
        centerline=_bent_centerline(55.0, -30.0),
        radius=3.5, wall_puncture_force=0.8, roll_stiffness=0.1,
        max_roll=2.5, echogenicity=0.9)
    vein = Vessel(
        id="femoral_vein", kind=VesselKind.VEIN,
        centerline=_bent_centerline(65.0, -33.0),
        radius=4.5, wall_puncture_force=0.5, roll_stiffness=0.075,
        max_roll=3.5, echogenicity=0.8)
    return PhantomModel(
        surface=_default_surface(), layers=_DEFAULT_LAYERS,
        vessels=(artery, vein), profile=PhantomProfile.PORCINE_IN_VIVO,
        skin_stiffness=1.5, skin_puncture_force=0.4)


def default_phantom(profile: PhantomProfile | str) -> PhantomModel:
    profile = PhantomProfile(profile)
    if profile is PhantomProfile.HUMAN_PHANTOM:
        return default_human_phantom()
    return default_porcine_phantom()


# ---------------------------------------------------------------------------
# Serialization (format 1)
# ---------------------------------------------------------------------------

def phantom_to_dict(ph: PhantomModel) -> dict:
    hf = ph.surface
    return {
        "format": PHANTOM_FORMAT,
        "profile": ph.profile.value,
        "skin_stiffness": ph.skin_stiffness,
        "skin_puncture_force": ph.skin_puncture_force,
        "min_vessel_depth": ph.min_vessel_depth,
        "max_vessel_depth": ph.max_vessel_depth,
        "surface": {"x0": hf.x0, "y0": hf.y0, "dx": hf.dx, "dy": hf.dy,
                    "heights": hf.heights.tolist()},
        "layers": [{"name": la.name, "top_depth": la.top_depth,
                    "echogenicity": la.echogenicity,
                    "speckle_variance": la.speckle_variance}
                   for la in ph.layers],
        "vessels": [{"id": v.id, "kind": v.kind.value,
                     "centerline": v.centerline.tolist(), "radius": v.radius,
                     "wall_puncture_force": v.wall_puncture_force,
                     "roll_stiffness": v.roll_stiffness, "max_roll": v.max_roll,
                     "echogenicity": v.echogenicity}
                    for v in ph.vessels],
    }


def phantom_from_dict(d: dict) -> PhantomModel:
    if d.get("format") != PHANTOM_FORMAT:
        raise ValueError(f"unsupported phantom format: {d.get('format')!r}")
    sf = d["surface"]
    return PhantomModel(
        surface=Heightfield(sf["x0"], sf["y0"], sf["dx"], sf["dy"],
                            np.asarray(sf["heights"], float)),
        layers=tuple(TissueLayer(la["name"], la["top_depth"],
                                 la["echogenicity"], la["speckle_variance"])
                     for la in d["layers"]),
        vessels=tuple(Vessel(v["id"], VesselKind(v["kind"]),
                             np.asarray(v["centerline"], float), v["radius"],
                             v["wall_puncture_force"], v["roll_stiffness"],
                             v["max_roll"], v["echogenicity"])
                      for v in d["vessels"]),
        profile=PhantomProfile(d["profile"]),
        skin_stiffness=d["skin_stiffness"],
        skin_puncture_force=d["skin_puncture_force"],
        min_vessel_depth=d.get("min_vessel_depth", 2.0),
        max_vessel_depth=d.get("max_vessel_depth", 80.0),
    )


def save_phantom(ph: PhantomModel, path) -> None:
    with open(path, "w") as f:
        json.dump(phantom_to_dict(ph), f)


def load_phantom(path) -> PhantomModel:
    with open(path) as f:
        return phantom_from_dict(json.load(f))


def phantom_hash(ph: PhantomModel) -> str:
    blob = json.dumps(phantom_to_dict(ph), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
